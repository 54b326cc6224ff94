pub mod bus_script;
pub mod oracle;
