use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value;

use super::wire::{Op, Request, Response};
use super::{Bus, BusError, Envelope, TopicKey, STOPPED_MESSAGE};

const POLL_INTERVAL: Duration = Duration::from_millis(5);
const READ_TIMEOUT: Duration = Duration::from_millis(100);

/// Serves a bus over TCP. Each connection gets its own thread; requests on
/// one connection are answered in order, so clients may pipeline.
pub struct BusServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BusServer {
    /// Binds `addr` and starts accepting. Fails if the address is in use.
    pub fn bind(addr: impl ToSocketAddrs, bus: Arc<dyn Bus>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = shutdown.clone();
        let accept = thread::Builder::new()
            .name(format!("bus-server-{addr}"))
            .spawn(move || accept_loop(listener, bus, flag))?;
        tracing::debug!(%addr, "bus server listening");
        Ok(BusServer {
            addr,
            shutdown,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, bus: Arc<dyn Bus>, shutdown: Arc<AtomicBool>) {
    let mut handlers = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let bus = bus.clone();
                let shutdown = shutdown.clone();
                let spawned = thread::Builder::new()
                    .name(format!("bus-conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, bus.as_ref(), &shutdown) {
                            tracing::debug!(%peer, error = %e, "bus connection closed");
                        }
                    });
                match spawned {
                    Ok(h) => handlers.push(h),
                    Err(e) => tracing::warn!(error = %e, "could not spawn bus connection handler"),
                }
                handlers.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(e) => {
                tracing::warn!(error = %e, "bus accept failed");
                thread::sleep(POLL_INTERVAL);
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

fn serve_connection(stream: TcpStream, bus: &dyn Bus, shutdown: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(READ_TIMEOUT))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if line.last() != Some(&b'\n') {
                    // EOF in the middle of a frame
                    return Ok(());
                }
                let response = handle_frame(bus, &line);
                line.clear();
                let mut out = serde_json::to_vec(&response).map_err(io::Error::other)?;
                out.push(b'\n');
                writer.write_all(&out)?;
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        }
    }
}

fn error_response(e: BusError) -> Response {
    match e {
        BusError::Stopped => Response::error(STOPPED_MESSAGE),
        other => Response::error(other.to_string()),
    }
}

/// Executes one request frame against `bus`.
pub(crate) fn handle_frame(bus: &dyn Bus, frame: &[u8]) -> Response {
    let req: Request = match serde_json::from_slice(frame) {
        Ok(r) => r,
        Err(e) => return Response::error(format!("malformed request: {e}")),
    };
    let key = || -> Result<TopicKey, BusError> {
        let raw = req
            .key
            .clone()
            .ok_or_else(|| BusError::Protocol("missing key".into()))?;
        TopicKey::new(raw)
    };
    let result = match req.op {
        Op::Set => key().and_then(|k| {
            let payload = req
                .payload
                .clone()
                .ok_or_else(|| BusError::Protocol("missing payload".into()))?;
            bus.publish(&k, payload).map(Response::seq)
        }),
        Op::Get => key().and_then(|k| bus.read(&k)).map(|e| Response::envelopes(e.into_iter().collect())),
        Op::Scan => {
            let prefix = req.prefix.as_deref().unwrap_or("");
            match &req.suffix {
                Some(suffix) => bus.scan_suffix(prefix, suffix),
                None => bus.scan(prefix),
            }
            .map(Response::envelopes)
        }
        Op::Stop => bus.raise_stop().map(|()| Response::ok()),
    };
    result.unwrap_or_else(error_response)
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn open(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        Ok(Connection {
            reader: BufReader::new(stream),
            writer,
        })
    }

    fn round_trip(&mut self, req: &Request) -> io::Result<Response> {
        let mut frame = serde_json::to_vec(req).map_err(io::Error::other)?;
        frame.push(b'\n');
        self.writer.write_all(&frame)?;
        let mut line = Vec::new();
        let n = self.reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            return Err(io::Error::new(ErrorKind::UnexpectedEof, "bus server closed the connection"));
        }
        serde_json::from_slice(&line).map_err(|e| io::Error::new(ErrorKind::InvalidData, e))
    }
}

/// Client side of the TCP transport. A broken connection is dropped and
/// re-established on the next call.
pub struct TcpBus {
    addr: SocketAddr,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl TcpBus {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BusError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| BusError::Transport(e.to_string()))?
            .next()
            .ok_or_else(|| BusError::Transport("address resolved to nothing".into()))?;
        let timeout = Duration::from_secs(5);
        let conn = Connection::open(addr, timeout).map_err(|e| BusError::Transport(e.to_string()))?;
        Ok(TcpBus {
            addr,
            timeout,
            conn: Mutex::new(Some(conn)),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn call(&self, req: &Request) -> Result<Response, BusError> {
        let mut guard = self.conn.lock().expect("tcp bus lock poisoned");
        if guard.is_none() {
            *guard = Some(
                Connection::open(self.addr, self.timeout)
                    .map_err(|e| BusError::Transport(e.to_string()))?,
            );
        }
        let conn = guard.as_mut().expect("connection just opened");
        match conn.round_trip(req) {
            Ok(resp) if resp.ok => Ok(resp),
            Ok(resp) => Err(remote_error(resp.error.unwrap_or_default())),
            Err(e) => {
                *guard = None;
                Err(BusError::Transport(e.to_string()))
            }
        }
    }
}

fn remote_error(msg: String) -> BusError {
    if msg == STOPPED_MESSAGE {
        BusError::Stopped
    } else {
        BusError::Remote(msg)
    }
}

impl Bus for TcpBus {
    fn publish(&self, key: &TopicKey, payload: Value) -> Result<u64, BusError> {
        if key.as_str() == TopicKey::STOP {
            return Err(BusError::ReservedKey(key.to_string()));
        }
        self.call(&Request::set(key.as_str(), payload))?
            .seq
            .ok_or_else(|| BusError::Protocol("set response without seq".into()))
    }

    fn read(&self, key: &TopicKey) -> Result<Option<Envelope>, BusError> {
        let mut envs = self
            .call(&Request::get(key.as_str()))?
            .envelopes
            .ok_or_else(|| BusError::Protocol("get response without envelopes".into()))?;
        if envs.len() > 1 {
            return Err(BusError::Protocol("get returned several envelopes".into()));
        }
        Ok(envs.pop())
    }

    fn scan(&self, prefix: &str) -> Result<Vec<Envelope>, BusError> {
        self.call(&Request::scan(prefix))?
            .envelopes
            .ok_or_else(|| BusError::Protocol("scan response without envelopes".into()))
    }

    fn scan_suffix(&self, prefix: &str, suffix: &str) -> Result<Vec<Envelope>, BusError> {
        self.call(&Request::scan_suffix(prefix, suffix))?
            .envelopes
            .ok_or_else(|| BusError::Protocol("scan response without envelopes".into()))
    }

    fn raise_stop(&self) -> Result<(), BusError> {
        self.call(&Request::stop()).map(|_| ())
    }

    fn stop_requested(&self) -> Result<bool, BusError> {
        Ok(self
            .read(&TopicKey::stop())?
            .is_some_and(|e| *e.payload == Value::Bool(true)))
    }
}
