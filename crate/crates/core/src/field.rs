//! Local perception maps built by field modulation.
//!
//! Every agent renders an agent-centered square grid. Neighbors deposit
//! truncated negative gaussian bumps, points of interest deposit positive
//! ones, overlaps add up, and cells that fall outside the arena are
//! overwritten with a flat penalty.
//!
//! The map is first computed on a `clip_factor`-times larger grid with the
//! same cell pitch and then cropped to the central window, so bumps whose
//! centers lie outside the final window still leak into it.

use crate::model::{FieldMap, Position2D, SpaceLimits};

/// Distances within this many meters of the modulation radius count as inside.
/// Keeps the hard cutoff stable against last-ulp differences in how a
/// distance was computed.
pub const CUTOFF_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("vicinity must be positive and finite, got {0}")]
    Vicinity(f64),
    #[error("field size must be a positive multiple of 3, got {0}")]
    FieldSize(usize),
    #[error("clip factor must be >= 1, got {0}")]
    ClipFactor(f64),
    #[error("modulation radius must be positive, got {0}")]
    Radius(f64),
    #[error("negative amplitude magnitude ({negative}) must exceed positive amplitude ({positive})")]
    Dominance { negative: f64, positive: f64 },
}

/// Parameters of field modulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationParams {
    /// Half-side of the final window in meters.
    pub vicinity: f64,
    /// Cells per side of the final window.
    pub field_size: usize,
    /// Multiplier of the window used while depositing modulations.
    pub clip_factor: f64,
    /// Peak of a neighbor bump (negative).
    pub negative_amplitude: f64,
    /// Peak of a point-of-interest bump.
    pub positive_amplitude: f64,
    /// Bumps are exactly zero beyond this distance, in meters.
    pub modulation_radius: f64,
    /// Value written into cells outside the arena limits.
    pub boundary_value: f64,
}

impl Default for ModulationParams {
    fn default() -> Self {
        ModulationParams {
            vicinity: 0.5,
            field_size: 84,
            clip_factor: 2.0,
            negative_amplitude: -1.5,
            positive_amplitude: 1.0,
            modulation_radius: 0.5,
            boundary_value: -1.0,
        }
    }
}

impl ModulationParams {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.vicinity.is_finite() && self.vicinity > 0.0) {
            return Err(FieldError::Vicinity(self.vicinity));
        }
        if self.field_size == 0 || !self.field_size.is_multiple_of(3) {
            return Err(FieldError::FieldSize(self.field_size));
        }
        if !(self.clip_factor.is_finite() && self.clip_factor >= 1.0) {
            return Err(FieldError::ClipFactor(self.clip_factor));
        }
        if !(self.modulation_radius.is_finite() && self.modulation_radius > 0.0) {
            return Err(FieldError::Radius(self.modulation_radius));
        }
        let dominant = self.negative_amplitude.abs() > self.positive_amplitude;
        if !dominant {
            return Err(FieldError::Dominance {
                negative: self.negative_amplitude,
                positive: self.positive_amplitude,
            });
        }
        Ok(())
    }

    /// Cell side in meters, shared by the final and the extended grid.
    pub fn pitch(&self) -> f64 {
        2.0 * self.vicinity / self.field_size as f64
    }

    /// Side of the extended grid. Grows the final grid by an even number of
    /// cells so the crop is centered exactly.
    pub fn extended_size(&self) -> usize {
        let margin = (self.field_size as f64 * (self.clip_factor - 1.0) / 2.0).round() as usize;
        self.field_size + 2 * margin
    }

    /// Half-side of the extended grid in meters.
    pub fn extended_extent(&self) -> f64 {
        self.vicinity * self.extended_size() as f64 / self.field_size as f64
    }

    /// Offset of the final window inside the extended grid, in cells.
    pub fn crop_offset(&self) -> usize {
        (self.extended_size() - self.field_size) / 2
    }

    /// Whether a relative offset falls inside the extended window (per-axis box test).
    pub fn in_extended_window(&self, dx: f64, dy: f64) -> bool {
        let e = self.extended_extent();
        dx.abs() <= e && dy.abs() <= e
    }
}

/// Truncated gaussian: `amplitude * exp(-d^2 / (2 sigma^2))` with
/// `sigma = radius / 3`, and exactly zero beyond `radius`.
pub fn gaussian_contribution(distance: f64, amplitude: f64, radius: f64) -> f64 {
    if distance > radius + CUTOFF_SLACK {
        return 0.0;
    }
    let sigma = radius / 3.0;
    amplitude * (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

/// Cell holding a relative offset on a grid of `size` cells spanning
/// `[-extent, extent]` per axis. Offsets beyond the edges clamp to the border.
pub fn project_to_grid(relative: (f64, f64), extent: f64, size: usize) -> (usize, usize) {
    let axis = |d: f64| -> usize {
        let raw = ((d + extent) / (2.0 * extent) * size as f64).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(size - 1)
        }
    };
    (axis(relative.0), axis(relative.1))
}

/// Unit-amplitude gaussian sampled on integer cell offsets. Values depend only
/// on `(|di|, |dj|)`, so one quadrant is enough.
#[derive(Debug, Clone)]
struct Kernel {
    reach: usize,
    weights: Vec<f64>,
}

impl Kernel {
    fn new(params: &ModulationParams) -> Self {
        let pitch = params.pitch();
        let reach = ((params.modulation_radius + CUTOFF_SLACK) / pitch).floor() as usize;
        let side = reach + 1;
        let mut weights = vec![0.0; side * side];
        for di in 0..side {
            for dj in 0..side {
                let d = pitch * (di as f64).hypot(dj as f64);
                weights[di * side + dj] = gaussian_contribution(d, 1.0, params.modulation_radius);
            }
        }
        Kernel { reach, weights }
    }

    #[inline]
    fn weight(&self, di: usize, dj: usize) -> f64 {
        self.weights[di * (self.reach + 1) + dj]
    }
}

/// Builds an agent's perception map.
///
/// `neighbors` receive the negative amplitude, `points_of_interest` the
/// positive one. Points outside the extended window are ignored. Cells whose
/// world position lies outside `limits` are overwritten with
/// `params.boundary_value` after all modulations are summed.
///
/// Panics if `params` fails [`ModulationParams::validate`].
pub fn build_field(
    self_pos: Position2D,
    neighbors: &[Position2D],
    points_of_interest: &[Position2D],
    limits: &SpaceLimits,
    params: &ModulationParams,
) -> FieldMap {
    if let Err(e) = params.validate() {
        panic!("invalid modulation parameters: {e}");
    }
    FieldBuilder::new(*params).build(self_pos, neighbors, points_of_interest, limits)
}

/// Reusable field builder that caches the gaussian kernel between calls.
#[derive(Debug, Clone)]
pub struct FieldBuilder {
    params: ModulationParams,
    kernel: Kernel,
}

impl FieldBuilder {
    pub fn new(params: ModulationParams) -> Self {
        let kernel = Kernel::new(&params);
        FieldBuilder { params, kernel }
    }

    pub fn params(&self) -> &ModulationParams {
        &self.params
    }

    pub fn build(
        &self,
        self_pos: Position2D,
        neighbors: &[Position2D],
        points_of_interest: &[Position2D],
        limits: &SpaceLimits,
    ) -> FieldMap {
        let p = &self.params;
        let size = p.field_size;
        let mut map = FieldMap::zeros(size, p.vicinity);

        let sources = neighbors
            .iter()
            .map(|n| (n, p.negative_amplitude))
            .chain(points_of_interest.iter().map(|q| (q, p.positive_amplitude)));
        for (point, amplitude) in sources {
            self.deposit(&mut map, self_pos.delta_to(point), amplitude);
        }

        self.apply_boundary(&mut map, self_pos, limits);
        map
    }

    fn deposit(&self, map: &mut FieldMap, (dx, dy): (f64, f64), amplitude: f64) {
        let p = &self.params;
        if !p.in_extended_window(dx, dy) {
            return;
        }
        let ext_size = p.extended_size();
        let (ci, cj) = project_to_grid((dx, dy), p.extended_extent(), ext_size);
        let offset = p.crop_offset();
        let reach = self.kernel.reach;

        // Intersect the bump's square support with the cropped window, in
        // extended-grid coordinates.
        let lo = |c: usize| c.saturating_sub(reach).max(offset);
        let hi = |c: usize| (c + reach).min(offset + p.field_size - 1);
        let (i_lo, i_hi, j_lo, j_hi) = (lo(ci), hi(ci), lo(cj), hi(cj));
        if i_lo > i_hi || j_lo > j_hi {
            return;
        }
        for ei in i_lo..=i_hi {
            let di = ei.abs_diff(ci);
            for ej in j_lo..=j_hi {
                let w = self.kernel.weight(di, ej.abs_diff(cj));
                if w != 0.0 {
                    map.add(ei - offset, ej - offset, amplitude * w);
                }
            }
        }
    }

    fn apply_boundary(&self, map: &mut FieldMap, self_pos: Position2D, limits: &SpaceLimits) {
        let size = map.size;
        // Compare in agent-relative coordinates so the result only depends on
        // relative geometry.
        let rel = limits.translated(-self_pos.x, -self_pos.y);
        let outside_row: Vec<bool> = (0..size)
            .map(|i| {
                let (ox, _) = map.cell_offset(i, 0);
                ox < rel.x_min || ox > rel.x_max
            })
            .collect();
        let outside_col: Vec<bool> = (0..size)
            .map(|j| {
                let (_, oy) = map.cell_offset(0, j);
                oy < rel.y_min || oy > rel.y_max
            })
            .collect();
        if !outside_row.iter().chain(&outside_col).any(|&o| o) {
            return;
        }
        let value = self.params.boundary_value;
        for (i, &row_out) in outside_row.iter().enumerate() {
            for (j, &col_out) in outside_col.iter().enumerate() {
                if row_out || col_out {
                    map.set(i, j, value);
                }
            }
        }
    }
}
