//! Kernel estimates of first-order intensity with adaptive bandwidths.
//!
//! Bandwidths follow Abramson's square-root law around a fixed-bandwidth
//! pilot. The edge correction is the uniform one, computed once per cell with
//! the global bandwidth rather than per point.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, TileGrid};
use crate::patterns::MarkedPointPattern;
use crate::scalar::Scalar;

/// Floor applied to pilot densities before taking powers.
pub const PILOT_FLOOR: f64 = 1e-12;
/// Floor applied to intensities before taking logs for the model offset.
pub const OFFSET_FLOOR: f64 = 1e-12;
/// Kernels are truncated at this many bandwidths.
const KERNEL_CUTOFF: f64 = 5.0;
const EDGE_FLOOR: f64 = 1e-3;

#[inline]
fn gaussian<T: Scalar>(d2: T, h: T) -> T {
    let h2 = h * h;
    (-d2 / (T::lit(2.0) * h2)).exp() / (T::lit(2.0) * T::PI() * h2)
}

/// Scott's rule: `n^(-1/6)` times the mean of the coordinate standard deviations.
pub fn scott_bandwidth<T: Scalar>(points: &[Point2<T>]) -> Option<T> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = T::from_usize_lossy(n);
    let mx = points.iter().map(|p| p.x).sum::<T>() / nf;
    let my = points.iter().map(|p| p.y).sum::<T>() / nf;
    let vx = points.iter().map(|p| (p.x - mx) * (p.x - mx)).sum::<T>() / (nf - T::one());
    let vy = points.iter().map(|p| (p.y - my) * (p.y - my)).sum::<T>() / (nf - T::one());
    let sigma = (vx.sqrt() + vy.sqrt()) * T::lit(0.5);
    let h = nf.powf(T::lit(-1.0 / 6.0)) * sigma;
    (h > T::zero()).then_some(h)
}

/// Global bandwidth plus one bandwidth per point of the mark (pattern order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Bandwidths<T> {
    pub global: T,
    pub per_point: Vec<T>,
}

/// Abramson adaptive bandwidths `h0 * (pilot(u_i) / geometric_mean)^(-1/2)`.
pub fn adaptive_bandwidths<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    global_bandwidth: T,
) -> Result<Bandwidths<T>> {
    if !(global_bandwidth > T::zero()) || !global_bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "global bandwidth {global_bandwidth} must be positive"
        )));
    }
    let pts: Vec<Point2<T>> = pattern.of_mark(mark).copied().collect();
    if pts.is_empty() {
        return Err(Error::EmptyPattern(format!(
            "{}: no points of mark {mark}",
            pattern.id()
        )));
    }
    let h0 = global_bandwidth;
    let cutoff2 = T::lit(KERNEL_CUTOFF * KERNEL_CUTOFF) * h0 * h0;
    let floor = T::lit(PILOT_FLOOR);
    let pilot: Vec<T> = pts
        .iter()
        .map(|p| {
            let s: T = pts
                .iter()
                .map(|q| {
                    let d2 = p.distance_sq(q);
                    if d2 <= cutoff2 {
                        gaussian(d2, h0)
                    } else {
                        T::zero()
                    }
                })
                .sum();
            s.max(floor)
        })
        .collect();
    let nf = T::from_usize_lossy(pts.len());
    let log_geo = pilot.iter().map(|v| v.ln()).sum::<T>() / nf;
    let per_point = pilot
        .iter()
        .map(|v| h0 * ((v.ln() - log_geo) * T::lit(-0.5)).exp())
        .collect();
    Ok(Bandwidths {
        global: h0,
        per_point,
    })
}

/// Piecewise-constant intensity on a tile grid, in points per unit area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IntensitySurface<T> {
    grid: TileGrid<T>,
    values: Vec<T>,
    label: String,
}

impl<T: Scalar> IntensitySurface<T> {
    pub fn new(grid: TileGrid<T>, values: Vec<T>, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidArgument("intensity values must be finite and >= 0".into()));
        }
        Ok(Self {
            grid,
            values,
            label: label.into(),
        })
    }

    pub fn constant(grid: TileGrid<T>, value: T, label: impl Into<String>) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n], label)
    }

    pub fn grid(&self) -> &TileGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Value of the cell nearest to `p`.
    pub fn value_at(&self, p: &Point2<T>) -> T {
        self.values[self.grid.nearest_cell(p)]
    }

    /// `log(max(value, floor))` at `p`, the form used as a model offset.
    pub fn log_offset_at(&self, p: &Point2<T>) -> T {
        self.value_at(p).max(T::lit(OFFSET_FLOOR)).ln()
    }

    /// Integral over the window: sum of value times clipped cell area.
    pub fn integral(&self) -> T {
        self.values
            .iter()
            .zip(self.grid.areas())
            .map(|(v, a)| *v * *a)
            .sum()
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| *v * factor).collect(),
            label: self.label.clone(),
        }
    }

    /// Writes `cell_x,cell_y,value` rows at cell centers.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["cell_x", "cell_y", "value"])?;
        for (idx, v) in self.values.iter().enumerate() {
            let c = self.grid.cell_center(idx);
            wtr.write_record([c.x.to_string(), c.y.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn metadata(&self, bandwidths: Option<&Bandwidths<T>>) -> SurfaceMetadata<T> {
        let (dx, dy) = self.grid.cell_size();
        SurfaceMetadata {
            label: self.label.clone(),
            nx: self.grid.nx(),
            ny: self.grid.ny(),
            origin: [self.grid.origin().x, self.grid.origin().y],
            cell_size: [dx, dy],
            integral: self.integral(),
            bandwidths: bandwidths.cloned(),
        }
    }
}

/// Sidecar JSON describing an exported surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SurfaceMetadata<T> {
    pub label: String,
    pub nx: usize,
    pub ny: usize,
    pub origin: [T; 2],
    pub cell_size: [T; 2],
    pub integral: T,
    pub bandwidths: Option<Bandwidths<T>>,
}

/// Applies `f(cell, kernel_distance_sq)` to every cell within the kernel cutoff of `p`.
fn for_cells_near<T: Scalar>(grid: &TileGrid<T>, p: &Point2<T>, h: T, mut f: impl FnMut(usize, T)) {
    let reach = T::lit(KERNEL_CUTOFF) * h;
    let (dx, dy) = grid.cell_size();
    let o = grid.origin();
    let to_idx = |v: T, n: usize| -> usize {
        if !(v > T::zero()) {
            0
        } else {
            v.to_usize().unwrap_or(n).min(n.saturating_sub(1))
        }
    };
    let i0 = to_idx(((p.x - reach - o.x) / dx).floor(), grid.nx());
    let i1 = to_idx(((p.x + reach - o.x) / dx).floor(), grid.nx());
    let j0 = to_idx(((p.y - reach - o.y) / dy).floor(), grid.ny());
    let j1 = to_idx(((p.y + reach - o.y) / dy).floor(), grid.ny());
    let reach2 = reach * reach;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let idx = j * grid.nx() + i;
            let d2 = grid.cell_center(idx).distance_sq(p);
            if d2 <= reach2 {
                f(idx, d2);
            }
        }
    }
}

/// Uniform edge correction `e(u) = ∫_W K_h(u - v) dv` at every cell center.
pub fn edge_correction<T: Scalar>(grid: &TileGrid<T>, bandwidth: T) -> Vec<T> {
    let mut e = vec![T::zero(); grid.len()];
    for (idx, slot) in e.iter_mut().enumerate() {
        let c = grid.cell_center(idx);
        let mut acc = T::zero();
        for_cells_near(grid, &c, bandwidth, |k, d2| {
            let a = grid.area(k);
            if a > T::zero() {
                acc += a * gaussian(d2, bandwidth);
            }
        });
        *slot = acc.min(T::one()).max(T::lit(EDGE_FLOOR));
    }
    e
}

/// Edge-corrected adaptive kernel estimate of one mark's intensity at cell centers.
pub fn estimate_intensity<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    bandwidths: &Bandwidths<T>,
    grid: &TileGrid<T>,
) -> Result<IntensitySurface<T>> {
    let pts: Vec<Point2<T>> = pattern.of_mark(mark).copied().collect();
    let label = format!("mark {mark}");
    if pts.is_empty() {
        return IntensitySurface::constant(grid.clone(), T::zero(), label);
    }
    if pts.len() != bandwidths.per_point.len() {
        return Err(Error::InvalidArgument(format!(
            "{} bandwidths for {} points",
            bandwidths.per_point.len(),
            pts.len()
        )));
    }
    if bandwidths.per_point.iter().any(|h| !(*h > T::zero())) {
        return Err(Error::InvalidArgument("bandwidths must be positive".into()));
    }
    let mut values = vec![T::zero(); grid.len()];
    for (p, h) in pts.iter().zip(&bandwidths.per_point) {
        for_cells_near(grid, p, *h, |idx, d2| values[idx] += gaussian(d2, *h));
    }
    let e = edge_correction(grid, bandwidths.global);
    for (v, e) in values.iter_mut().zip(&e) {
        *v /= *e;
    }
    IntensitySurface::new(grid.clone(), values, label)
}

/// Convenience: Scott global bandwidth (unless overridden), adaptive bandwidths and estimate.
pub fn estimate_mark_intensity<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    grid: &TileGrid<T>,
    global_override: Option<T>,
) -> Result<(IntensitySurface<T>, Option<Bandwidths<T>>)> {
    let pts: Vec<Point2<T>> = pattern.of_mark(mark).copied().collect();
    if pts.is_empty() {
        return Ok((IntensitySurface::constant(grid.clone(), T::zero(), format!("mark {mark}"))?, None));
    }
    let h0 = match global_override {
        Some(h) => h,
        // Degenerate spreads (one point, coincident points) fall back to an
        // eighth of the window's linear size.
        None => scott_bandwidth(&pts).unwrap_or_else(|| pattern.window().area().sqrt() * T::lit(0.125)),
    };
    let bw = adaptive_bandwidths(pattern, mark, h0)?;
    Ok((estimate_intensity(pattern, mark, &bw, grid)?, Some(bw)))
}

/// Cellwise sum of per-mark surfaces.
pub fn total_intensity<T: Scalar>(surfaces: &[IntensitySurface<T>]) -> Result<IntensitySurface<T>> {
    let first = surfaces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no surfaces to add".into()))?;
    let mut values = vec![T::zero(); first.values.len()];
    for s in surfaces {
        if !s.grid.same_layout(&first.grid) {
            return Err(Error::GridMismatch(format!(
                "surface {:?} does not share the grid of {:?}",
                s.label, first.label
            )));
        }
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += *v;
        }
    }
    IntensitySurface::new(first.grid.clone(), values, "total")
}

/// Total intensity `B(u) = sum_m B_m(u)` of a pattern, each mark with its own Scott bandwidth.
pub fn estimate_total_intensity<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    marks: usize,
    grid: &TileGrid<T>,
    global_override: Option<T>,
) -> Result<IntensitySurface<T>> {
    let per_mark = (0..marks)
        .map(|m| estimate_mark_intensity(pattern, m, grid, global_override).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    total_intensity(&per_mark)
}
