//! Inhomogeneous cross-type K and L functions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PolygonalWindow, Point2};
use crate::intensity::{IntensitySurface, OFFSET_FLOOR};
use crate::interactions::NeighborGrid;
use crate::patterns::{MarkSet, MarkedPoint, MarkedPointPattern};
use crate::scalar::Scalar;

/// Default number of steps in the distance grid.
pub const DEFAULT_R_STEPS: usize = 512;
/// Trailing window, in grid steps, of the range heuristic.
pub const STABILITY_WINDOW: usize = 5;
/// Slope of `|L(r) - r|` below which the pooled curve counts as stable.
pub const STABILITY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    K,
    L,
}

/// A K or L curve for the ordered mark pair `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SummaryFunction<T> {
    pub i: usize,
    pub j: usize,
    pub kind: SummaryKind,
    pub r: Vec<T>,
    pub values: Vec<T>,
    /// No point of type `i` or `j` was present; values are all zero.
    pub empty: bool,
    pub pooled: bool,
}

/// `steps` equal steps from 0 to a quarter of the window diameter.
pub fn default_r_grid<T: Scalar>(window: &PolygonalWindow<T>, steps: usize) -> Vec<T> {
    let rmax = window.diameter() * T::lit(0.25);
    let n = T::from_usize_lossy(steps.max(1));
    (0..=steps.max(1)).map(|k| rmax * T::from_usize_lossy(k) / n).collect()
}

fn check_grid<T: Scalar>(rgrid: &[T]) -> Result<()> {
    if rgrid.is_empty() || rgrid[0] < T::zero() || rgrid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "distance grid must be nonempty, nonnegative and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Translation-corrected inhomogeneous cross K function.
///
/// Each ordered pair of distinct points `(x in X_i, y in X_j)` at distance
/// `d` contributes `1 / (B_i(x) B_j(y) |W ∩ (W + y - x)|)` to every `r >= d`.
pub fn k_inhom_cross<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    i: usize,
    j: usize,
    bi: &IntensitySurface<T>,
    bj: &IntensitySurface<T>,
    rgrid: &[T],
) -> Result<SummaryFunction<T>> {
    check_grid(rgrid)?;
    let xi: Vec<(usize, Point2<T>)> = pattern
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.mark == i)
        .map(|(k, p)| (k, p.location))
        .collect();
    let xj: Vec<MarkedPoint<T>> = pattern.points().iter().filter(|p| p.mark == j).copied().collect();
    let xj_ids: Vec<usize> = pattern
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.mark == j)
        .map(|(k, _)| k)
        .collect();
    let mut out = SummaryFunction {
        i,
        j,
        kind: SummaryKind::K,
        r: rgrid.to_vec(),
        values: vec![T::zero(); rgrid.len()],
        empty: xi.is_empty() || xj.is_empty(),
        pooled: false,
    };
    if out.empty {
        log::warn!("{}: no points for pair ({i}, {j}); K set to zero", pattern.id());
        return Ok(out);
    }
    let floor = T::lit(OFFSET_FLOOR);
    let bj_at: Vec<T> = xj.iter().map(|p| bj.value_at(&p.location).max(floor)).collect();
    let rmax = *rgrid.last().unwrap();
    let index = NeighborGrid::from_points(&xj, rmax);
    let window = pattern.window();
    let mut buckets = vec![T::zero(); rgrid.len()];
    for (id_l, u) in &xi {
        let b_l = bi.value_at(u).max(floor);
        index.for_each_within(u, rmax, |k, q, d| {
            if xj_ids[k] == *id_l {
                return;
            }
            let overlap = window.translated_overlap_area(q.location.x - u.x, q.location.y - u.y);
            if !(overlap > T::zero()) {
                return;
            }
            let slot = rgrid.partition_point(|r| *r < d);
            if slot < buckets.len() {
                buckets[slot] += T::one() / (b_l * bj_at[k] * overlap);
            }
        });
    }
    let mut acc = T::zero();
    for (v, b) in out.values.iter_mut().zip(&buckets) {
        acc += *b;
        *v = acc;
    }
    Ok(out)
}

/// `L(r) = sqrt(K(r) / pi)`.
pub fn l_from_k<T: Scalar>(k: &SummaryFunction<T>) -> SummaryFunction<T> {
    SummaryFunction {
        kind: SummaryKind::L,
        values: k.values.iter().map(|v| (v.max(T::zero()) / T::PI()).sqrt()).collect(),
        ..k.clone()
    }
}

/// Pointwise mean of the non-empty curves.
pub fn pool_functions<T: Scalar>(per_patient: &[SummaryFunction<T>]) -> Result<SummaryFunction<T>> {
    let first = per_patient
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to pool".into()))?;
    if per_patient
        .iter()
        .any(|f| f.r != first.r || f.i != first.i || f.j != first.j || f.kind != first.kind)
    {
        return Err(Error::GridMismatch("pooled curves must share pair, kind and r grid".into()));
    }
    let live: Vec<_> = per_patient.iter().filter(|f| !f.empty).collect();
    if live.is_empty() {
        return Err(Error::AllEmpty(first.i, first.j));
    }
    let n = T::from_usize_lossy(live.len());
    let values = (0..first.r.len())
        .map(|k| live.iter().map(|f| f.values[k]).sum::<T>() / n)
        .collect();
    Ok(SummaryFunction {
        values,
        empty: false,
        pooled: true,
        ..first.clone()
    })
}

/// K functions of every pair `i <= j` of one pattern.
pub fn pattern_k_functions<T: Scalar>(
    pattern: &MarkedPointPattern<T>,
    surfaces: &[IntensitySurface<T>],
    rgrid: &[T],
) -> Result<Vec<SummaryFunction<T>>> {
    let m = surfaces.len();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            out.push(k_inhom_cross(pattern, i, j, &surfaces[i], &surfaces[j], rgrid)?);
        }
    }
    Ok(out)
}

/// Smallest `r` from which the trailing slope of `|L(r) - r|` stays below
/// [`STABILITY_SLOPE`]; the last grid value when it never settles.
pub fn stability_onset<T: Scalar>(l: &SummaryFunction<T>) -> T {
    let n = l.r.len();
    let w = STABILITY_WINDOW;
    let last = *l.r.last().expect("nonempty grid");
    if n <= w {
        return last;
    }
    let dev: Vec<T> = l.r.iter().zip(&l.values).map(|(r, v)| (*v - *r).abs()).collect();
    let slope = |k: usize| ((dev[k] - dev[k - w]) / (l.r[k] - l.r[k - w])).abs();
    let threshold = T::lit(STABILITY_SLOPE);
    let mut onset = None;
    for k in w..n {
        if slope(k) < threshold {
            onset.get_or_insert(l.r[k]);
        } else {
            onset = None;
        }
    }
    onset.unwrap_or(last)
}

/// Interaction-range suggestion: the latest stability onset over the pooled L curves.
pub fn suggest_max_range<T: Scalar>(pooled_l: &[SummaryFunction<T>]) -> Option<T> {
    pooled_l
        .iter()
        .filter(|f| !f.empty)
        .map(stability_onset)
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
}

/// Writes `pair,r,K,L` rows; `label` names the series (patient id or `pooled`).
pub fn write_summary_csv<T: Scalar, W: Write>(
    writer: W,
    marks: &MarkSet,
    series: &[(String, Vec<SummaryFunction<T>>)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["series", "pair", "r", "K", "L", "empty"])?;
    for (label, curves) in series {
        for k in curves {
            let l = l_from_k(k);
            let pair = format!("{}:{}", marks.label(k.i), marks.label(k.j));
            for (idx, r) in k.r.iter().enumerate() {
                wtr.write_record([
                    label.clone(),
                    pair.clone(),
                    r.to_string(),
                    k.values[idx].to_string(),
                    l.values[idx].to_string(),
                    k.empty.to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
