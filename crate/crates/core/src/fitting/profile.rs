//! Profile pseudolikelihood over interaction ranges and slopes.
//!
//! The search is coordinate ascent over mark pairs: each pair in turn is
//! scanned over the whole `(R, gamma)` grid with the other pairs held fixed,
//! for at most [`MAX_SWEEPS`] rounds. It finds a coordinatewise maximum, not
//! necessarily the global maximum over the product grid.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions::InteractionSpec;
use crate::patterns::Cohort;
use crate::scalar::Scalar;

use super::{fit_prepared, prepare_cohort, FitConfig, PreparedCohort};

pub const MAX_SWEEPS: usize = 5;

/// One grid evaluation. `log_pl` is `-inf` when the inner fit failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEvaluation {
    pub sweep: usize,
    pub pair: (usize, usize),
    pub range: f64,
    pub slope: Option<f64>,
    pub log_pl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ProfileResult<T> {
    pub spec: InteractionSpec<T>,
    pub log_pl: f64,
    pub trace: Vec<ProfileEvaluation>,
    pub sweeps: usize,
    pub border: T,
}

impl<T: Scalar> ProfileResult<T> {
    /// Trace as CSV: `sweep,pair_i,pair_j,range,slope,log_pl`.
    pub fn write_trace_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["sweep", "pair_i", "pair_j", "range", "slope", "log_pl"])?;
        for e in &self.trace {
            wtr.write_record([
                e.sweep.to_string(),
                e.pair.0.to_string(),
                e.pair.1.to_string(),
                e.range.to_string(),
                e.slope.map_or(String::new(), |s| s.to_string()),
                e.log_pl.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn key<T: Scalar>(spec: &InteractionSpec<T>) -> Vec<u64> {
    let mut k = Vec::new();
    for m in [spec.range_matrix(), spec.slope_matrix()].into_iter().flatten() {
        k.extend(m.rows().iter().flatten().map(|v| v.as_f64().to_bits()));
    }
    k
}

fn nearest<T: Scalar>(grid: &[T], v: T) -> T {
    grid.iter()
        .copied()
        .fold(grid[0], |best, g| if (g - v).abs() < (best - v).abs() { g } else { best })
}

fn score<T: Scalar>(prepared: &PreparedCohort<T>, spec: &InteractionSpec<T>) -> f64 {
    let cfg = &prepared.config;
    match fit_prepared(prepared, spec, cfg.use_offset, cfg.use_covariates, "profile") {
        Ok(m) if m.log_pl.is_finite() => m.log_pl,
        Ok(_) => {
            log::warn!("profile: non-finite log-PL at {:?}", key_display(spec));
            f64::NEG_INFINITY
        }
        Err(e) => {
            log::warn!("profile: fit failed at {:?}: {e}", key_display(spec));
            f64::NEG_INFINITY
        }
    }
}

fn key_display<T: Scalar>(spec: &InteractionSpec<T>) -> (Option<Vec<Vec<T>>>, Option<Vec<Vec<T>>>) {
    (spec.range_matrix().map(|m| m.rows()), spec.slope_matrix().map(|m| m.rows()))
}

/// Maximizes the profile pseudolikelihood over `r_grid x gamma_grid` per pair.
///
/// The template fixes the kind, hardcore distances and starting values; the
/// start is the template snapped to the nearest grid values. Kinds without a
/// slope search `r_grid` only. The integration domain is fixed for the whole
/// search (border = configured or the largest candidate distance) so that all
/// evaluations are comparable.
pub fn profile_pl<T: Scalar>(
    cohort: &Cohort<T>,
    template: &InteractionSpec<T>,
    r_grid: &[T],
    gamma_grid: &[T],
    config: &FitConfig<T>,
) -> Result<ProfileResult<T>> {
    if r_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidArgument("profile grids must be nonempty".into()));
    }
    if r_grid.iter().chain(gamma_grid).any(|v| !v.is_finite()) || r_grid.iter().any(|r| *r <= T::zero()) {
        return Err(Error::InvalidArgument("profile grids must be finite with positive ranges".into()));
    }
    let has_slope = template.slope_matrix().is_some();
    let pairs = template.pairs();
    let mut start = template.clone();
    for &(i, j) in &pairs {
        let r = template.range_matrix().map_or(r_grid[0], |m| nearest(r_grid, m.get(i, j)));
        let g = template.slope_matrix().map(|m| nearest(gamma_grid, m.get(i, j)));
        start = start.with_pair(i, j, r, g)?;
    }
    let r_max = r_grid.iter().copied().fold(T::zero(), T::max);
    let radius = r_max.max(template.search_radius());
    let mut cfg = config.clone();
    cfg.border = Some(config.border.unwrap_or(radius));
    let prepared = prepare_cohort(cohort, &cfg, radius, cfg.use_offset, cfg.use_covariates)?;

    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let mut trace = Vec::new();
    let mut current = start;
    let mut current_score = score(&prepared, &current);
    cache.insert(key(&current), current_score);
    let record = |sweep: usize, pair: (usize, usize), spec: &InteractionSpec<T>, log_pl: f64| ProfileEvaluation {
        sweep,
        pair,
        range: spec.range_matrix().map_or(f64::NAN, |m| m.get(pair.0, pair.1).as_f64()),
        slope: spec.slope_matrix().map(|m| m.get(pair.0, pair.1).as_f64()),
        log_pl,
    };
    if let Some(&p) = pairs.first() {
        trace.push(record(0, p, &current, current_score));
    }
    let mut sweeps = 0;
    for sweep in 1..=MAX_SWEEPS {
        if pairs.is_empty() {
            break;
        }
        sweeps = sweep;
        let mut changed = false;
        for &(i, j) in &pairs {
            let candidates: Vec<InteractionSpec<T>> = r_grid
                .iter()
                .flat_map(|&r| {
                    let slopes: Vec<Option<T>> = if has_slope {
                        gamma_grid.iter().map(|&g| Some(g)).collect()
                    } else {
                        vec![None]
                    };
                    let cur = &current;
                    slopes.into_iter().filter_map(move |g| match cur.with_pair(i, j, r, g) {
                        Ok(s) => Some(s),
                        Err(e) => {
                            log::warn!("profile: skipping R={r} for pair ({i},{j}): {e}");
                            None
                        }
                    })
                })
                .collect();
            let fresh: Vec<(Vec<u64>, f64)> = candidates
                .par_iter()
                .filter(|c| !cache.contains_key(&key(c)))
                .map(|c| (key(c), score(&prepared, c)))
                .collect();
            cache.extend(fresh);
            let mut best: Option<(&InteractionSpec<T>, f64)> = None;
            for c in &candidates {
                let s = cache[&key(c)];
                trace.push(record(sweep, (i, j), c, s));
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
            if let Some((spec, s)) = best {
                if s > current_score {
                    current = spec.clone();
                    current_score = s;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    if !current_score.is_finite() {
        return Err(Error::InvalidArgument("every profile grid point failed to fit".into()));
    }
    Ok(ProfileResult {
        spec: current,
        log_pl: current_score,
        trace,
        sweeps,
        border: cfg.border.unwrap_or(radius),
    })
}
