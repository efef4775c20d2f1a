//! Weighted Poisson regression with log link by iteratively reweighted least squares.
//!
//! Normal equations are accumulated and solved in `f64` whatever the scalar
//! type of the design. Row chunks are reduced in a fixed order, so results do
//! not depend on the number of threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::design::DesignBlock;

const CHUNK: usize = 2048;
const MAX_HALVINGS: usize = 30;
/// Relative residual variance below which a column counts as aliased.
const ALIAS_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub max_iterations: usize,
    /// Relative deviance change at which iteration stops.
    pub tolerance: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrlsFit {
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information, row-major.
    pub covariance: Vec<f64>,
    pub deviance: f64,
    /// Maximised `sum w (y log mu - mu)`, obtained from the deviance.
    pub log_pl: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

impl IrlsFit {
    pub fn std_errors(&self) -> Vec<f64> {
        let p = self.coefficients.len();
        (0..p).map(|k| self.covariance[k * p + k].max(0.0).sqrt()).collect()
    }
}

struct Pass {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    deviance: f64,
}

impl Pass {
    fn zero(p: usize) -> Self {
        Self {
            gram: vec![0.0; p * p],
            rhs: vec![0.0; p],
            deviance: 0.0,
        }
    }

    fn add(&mut self, other: &Pass) {
        self.gram.iter_mut().zip(&other.gram).for_each(|(a, b)| *a += b);
        self.rhs.iter_mut().zip(&other.rhs).for_each(|(a, b)| *a += b);
        self.deviance += other.deviance;
    }
}

#[inline]
fn unit_deviance(y: f64, mu: f64) -> f64 {
    let t = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    2.0 * (t - (y - mu))
}

/// Linear predictor source for one pass.
#[derive(Clone, Copy)]
enum Start<'a> {
    /// `mu = (y + ybar) / 2`.
    Response(f64),
    Coefficients(&'a [f64]),
}

fn accumulate<T: Scalar>(blocks: &[DesignBlock<T>], p: usize, start: Start<'_>) -> Pass {
    let partials: Vec<Pass> = blocks
        .iter()
        .flat_map(|b| (0..b.rows().div_ceil(CHUNK)).map(move |c| (b, c)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(b, c)| {
            let mut acc = Pass::zero(p);
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(b.rows());
            let mut xr = vec![0.0; p];
            for k in lo..hi {
                if b.excluded[k] {
                    continue;
                }
                let w = b.weight[k].as_f64();
                let y = b.response[k].as_f64();
                let off = b.offset[k].as_f64();
                for (dst, src) in xr.iter_mut().zip(&b.x[k * p..(k + 1) * p]) {
                    *dst = src.as_f64();
                }
                let (eta, mu) = match start {
                    Start::Response(ybar) => {
                        let mu = 0.5 * (y + ybar);
                        (mu.ln(), mu)
                    }
                    Start::Coefficients(beta) => {
                        let eta = off + xr.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                        (eta, eta.exp())
                    }
                };
                acc.deviance += w * unit_deviance(y, mu);
                let ww = w * mu;
                let z = eta - off + (y - mu) / mu;
                for i in 0..p {
                    if xr[i] == 0.0 {
                        continue;
                    }
                    let wi = ww * xr[i];
                    acc.rhs[i] += wi * z;
                    for j in 0..=i {
                        acc.gram[i * p + j] += wi * xr[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Pass::zero(p);
    for part in &partials {
        total.add(part);
    }
    for i in 0..p {
        for j in 0..i {
            total.gram[j * p + i] = total.gram[i * p + j];
        }
    }
    total
}

/// Columns that are (numerically) linear combinations of earlier ones.
///
/// Works on the correlation form of the Gram matrix so that columns on very
/// different scales (days next to 0/1 indicators) do not swamp each other.
fn aliased_columns(gram: &[f64], p: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut aliased = Vec::new();
    let scale: Vec<f64> = (0..p).map(|k| gram[k * p + k].sqrt()).collect();
    let corr = |a: usize, b: usize| gram[a * p + b] / (scale[a] * scale[b]);
    for k in 0..p {
        let gkk = gram[k * p + k];
        if !(gkk > 0.0) || !gkk.is_finite() {
            aliased.push(k);
            continue;
        }
        let residual = if kept.is_empty() {
            1.0
        } else {
            let s = DMatrix::from_fn(kept.len(), kept.len(), |a, b| corr(kept[a], kept[b]));
            let g = DVector::from_fn(kept.len(), |a, _| corr(kept[a], k));
            match s.cholesky() {
                Some(ch) => 1.0 - g.dot(&ch.solve(&g)),
                None => 0.0,
            }
        };
        if residual < ALIAS_TOLERANCE {
            aliased.push(k);
        } else {
            kept.push(k);
        }
    }
    aliased
}

fn solve(gram: &[f64], rhs: &[f64], p: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let g = DMatrix::from_row_slice(p, p, gram);
    let ch = g.cholesky()?;
    let beta = ch.solve(&DVector::from_column_slice(rhs));
    Some((beta.iter().copied().collect(), ch.inverse()))
}

/// `sum w (y log y - y)`, the saturated part of the log pseudolikelihood.
fn saturated_term<T: Scalar>(blocks: &[DesignBlock<T>]) -> f64 {
    blocks
        .iter()
        .flat_map(|b| (0..b.rows()).map(move |k| (b, k)))
        .filter(|(b, k)| !b.excluded[*k])
        .map(|(b, k)| {
            let y = b.response[k].as_f64();
            let w = b.weight[k].as_f64();
            if y > 0.0 {
                w * (y * y.ln() - y)
            } else {
                0.0
            }
        })
        .sum()
}

/// Maximises the pooled weighted Poisson log likelihood of `blocks`.
pub fn irls_fit<T: Scalar>(blocks: &[DesignBlock<T>], names: &[String], options: &IrlsOptions) -> Result<IrlsFit> {
    let p = names.len();
    if blocks.iter().any(|b| b.columns != p) {
        return Err(Error::InvalidArgument(format!("design blocks must have {p} columns")));
    }
    let (mut wsum, mut ysum) = (0.0, 0.0);
    for b in blocks {
        for k in 0..b.rows() {
            if !b.excluded[k] {
                wsum += b.weight[k].as_f64();
                ysum += (b.weight[k] * b.response[k]).as_f64();
            }
        }
    }
    if !(wsum > 0.0) || !(ysum > 0.0) {
        return Err(Error::DegenerateModel("no data points in the integration domain".into()));
    }
    let tolerance = options.tolerance.max(100.0 * T::epsilon().as_f64());
    let mut pass = accumulate(blocks, p, Start::Response(ysum / wsum));
    let aliased = aliased_columns(&pass.gram, p);
    if !aliased.is_empty() {
        return Err(Error::SingularDesign(aliased.into_iter().map(|k| names[k].clone()).collect()));
    }
    let mut deviance = pass.deviance;
    let mut beta: Option<Vec<f64>> = None;
    let mut trace = vec![deviance];
    for iteration in 1..=options.max_iterations {
        let (mut candidate, _) = solve(&pass.gram, &pass.rhs, p).ok_or_else(|| {
            Error::SingularDesign(aliased_columns(&pass.gram, p).into_iter().map(|k| names[k].clone()).collect())
        })?;
        let mut next = accumulate(blocks, p, Start::Coefficients(&candidate));
        // Step halving towards the previous iterate on divergence.
        if let Some(prev) = &beta {
            let mut halvings = 0;
            while !(next.deviance.is_finite() && next.deviance <= deviance * (1.0 + 1e-12) + 1e-12) {
                if halvings == MAX_HALVINGS {
                    return Err(Error::NonConvergence { iterations: iteration, trace });
                }
                for (c, b) in candidate.iter_mut().zip(prev) {
                    *c = 0.5 * (*c + b);
                }
                next = accumulate(blocks, p, Start::Coefficients(&candidate));
                halvings += 1;
            }
        } else if !next.deviance.is_finite() {
            return Err(Error::NonConvergence { iterations: iteration, trace });
        }
        let change = (next.deviance - deviance).abs() / (next.deviance.abs() + 0.1);
        deviance = next.deviance;
        trace.push(deviance);
        beta = Some(candidate);
        pass = next;
        if change < tolerance {
            let beta = beta.expect("set above");
            let (_, inverse) = solve(&pass.gram, &pass.rhs, p).ok_or_else(|| {
                Error::SingularDesign(aliased_columns(&pass.gram, p).into_iter().map(|k| names[k].clone()).collect())
            })?;
            let covariance = (0..p * p).map(|k| inverse[(k / p, k % p)]).collect();
            return Ok(IrlsFit {
                log_pl: saturated_term(blocks) - 0.5 * deviance,
                coefficients: beta,
                covariance,
                deviance,
                iterations: iteration,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        trace,
    })
}

/// Direct evaluation of `sum w (y log lambda - lambda)` at `beta`.
///
/// Excluded rows have zero intensity and contribute nothing.
pub fn log_pseudolikelihood<T: Scalar>(blocks: &[DesignBlock<T>], beta: &[f64]) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let p = b.columns;
            (0..b.rows())
                .filter(|k| !b.excluded[*k])
                .map(|k| {
                    let eta = b.offset[k].as_f64()
                        + b.x[k * p..(k + 1) * p]
                            .iter()
                            .zip(beta)
                            .map(|(x, c)| x.as_f64() * c)
                            .sum::<f64>();
                    let w = b.weight[k].as_f64();
                    let y = b.response[k].as_f64();
                    let data = if y > 0.0 { w * y * eta } else { 0.0 };
                    data - w * eta.exp()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Two-sided Wald p-value.
pub fn wald_p_value(estimate: f64, std_error: f64) -> f64 {
    if !(std_error > 0.0) {
        return f64::NAN;
    }
    statrs::function::erf::erfc((estimate / std_error).abs() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(x: Vec<Vec<f64>>, y: Vec<f64>, w: Vec<f64>, offset: Vec<f64>) -> DesignBlock<f64> {
        let n = y.len();
        DesignBlock {
            columns: x[0].len(),
            x: x.into_iter().flatten().collect(),
            response: y,
            weight: w,
            offset,
            excluded: vec![false; n],
            is_data: vec![false; n],
        }
    }

    /// Independent oracle: plain Newton–Raphson on the same objective.
    fn newton(b: &DesignBlock<f64>) -> Vec<f64> {
        let p = b.columns;
        let mut beta = vec![0.0; p];
        for _ in 0..200 {
            let mut g = DVector::<f64>::zeros(p);
            let mut h = DMatrix::<f64>::zeros(p, p);
            for k in 0..b.rows() {
                let x = &b.x[k * p..(k + 1) * p];
                let mu = (b.offset[k] + x.iter().zip(&beta).map(|(a, c)| a * c).sum::<f64>()).exp();
                for i in 0..p {
                    g[i] += b.weight[k] * (b.response[k] - mu) * x[i];
                    for j in 0..p {
                        h[(i, j)] += b.weight[k] * mu * x[i] * x[j];
                    }
                }
            }
            let step = h.cholesky().unwrap().solve(&g);
            for i in 0..p {
                beta[i] += step[i];
            }
            if step.norm() < 1e-13 {
                break;
            }
        }
        beta
    }

    #[test]
    fn intercept_is_log_rate() {
        // y = z/w with 50 data rows of weight 1/100 and dummy mass 1.
        let mut y = vec![100.0; 50];
        let mut w = vec![0.01; 50];
        y.extend(vec![0.0; 100]);
        w.extend(vec![0.005; 100]);
        let n = y.len();
        let b = block(vec![vec![1.0]; n], y, w, vec![0.0; n]);
        let fit = irls_fit(&[b], &["(Intercept)".into()], &IrlsOptions::default()).unwrap();
        assert_relative_eq!(fit.coefficients[0], 50.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(fit.std_errors()[0], (1.0f64 / 50.0).sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| { let v = rng.gen::<f64>(); vec![1.0, v, v] }).collect();
        let y: Vec<f64> = (0..40).map(|k| if k % 3 == 0 { 2.0 } else { 0.0 }).collect();
        let b = block(rows, y, vec![0.5; 40], vec![0.0; 40]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        match irls_fit(&[b], &names, &IrlsOptions::default()) {
            Err(Error::SingularDesign(cols)) => assert_eq!(cols, vec!["c".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn columns_on_disparate_scales_are_not_aliased() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![1.0, rng.gen_range(0.0..3000.0), f64::from(rng.gen::<bool>()) * 1e-3])
            .collect();
        let gram: Vec<f64> = (0..9).map(|k| rows.iter().map(|r| r[k / 3] * r[k % 3]).sum()).collect();
        assert!(aliased_columns(&gram, 3).is_empty());
        let dup: Vec<f64> = (0..9)
            .map(|k| rows.iter().map(|r| r[(k / 3).min(1)] * 1e6 * r[(k % 3).min(1)]).sum())
            .collect();
        assert_eq!(aliased_columns(&dup, 3), vec![2]);
    }

    #[test]
    fn matches_newton_and_direct_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 300;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>()]).collect();
            let w: Vec<f64> = (0..n).map(|_| 0.01 + rng.gen::<f64>() * 0.1).collect();
            let y: Vec<f64> = w.iter().map(|wi| if rng.gen::<f64>() < 0.2 { 1.0 / wi } else { 0.0 }).collect();
            let off: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 0.5).collect();
            let b = block(rows, y, w, off);
            let names: Vec<String> = (0..3).map(|k| k.to_string()).collect();
            let fit = irls_fit(std::slice::from_ref(&b), &names, &IrlsOptions::default()).unwrap();
            let oracle = newton(&b);
            for (a, o) in fit.coefficients.iter().zip(&oracle) {
                assert_relative_eq!(a, o, epsilon = 1e-6);
            }
            let direct = log_pseudolikelihood(std::slice::from_ref(&b), &fit.coefficients);
            assert!((direct - fit.log_pl).abs() <= 1e-6 * direct.abs());
        }
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.gen::<f64>()]).collect();
        let w = vec![1e-3; n];
        let y: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < 0.1 { 1e3 } else { 0.0 }).collect();
        let b = block(rows, y, w, vec![0.0; n]);
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| irls_fit(std::slice::from_ref(&b), &names, &IrlsOptions::default()).unwrap())
        };
        let (a, c) = (run(1), run(4));
        assert_eq!(a.coefficients, c.coefficients);
        assert_eq!(a.covariance, c.covariance);
    }

    #[test]
    fn wald_reference_values() {
        assert_relative_eq!(wald_p_value(1.959964, 1.0), 0.05, epsilon = 1e-6);
        assert_relative_eq!(wald_p_value(0.0, 1.0), 1.0);
        assert!(wald_p_value(1.0, 0.0).is_nan());
    }
}
