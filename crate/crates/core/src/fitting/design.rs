//! Weighted Poisson design rows built from a quadrature scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::IntensitySurface;
use crate::interactions::{InteractionSpec, NeighborGrid};
use crate::patterns::{MarkSet, MarkedPointPattern};
use crate::scalar::Scalar;

use super::quadrature::QuadratureScheme;

/// Column layout: per-mark intercepts, then patient covariates, then strengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub names: Vec<String>,
    pub marks: usize,
    pub covariates: usize,
    pub strengths: usize,
}

impl ColumnLayout {
    pub fn new<T: Scalar>(marks: &MarkSet, covariate_names: &[String], spec: &InteractionSpec<T>) -> Self {
        let mut names: Vec<String> = if marks.len() == 1 {
            vec!["(Intercept)".to_string()]
        } else {
            marks.labels().iter().map(|l| format!("(Intercept):{l}")).collect()
        };
        names.extend(covariate_names.iter().cloned());
        names.extend(spec.strength_names(marks));
        Self {
            names,
            marks: marks.len(),
            covariates: covariate_names.len(),
            strengths: spec.n_statistics(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn covariate_range(&self) -> std::ops::Range<usize> {
        self.marks..self.marks + self.covariates
    }

    pub fn strength_range(&self) -> std::ops::Range<usize> {
        self.marks + self.covariates..self.len()
    }
}

/// Rows of one patient, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignBlock<T> {
    pub columns: usize,
    /// Row-major `rows x columns`.
    pub x: Vec<T>,
    /// `z / w`.
    pub response: Vec<T>,
    pub weight: Vec<T>,
    pub offset: Vec<T>,
    /// Hardcore-violating rows; they carry zero intensity and are left out of the GLM.
    pub excluded: Vec<bool>,
    pub is_data: Vec<bool>,
}

/// Borrowed view of one row.
#[derive(Clone, Copy, Debug)]
pub struct DesignRow<'a, T> {
    pub response: T,
    pub weight: T,
    pub offset: T,
    pub covariates: &'a [T],
    pub excluded: bool,
    pub is_data: bool,
}

impl<T: Scalar> DesignBlock<T> {
    pub fn rows(&self) -> usize {
        self.weight.len()
    }

    pub fn row(&self, k: usize) -> DesignRow<'_, T> {
        DesignRow {
            response: self.response[k],
            weight: self.weight[k],
            offset: self.offset[k],
            covariates: &self.x[k * self.columns..(k + 1) * self.columns],
            excluded: self.excluded[k],
            is_data: self.is_data[k],
        }
    }

    pub fn excluded_dummies(&self) -> usize {
        self.excluded
            .iter()
            .zip(&self.is_data)
            .filter(|(e, d)| **e && !**d)
            .count()
    }
}

/// One row per quadrature point.
///
/// `offset` supplies `log B(u)` (none means a zero offset); `covariates` are
/// the patient's encoded values, repeated on every row. Statistics are taken
/// against the whole pattern with each data point left out of its own sum.
pub fn build_rows<T: Scalar>(
    quad: &QuadratureScheme<T>,
    offset: Option<&IntensitySurface<T>>,
    covariates: &[T],
    spec: &InteractionSpec<T>,
    pattern: &MarkedPointPattern<T>,
    index: Option<&NeighborGrid<T>>,
) -> Result<DesignBlock<T>> {
    let marks = quad.marks();
    let n_stats = spec.n_statistics();
    let columns = marks + covariates.len() + n_stats;
    let rows = quad.len();
    let owned;
    let index = match index {
        Some(i) => i,
        None => {
            owned = NeighborGrid::from_points(pattern.points(), spec.search_radius());
            &owned
        }
    };
    let mut x = vec![T::zero(); rows * columns];
    let excluded: Vec<bool> = x
        .par_chunks_mut(columns.max(1))
        .zip(quad.points().par_iter())
        .map(|(row, q)| {
            row[q.mark] = T::one();
            row[marks..marks + covariates.len()].copy_from_slice(covariates);
            spec.statistics_at(index, &q.location, q.mark, q.data, &mut row[marks + covariates.len()..])
        })
        .collect();
    if let Some(k) = quad
        .points()
        .iter()
        .zip(&excluded)
        .find(|(q, e)| **e && q.is_data())
        .and_then(|(q, _)| q.data)
    {
        return Err(Error::InconsistentHardcore {
            patient: pattern.id().to_string(),
            index: k,
        });
    }
    let offset = match offset {
        Some(s) => quad.points().iter().map(|q| s.log_offset_at(&q.location)).collect(),
        None => vec![T::zero(); rows],
    };
    Ok(DesignBlock {
        columns,
        x,
        response: quad
            .points()
            .iter()
            .map(|q| if q.is_data() { T::one() / q.weight } else { T::zero() })
            .collect(),
        weight: quad.points().iter().map(|q| q.weight).collect(),
        offset,
        excluded,
        is_data: quad.points().iter().map(|q| q.is_data()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::quadrature::make_quadrature;
    use crate::geometry::{tile_grid, PolygonalWindow};
    use crate::interactions::{sufficient_statistics, PairParamMatrix};
    use crate::patterns::{ClinicalCovariates, MarkedPoint, Stage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pattern(n: usize, seed: u64) -> MarkedPointPattern<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| MarkedPoint::new(rng.gen::<f64>() * 30.0, rng.gen::<f64>() * 30.0, rng.gen_range(0..2)))
            .collect();
        MarkedPointPattern::new("d", pts, PolygonalWindow::rectangle(0.0, 0.0, 30.0, 30.0).unwrap()).unwrap()
    }

    #[test]
    fn poisson_rows_are_intercepts_only() {
        let p = pattern(50, 1);
        let q = make_quadrature(&p, &tile_grid(p.window(), 8, 8).unwrap(), 2).unwrap();
        let b = build_rows(&q, None, &[], &InteractionSpec::none(2), &p, None).unwrap();
        assert_eq!(b.columns, 2);
        for k in 0..b.rows() {
            let r = b.row(k);
            assert_eq!(r.covariates.iter().sum::<f64>(), 1.0);
            assert_eq!(r.offset, 0.0);
            assert_eq!(r.response * r.weight, if r.is_data { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn stage_encoding_in_rows() {
        let c = ClinicalCovariates {
            gender_masculine: false,
            age_at_diagnosis: 60.0,
            stage: Stage::IB,
            mhcii_low: false,
            survival_days: 100.0,
            death: false,
            recurrence_or_death: false,
            adjuvant_therapy: false,
        };
        let enc: Vec<f64> = c.encode();
        assert_eq!(&enc[2..8], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p = pattern(10, 2);
        let q = make_quadrature(&p, &tile_grid(p.window(), 4, 4).unwrap(), 2).unwrap();
        let b = build_rows(&q, None, &enc, &InteractionSpec::none(2), &p, None).unwrap();
        assert_eq!(&b.row(3).covariates[2..], &enc[..]);
    }

    #[test]
    fn statistics_match_brute_force() {
        let p = pattern(400, 3);
        let spec = InteractionSpec::fiksel(
            PairParamMatrix::filled(2, 0.0),
            PairParamMatrix::filled(2, 3.0),
            PairParamMatrix::filled(2, 0.2),
        )
        .unwrap();
        let q = make_quadrature(&p, &tile_grid(p.window(), 16, 16).unwrap(), 2).unwrap();
        let b = build_rows(&q, None, &[], &spec, &p, None).unwrap();
        for (k, qp) in q.points().iter().enumerate().take(500) {
            let (s, flag) = sufficient_statistics(&qp.location, qp.mark, &p, &spec);
            assert_eq!(flag, b.excluded[k]);
            for (a, e) in b.row(k).covariates[2..].iter().zip(&s) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn data_violating_hardcore_is_an_error() {
        let w = PolygonalWindow::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        let p = MarkedPointPattern::new(
            "bad",
            vec![MarkedPoint::new(5.0, 5.0, 0), MarkedPoint::new(5.1, 5.0, 0)],
            w,
        )
        .unwrap();
        let spec = InteractionSpec::fiksel(
            PairParamMatrix::filled(1, 0.5),
            PairParamMatrix::filled(1, 2.0),
            PairParamMatrix::filled(1, 0.1),
        )
        .unwrap();
        let q = make_quadrature(&p, &tile_grid(p.window(), 4, 4).unwrap(), 1).unwrap();
        assert!(matches!(
            build_rows(&q, None, &[], &spec, &p, None),
            Err(Error::InconsistentHardcore { .. })
        ));
    }
}
