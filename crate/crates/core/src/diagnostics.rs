//! Residual measures of fitted models and RMSE model comparison.
//!
//! Every measure is restricted to the patient's eroded integration domain
//! and evaluated with the same counting-weight quadrature as the fit: the
//! integral of `f(lambda)` is `sum_j w_j f(lambda(u_j))` over data and dummy
//! points, with data points evaluated against the rest of the pattern. Both
//! the data sum and the integral are restricted to the evaluation region,
//! which keeps all three measures additive over tiles.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{make_quadrature, FittedModel, PatientFit};
use crate::geometry::{tile_grid, TileGrid};
use crate::interactions::NeighborGrid;
use crate::patterns::{Cohort, MarkedPointPattern};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Raw,
    Pearson,
    Inverse,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 3] = [ResidualKind::Raw, ResidualKind::Pearson, ResidualKind::Inverse];

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Raw => "raw",
            ResidualKind::Pearson => "pearson",
            ResidualKind::Inverse => "inverse",
        }
    }

    /// Data-point contribution `h(lambda)`; `None` when `lambda = 0` makes it undefined.
    fn at_data<T: Scalar>(self, lambda: T) -> Option<T> {
        match self {
            ResidualKind::Raw => Some(T::one()),
            _ if !(lambda > T::zero()) => None,
            ResidualKind::Pearson => Some(lambda.sqrt().recip()),
            ResidualKind::Inverse => Some(lambda.recip()),
        }
    }

    /// Integrand `lambda h(lambda)` of the compensator.
    fn integrand<T: Scalar>(self, lambda: T) -> T {
        match self {
            ResidualKind::Raw => lambda,
            ResidualKind::Pearson => lambda.sqrt(),
            ResidualKind::Inverse => {
                if lambda > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResidualTotal<T> {
    pub patient: String,
    pub mark: usize,
    pub kind: ResidualKind,
    pub value: T,
}

/// Residual measure of one mark on every tile of `grid`.
///
/// `grid` must tile the evaluation region (normally `ctx.domain`); its
/// values sum to the total over that region.
pub fn residual_field<T: Scalar>(
    model: &FittedModel<T>,
    ctx: &PatientFit<T>,
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    kind: ResidualKind,
    grid: &TileGrid<T>,
) -> Result<Vec<T>> {
    if mark >= model.marks.len() {
        return Err(Error::InvalidArgument(format!("mark {mark} out of range")));
    }
    let quad = make_quadrature(pattern, grid, model.marks.len())?;
    let index = NeighborGrid::from_points(pattern.points(), model.spec.search_radius());
    let terms: Vec<(usize, Result<T>)> = quad
        .points()
        .par_iter()
        .filter(|q| q.mark == mark)
        .map(|q| {
            let lambda = model.lambda_at(ctx, &index, &q.location, mark, q.data);
            let mut v = -q.weight * kind.integrand(lambda);
            if let Some(k) = q.data {
                match kind.at_data(lambda) {
                    Some(h) => v += h,
                    None => {
                        return (
                            q.tile,
                            Err(Error::DegenerateModel(format!(
                                "{}: fitted intensity is zero at data point {k} of patient {}",
                                model.label, ctx.id
                            ))),
                        )
                    }
                }
            }
            (q.tile, Ok(v))
        })
        .collect();
    let mut field = vec![T::zero(); grid.len()];
    for (tile, v) in terms {
        field[tile] += v?;
    }
    Ok(field)
}

/// Grid the residuals are integrated on: the fit's dummy grid over the eroded domain.
pub fn residual_grid<T: Scalar>(model: &FittedModel<T>, ctx: &PatientFit<T>) -> Result<TileGrid<T>> {
    let side = model.metadata.dummy_side;
    tile_grid(&ctx.domain, side, side)
}

pub fn residual_total<T: Scalar>(
    model: &FittedModel<T>,
    ctx: &PatientFit<T>,
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    kind: ResidualKind,
) -> Result<ResidualTotal<T>> {
    let grid = residual_grid(model, ctx)?;
    let field = residual_field(model, ctx, pattern, mark, kind, &grid)?;
    Ok(ResidualTotal {
        patient: ctx.id.clone(),
        mark,
        kind,
        value: field.into_iter().sum(),
    })
}

/// Totals for every fitted patient and mark of `cohort`, in cohort order.
pub fn cohort_residuals<T: Scalar>(
    model: &FittedModel<T>,
    cohort: &Cohort<T>,
    kind: ResidualKind,
) -> Result<Vec<ResidualTotal<T>>> {
    let per_patient = cohort
        .patients()
        .par_iter()
        .map(|p| {
            let id = p.pattern.id();
            let ctx = model
                .patient(id)
                .ok_or_else(|| Error::InvalidArgument(format!("patient {id} is not part of model {}", model.label)))?;
            (0..model.marks.len())
                .map(|m| residual_total(model, ctx, &p.pattern, m, kind))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

/// `sqrt(mean_k R_k^2)` with `R_k` the mark-summed total of patient `k`.
pub fn rmse<T: Scalar>(patient_totals: &[T]) -> T {
    if patient_totals.is_empty() {
        return T::zero();
    }
    let ss: T = patient_totals.iter().map(|r| *r * *r).sum();
    (ss / T::from_usize_lossy(patient_totals.len())).sqrt()
}

/// Sums totals over marks per patient, keeping first-appearance order.
pub fn patient_sums<T: Scalar>(totals: &[ResidualTotal<T>]) -> Vec<(String, T)> {
    let mut out: Vec<(String, T)> = Vec::new();
    for t in totals {
        match out.iter_mut().find(|(id, _)| *id == t.patient) {
            Some((_, v)) => *v += t.value,
            None => out.push((t.patient.clone(), t.value)),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub interaction: String,
    pub offset: bool,
    pub covariates: bool,
    /// RMSE per kind in [`ResidualKind::ALL`] order; NaN when the kind is undefined for the model.
    pub rmse: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Adds one model; also returns its residual totals for every kind.
    pub fn add_model<T: Scalar>(&mut self, model: &FittedModel<T>, cohort: &Cohort<T>) -> Result<Vec<ResidualTotal<T>>> {
        let mut rmse_row = [f64::NAN; 3];
        let mut all = Vec::new();
        for (slot, kind) in ResidualKind::ALL.into_iter().enumerate() {
            match cohort_residuals(model, cohort, kind) {
                Ok(totals) => {
                    let sums: Vec<T> = patient_sums(&totals).into_iter().map(|(_, v)| v).collect();
                    rmse_row[slot] = rmse(&sums).as_f64();
                    all.extend(totals);
                }
                Err(Error::DegenerateModel(msg)) => {
                    log::warn!("{} residuals undefined: {msg}", kind.name());
                }
                Err(e) => return Err(e),
            }
        }
        self.rows.push(ComparisonRow {
            label: model.label.clone(),
            interaction: model.spec.kind().name().to_string(),
            offset: model.use_offset,
            covariates: model.use_covariates,
            rmse: rmse_row,
        });
        Ok(all)
    }

    /// `model,interaction,offset,covariates,rmse_raw,rmse_pearson,rmse_inverse`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["model", "interaction", "offset", "covariates", "rmse_raw", "rmse_pearson", "rmse_inverse"])?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone(), r.interaction.clone(), r.offset.to_string(), r.covariates.to_string()];
            rec.extend(r.rmse.iter().map(|v| if v.is_nan() { "NA".to_string() } else { v.to_string() }));
            wtr.write_record(rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `model,patient,mark,kind,value` with mark labels from `labels`.
pub fn write_totals_csv<T: Scalar, W: Write>(
    writer: W,
    labels: &[String],
    rows: &[(String, Vec<ResidualTotal<T>>)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["model", "patient", "mark", "kind", "value"])?;
    for (model, totals) in rows {
        for t in totals {
            wtr.write_record([
                model.clone(),
                t.patient.clone(),
                labels[t.mark].clone(),
                t.kind.name().to_string(),
                t.value.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-tile field as `cell_x,cell_y,value`.
pub fn write_field_csv<T: Scalar, W: Write>(writer: W, grid: &TileGrid<T>, field: &[T]) -> Result<()> {
    if field.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} values for {} tiles", field.len(), grid.len())));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["cell_x", "cell_y", "value"])?;
    for (k, v) in field.iter().enumerate() {
        let c = grid.cell_center(k);
        wtr.write_record([c.x.to_string(), c.y.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
