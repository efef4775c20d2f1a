//! Maximum pseudolikelihood fitting of multitype Gibbs models.
//!
//! The pseudolikelihood of a cohort is the product of the patients'
//! pseudolikelihoods, so all patients' quadrature rows are pooled into one
//! weighted Poisson regression with a shared coefficient vector. Wald
//! p-values come from that surrogate regression and treat every quadrature
//! row as information; they shrink quickly with the number of points and
//! should be read with that in mind.

pub mod design;
pub mod irls;
pub mod profile;
pub mod quadrature;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{erode_border, tile_grid, Point2, PolygonalWindow, TileGrid};
use crate::intensity::{estimate_total_intensity, IntensitySurface};
use crate::interactions::{InteractionSpec, NeighborGrid, PairParamMatrix};
use crate::patterns::{ClinicalCovariates, Cohort, MarkSet, MarkedPointPattern};
use crate::scalar::Scalar;

pub use design::{build_rows, ColumnLayout, DesignBlock, DesignRow};
pub use irls::{irls_fit, log_pseudolikelihood, wald_p_value, IrlsFit, IrlsOptions};
pub use profile::{profile_pl, ProfileEvaluation, ProfileResult};
pub use quadrature::{default_dummy_side, make_quadrature, QuadraturePoint, QuadratureScheme};

/// Default side of the grid on which offsets are estimated.
pub const DEFAULT_INTENSITY_SIDE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default)]
pub struct FitConfig<T> {
    /// Dummy grid side; `None` applies [`default_dummy_side`].
    pub dummy_side: Option<usize>,
    /// Border erosion; `None` uses the largest interaction distance.
    pub border: Option<T>,
    pub use_offset: bool,
    pub use_covariates: bool,
    pub intensity_side: usize,
    /// Global kernel bandwidth of the offset; `None` applies Scott's rule per mark.
    pub bandwidth: Option<T>,
    /// Drop covariate columns that take one value across the whole cohort.
    pub drop_constant_covariates: bool,
    pub irls: IrlsOptions,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            dummy_side: None,
            border: None,
            use_offset: true,
            use_covariates: true,
            intensity_side: DEFAULT_INTENSITY_SIDE,
            bandwidth: None,
            drop_constant_covariates: true,
            irls: IrlsOptions::default(),
        }
    }
}

/// Per-patient inputs that do not depend on the interaction parameters.
#[derive(Clone, Debug)]
pub struct PreparedPatient<T> {
    pub pattern: MarkedPointPattern<T>,
    pub domain: PolygonalWindow<T>,
    pub quadrature: QuadratureScheme<T>,
    pub offset: Option<IntensitySurface<T>>,
    /// Kept covariate values, aligned with [`PreparedCohort::covariate_names`].
    pub covariates: Option<Vec<T>>,
    pub index: NeighborGrid<T>,
}

/// A cohort with quadrature, offsets and covariates computed once.
#[derive(Clone, Debug)]
pub struct PreparedCohort<T> {
    pub marks: MarkSet,
    pub config: FitConfig<T>,
    pub border: T,
    pub dummy_side: usize,
    pub covariate_names: Vec<String>,
    /// Positions of the kept covariates in [`ClinicalCovariates::encode`].
    pub covariate_source: Vec<usize>,
    pub patients: Vec<PreparedPatient<T>>,
}

/// Builds quadrature schemes on the eroded windows.
///
/// `radius` is the largest interaction distance any later fit will use; it
/// sizes the neighbour index and is the default border. Offsets and
/// covariates are prepared when requested and available.
pub fn prepare_cohort<T: Scalar>(
    cohort: &Cohort<T>,
    config: &FitConfig<T>,
    radius: T,
    want_offset: bool,
    want_covariates: bool,
) -> Result<PreparedCohort<T>> {
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("cohort has no patients".into()));
    }
    let marks = cohort.marks().clone();
    let m = marks.len();
    let border = config.border.unwrap_or(radius);
    if !(border >= T::zero()) {
        return Err(Error::InvalidArgument(format!("border {border} must be >= 0")));
    }
    let max_count = cohort
        .patients()
        .iter()
        .flat_map(|p| p.pattern.counts_by_mark(m))
        .max()
        .unwrap_or(0);
    let dummy_side = config.dummy_side.unwrap_or_else(|| default_dummy_side(max_count));
    if dummy_side == 0 {
        return Err(Error::InvalidArgument("dummy grid side must be positive".into()));
    }
    let encoded: Option<Vec<Vec<T>>> = if want_covariates {
        let rows: Result<Vec<Vec<T>>> = cohort
            .patients()
            .iter()
            .map(|p| {
                p.covariates.as_ref().map(|c| c.encode()).ok_or_else(|| {
                    Error::Schema(format!("patient {} has no clinical covariates", p.pattern.id()))
                })
            })
            .collect();
        Some(rows?)
    } else {
        None
    };
    let all_names = ClinicalCovariates::column_names();
    let mut covariate_source: Vec<usize> = (0..all_names.len()).collect();
    if let (Some(rows), true) = (&encoded, config.drop_constant_covariates) {
        covariate_source.retain(|&c| {
            let keep = rows.iter().any(|r| r[c] != rows[0][c]);
            if !keep {
                log::info!("dropping covariate {:?}: constant across the cohort", all_names[c]);
            }
            keep
        });
    }
    let covariate_names = covariate_source.iter().map(|&c| all_names[c].clone()).collect();
    let patients = cohort
        .patients()
        .par_iter()
        .enumerate()
        .map(|(k, p)| -> Result<PreparedPatient<T>> {
            let pattern = p.pattern.clone();
            let domain = erode_border(pattern.window(), border)?;
            let grid = tile_grid(&domain, dummy_side, dummy_side)?;
            let quadrature = make_quadrature(&pattern, &grid, m)?;
            let offset = if want_offset {
                let g = tile_grid(pattern.window(), config.intensity_side, config.intensity_side)?;
                Some(estimate_total_intensity(&pattern, m, &g, config.bandwidth)?)
            } else {
                None
            };
            let covariates = encoded
                .as_ref()
                .map(|rows| covariate_source.iter().map(|&c| rows[k][c]).collect());
            let index = NeighborGrid::from_points(pattern.points(), radius);
            Ok(PreparedPatient {
                pattern,
                domain,
                quadrature,
                offset,
                covariates,
                index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedCohort {
        marks,
        config: config.clone(),
        border,
        dummy_side,
        covariate_names,
        covariate_source,
        patients,
    })
}

/// One row of the coefficient table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub exp_estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Everything needed to evaluate the fitted intensity for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PatientFit<T> {
    pub id: String,
    pub covariates: Vec<T>,
    pub offset: Option<IntensitySurface<T>>,
    /// Eroded integration domain.
    pub domain: PolygonalWindow<T>,
    pub log_pl: f64,
    pub data_rows: usize,
    pub dummy_rows: usize,
    pub excluded_dummy_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitMetadata<T> {
    pub dummy_side: usize,
    pub border: T,
    pub iterations: usize,
    pub deviance: f64,
    pub deviance_trace: Vec<f64>,
    pub excluded_dummy_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FittedModel<T> {
    pub label: String,
    pub marks: MarkSet,
    pub spec: InteractionSpec<T>,
    pub use_offset: bool,
    pub use_covariates: bool,
    pub config: FitConfig<T>,
    pub layout: ColumnLayout,
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub covariate_source: Vec<usize>,
    pub log_pl: f64,
    pub patients: Vec<PatientFit<T>>,
    pub metadata: FitMetadata<T>,
}

/// Fits one model on a prepared cohort.
pub fn fit_prepared<T: Scalar>(
    prepared: &PreparedCohort<T>,
    spec: &InteractionSpec<T>,
    use_offset: bool,
    use_covariates: bool,
    label: &str,
) -> Result<FittedModel<T>> {
    spec.validate()?;
    if spec.kind() != crate::interactions::InteractionKind::None && spec.marks() != prepared.marks.len() {
        return Err(Error::InvalidArgument(format!(
            "interaction has {} marks, cohort has {}",
            spec.marks(),
            prepared.marks.len()
        )));
    }
    if use_offset && prepared.patients.iter().any(|p| p.offset.is_none()) {
        return Err(Error::InvalidArgument("offsets were not prepared".into()));
    }
    if use_covariates && prepared.patients.iter().any(|p| p.covariates.is_none()) {
        return Err(Error::Schema("covariates requested but not available".into()));
    }
    let cov_names: &[String] = if use_covariates { &prepared.covariate_names } else { &[] };
    let layout = ColumnLayout::new(&prepared.marks, cov_names, spec);
    let blocks = prepared
        .patients
        .par_iter()
        .map(|p| {
            let covs: &[T] = if use_covariates { p.covariates.as_deref().unwrap_or(&[]) } else { &[] };
            let offset = if use_offset { p.offset.as_ref() } else { None };
            build_rows(&p.quadrature, offset, covs, spec, &p.pattern, Some(&p.index))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = irls_fit(&blocks, &layout.names, &prepared.config.irls)?;
    let se = fit.std_errors();
    let coefficients = layout
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| Coefficient {
            name: name.clone(),
            estimate: fit.coefficients[k],
            exp_estimate: fit.coefficients[k].exp(),
            std_error: se[k],
            z: fit.coefficients[k] / se[k],
            p_value: wald_p_value(fit.coefficients[k], se[k]),
        })
        .collect();
    let p = layout.len();
    let covariance = (0..p).map(|i| fit.covariance[i * p..(i + 1) * p].to_vec()).collect();
    let excluded_total: usize = blocks.iter().map(|b| b.excluded_dummies()).sum();
    if excluded_total > 0 {
        log::info!("{label}: {excluded_total} dummy rows fall inside a hardcore and were dropped");
    }
    let patients = prepared
        .patients
        .iter()
        .zip(&blocks)
        .map(|(p, b)| PatientFit {
            id: p.pattern.id().to_string(),
            covariates: if use_covariates { p.covariates.clone().unwrap_or_default() } else { Vec::new() },
            offset: if use_offset { p.offset.clone() } else { None },
            domain: p.domain.clone(),
            log_pl: log_pseudolikelihood(std::slice::from_ref(b), &fit.coefficients),
            data_rows: p.quadrature.data_count(),
            dummy_rows: p.quadrature.dummy_count(),
            excluded_dummy_rows: b.excluded_dummies(),
        })
        .collect();
    Ok(FittedModel {
        label: label.to_string(),
        marks: prepared.marks.clone(),
        spec: spec.clone(),
        use_offset,
        use_covariates,
        config: prepared.config.clone(),
        layout,
        coefficients,
        covariance,
        covariate_source: if use_covariates { prepared.covariate_source.clone() } else { Vec::new() },
        log_pl: fit.log_pl,
        patients,
        metadata: FitMetadata {
            dummy_side: prepared.dummy_side,
            border: prepared.border,
            iterations: fit.iterations,
            deviance: fit.deviance,
            deviance_trace: fit.trace,
            excluded_dummy_rows: excluded_total,
        },
    })
}

/// Pooled fit of one model with fixed irregular parameters.
pub fn fit_cohort<T: Scalar>(
    cohort: &Cohort<T>,
    spec: &InteractionSpec<T>,
    config: &FitConfig<T>,
) -> Result<FittedModel<T>> {
    let prepared = prepare_cohort(cohort, config, spec.search_radius(), config.use_offset, config.use_covariates)?;
    fit_prepared(&prepared, spec, config.use_offset, config.use_covariates, spec.kind().name())
}

impl<T: Scalar> FittedModel<T> {
    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.std_error).collect()
    }

    /// Strength coefficients in the order of `spec.pairs()`.
    pub fn strengths(&self) -> &[Coefficient] {
        &self.coefficients[self.layout.strength_range()]
    }

    pub fn patient(&self, id: &str) -> Option<&PatientFit<T>> {
        self.patients.iter().find(|p| p.id == id)
    }

    /// Context for a pattern outside the fitted cohort, e.g. a simulation.
    pub fn context_for(
        &self,
        id: &str,
        covariates: Option<&ClinicalCovariates>,
        offset: Option<IntensitySurface<T>>,
        domain: PolygonalWindow<T>,
    ) -> Result<PatientFit<T>> {
        let covariates = if self.use_covariates {
            let enc: Vec<T> = covariates
                .ok_or_else(|| Error::Schema(format!("patient {id} needs clinical covariates")))?
                .encode();
            self.covariate_source.iter().map(|&c| enc[c]).collect()
        } else {
            Vec::new()
        };
        if self.use_offset && offset.is_none() {
            return Err(Error::InvalidArgument(format!("patient {id} needs an offset surface")));
        }
        Ok(PatientFit {
            id: id.to_string(),
            covariates,
            offset: if self.use_offset { offset } else { None },
            domain,
            log_pl: f64::NAN,
            data_rows: 0,
            dummy_rows: 0,
            excluded_dummy_rows: 0,
        })
    }

    /// `log lambda` at a type-`m` location with statistics `stats`, hardcore ignored.
    pub fn log_lambda(&self, ctx: &PatientFit<T>, u: &Point2<T>, m: usize, stats: &[T]) -> T {
        let beta = |k: usize| T::lit(self.coefficients[k].estimate);
        let mut eta = ctx.offset.as_ref().map_or(T::zero(), |s| s.log_offset_at(u));
        eta += beta(m);
        for (k, z) in self.layout.covariate_range().zip(&ctx.covariates) {
            eta += beta(k) * *z;
        }
        for (k, s) in self.layout.strength_range().zip(stats) {
            eta += beta(k) * *s;
        }
        eta
    }

    /// Fitted conditional intensity; `exclude` names the point itself in `index`.
    pub fn lambda_at(
        &self,
        ctx: &PatientFit<T>,
        index: &NeighborGrid<T>,
        u: &Point2<T>,
        m: usize,
        exclude: Option<usize>,
    ) -> T {
        let mut stats = vec![T::zero(); self.spec.n_statistics()];
        if self.spec.statistics_at(index, u, m, exclude, &mut stats) {
            return T::zero();
        }
        self.log_lambda(ctx, u, m, &stats).exp()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(reader)?;
        m.spec.validate()?;
        Ok(m)
    }

    /// Coefficient table: `term,estimate,exp_estimate,std_error,z,p_value`.
    pub fn write_coefficients_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["term", "estimate", "exp_estimate", "std_error", "z", "p_value"])?;
        for c in &self.coefficients {
            wtr.write_record([
                c.name.clone(),
                c.estimate.to_string(),
                c.exp_estimate.to_string(),
                c.std_error.to_string(),
                c.z.to_string(),
                c.p_value.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fitted conditional intensity of mark `mark` at the cell centers of `grid`.
///
/// A cell center that coincides with a data point of the same mark is
/// evaluated with that point left out.
pub fn conditional_intensity_surface<T: Scalar>(
    model: &FittedModel<T>,
    ctx: &PatientFit<T>,
    pattern: &MarkedPointPattern<T>,
    mark: usize,
    grid: &TileGrid<T>,
) -> Result<IntensitySurface<T>> {
    let index = NeighborGrid::from_points(pattern.points(), model.spec.search_radius());
    let values: Vec<T> = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let u = grid.cell_center(c);
            let exclude = pattern.points().iter().position(|p| p.mark == mark && p.location == u);
            model.lambda_at(ctx, &index, &u, mark, exclude)
        })
        .collect();
    IntensitySurface::new(grid.clone(), values, format!("lambda {}", model.marks.label(mark)))
}

/// One candidate of the model-comparison menu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MenuEntry<T> {
    pub label: String,
    pub spec: InteractionSpec<T>,
    pub use_offset: bool,
    pub use_covariates: bool,
}

pub const MENU_LABELS: [&str; 8] = [
    "Fiksel 1",
    "Fiksel 2",
    "Fiksel 3",
    "Fiksel 4",
    "Strauss",
    "Hardcore",
    "Str Hardcore",
    "Poisson",
];

/// The eight comparison models from one set of irregular parameters.
///
/// The hardcore model excludes `r <= h`, so its distances are shrunk by a
/// few ulps to keep the closest observed pair admissible.
pub fn model_menu<T: Scalar>(
    hardcore: &PairParamMatrix<T>,
    range: &PairParamMatrix<T>,
    slope: &PairParamMatrix<T>,
) -> Result<Vec<MenuEntry<T>>> {
    let m = range.size();
    let shrink = T::one() - T::lit(16.0) * T::epsilon();
    let entry = |label: &str, spec: InteractionSpec<T>, offset: bool, covs: bool| MenuEntry {
        label: label.to_string(),
        spec,
        use_offset: offset,
        use_covariates: covs,
    };
    let fiksel = InteractionSpec::fiksel(hardcore.clone(), range.clone(), slope.clone())?;
    Ok(vec![
        entry(MENU_LABELS[0], fiksel.clone(), true, true),
        entry(MENU_LABELS[1], fiksel.clone(), false, false),
        entry(MENU_LABELS[2], fiksel, false, true),
        entry(
            MENU_LABELS[3],
            InteractionSpec::fiksel_within_only(hardcore.clone(), range.clone(), slope.clone())?,
            true,
            true,
        ),
        entry(MENU_LABELS[4], InteractionSpec::strauss(range.clone())?, true, true),
        entry(MENU_LABELS[5], InteractionSpec::hardcore(hardcore.map(|h| h * shrink))?, true, true),
        entry(
            MENU_LABELS[6],
            InteractionSpec::strauss_hardcore(hardcore.clone(), range.clone())?,
            true,
            true,
        ),
        entry(MENU_LABELS[7], InteractionSpec::none(m), true, true),
    ])
}

/// Fits menu entries on one shared preparation.
///
/// The border is the configured one or the largest interaction distance in
/// the menu, so every model integrates over the same domain.
pub fn fit_menu<T: Scalar>(
    cohort: &Cohort<T>,
    entries: &[MenuEntry<T>],
    config: &FitConfig<T>,
) -> Result<Vec<Result<FittedModel<T>>>> {
    let radius = entries
        .iter()
        .map(|e| e.spec.search_radius())
        .fold(T::zero(), T::max);
    let want_offset = entries.iter().any(|e| e.use_offset);
    let want_covs = entries.iter().any(|e| e.use_covariates);
    let prepared = prepare_cohort(cohort, config, radius, want_offset, want_covs)?;
    Ok(entries
        .iter()
        .map(|e| fit_prepared(&prepared, &e.spec, e.use_offset, e.use_covariates, &e.label))
        .collect())
}
