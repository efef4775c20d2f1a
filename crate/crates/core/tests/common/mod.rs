#![allow(dead_code)]

use gibbsfit::geometry::PolygonalWindow;
use gibbsfit::interactions::{InteractionSpec, PairParamMatrix};
use gibbsfit::patterns::{ClinicalCovariates, Cohort, MarkSet, MarkedPoint, MarkedPointPattern, Patient, Stage};
use gibbsfit::simulation::{simulate_cohort, CohortModel, SimulationConfig, Trend};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn labels(m: usize) -> MarkSet {
    MarkSet::new((0..m).map(|k| format!("m{k}"))).unwrap()
}

/// Homogeneous Poisson pattern with independent uniform marks on a rectangle.
pub fn csr(rng: &mut ChaCha8Rng, id: &str, rate: f64, w: f64, h: f64, marks: usize) -> MarkedPointPattern<f64> {
    let n = Poisson::new(rate * w * h).unwrap().sample(rng) as usize;
    let pts = (0..n)
        .map(|_| MarkedPoint::new(rng.gen::<f64>() * w, rng.gen::<f64>() * h, rng.gen_range(0..marks)))
        .collect();
    MarkedPointPattern::new(id, pts, PolygonalWindow::rectangle(0.0, 0.0, w, h).unwrap()).unwrap()
}

pub fn cohort_of(patterns: Vec<MarkedPointPattern<f64>>, marks: usize) -> Cohort<f64> {
    Cohort::new(
        labels(marks),
        patterns.into_iter().map(|pattern| Patient { pattern, covariates: None }).collect(),
    )
    .unwrap()
}

pub fn fiksel_spec(m: usize, h: f64, r: f64, g: f64) -> InteractionSpec<f64> {
    InteractionSpec::fiksel(PairParamMatrix::filled(m, h), PairParamMatrix::filled(m, r), PairParamMatrix::filled(m, g))
        .unwrap()
}

pub fn sim_config(steps: u64, seed: u64) -> SimulationConfig<f64> {
    SimulationConfig {
        steps,
        burn_in: steps / 2,
        seed,
        trace_every: 0,
        ..SimulationConfig::default()
    }
}

/// Constant-trend cohort model on a square of side `side`.
pub fn cohort_model(
    marks: usize,
    side: f64,
    rate: f64,
    spec: InteractionSpec<f64>,
    strengths: Vec<f64>,
) -> CohortModel<f64> {
    CohortModel {
        marks: labels(marks),
        window: PolygonalWindow::rectangle(0.0, 0.0, side, side).unwrap(),
        trend: Trend::constant(&vec![rate; marks]).unwrap(),
        covariate_effects: Vec::new(),
        spec,
        strengths,
    }
}

pub fn simulate(model: &CohortModel<f64>, g: usize, steps: u64, seed: u64) -> Cohort<f64> {
    simulate_cohort(g, |_| None, model, &sim_config(steps, seed)).unwrap()
}

/// Varied clinical covariates for patient `k`.
pub fn random_covariates(rng: &mut ChaCha8Rng) -> ClinicalCovariates {
    let stages = [Stage::IA, Stage::IB, Stage::IIA, Stage::IIB, Stage::IIIA, Stage::IIIB, Stage::IV];
    ClinicalCovariates {
        gender_masculine: rng.gen(),
        age_at_diagnosis: rng.gen_range(40.0..85.0),
        stage: stages[rng.gen_range(0..stages.len())],
        mhcii_low: rng.gen(),
        survival_days: rng.gen_range(30.0..3000.0),
        death: rng.gen(),
        recurrence_or_death: rng.gen(),
        adjuvant_therapy: rng.gen(),
    }
}
