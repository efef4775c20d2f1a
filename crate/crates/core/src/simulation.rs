//! Metropolis–Hastings birth-death-shift sampling of multitype Gibbs models.
//!
//! The target is the model restricted to the window: interactions with
//! points outside it are ignored. Conditional intensities use the same
//! statistic code as the fit, so a fitted model is simulated exactly as it
//! was estimated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{FittedModel, PatientFit};
use crate::geometry::{Point2, PolygonalWindow};
use crate::intensity::IntensitySurface;
use crate::interactions::{InteractionKind, InteractionSpec, NeighborGrid};
use crate::patterns::{ClinicalCovariates, Cohort, MarkSet, MarkedPoint, MarkedPointPattern, Patient};
use crate::scalar::Scalar;

/// Fraction of the window diameter used as the default shift scale.
pub const DEFAULT_SHIFT_FRACTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default)]
pub struct SimulationConfig<T> {
    pub steps: u64,
    pub burn_in: u64,
    pub p_birth: f64,
    pub p_death: f64,
    pub p_shift: f64,
    /// Standard deviation of shift displacements; `None` is 2% of the diameter.
    pub shift_scale: Option<T>,
    pub seed: u64,
    /// Trace interval after burn-in; 0 disables the trace.
    pub trace_every: u64,
}

impl<T: Scalar> Default for SimulationConfig<T> {
    fn default() -> Self {
        Self {
            steps: 200_000,
            burn_in: 100_000,
            p_birth: 0.4,
            p_death: 0.4,
            p_shift: 0.2,
            shift_scale: None,
            seed: 0,
            trace_every: 1000,
        }
    }
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let p = [self.p_birth, self.p_death, self.p_shift];
        if p.iter().any(|v| !(*v >= 0.0)) || ((p.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("proposal probabilities {p:?} must be >= 0 and sum to 1")));
        }
        if self.p_birth == 0.0 || self.p_death == 0.0 {
            return Err(Error::InvalidArgument("birth and death probabilities must be positive".into()));
        }
        if self.steps <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "steps {} must exceed burn-in {}",
                self.steps, self.burn_in
            )));
        }
        if let Some(s) = self.shift_scale {
            if !(s > T::zero()) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("shift scale {s} must be positive")));
            }
        }
        Ok(())
    }
}

/// Region the sampler places points in, with its reference measure.
pub trait Domain<T: Scalar>: Sync {
    /// Total reference measure (area, or number of sites).
    fn measure(&self) -> T;
    /// Draw from the normalized reference measure.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Point2<T>;
    fn contains(&self, u: &Point2<T>) -> bool;
    fn bounds(&self) -> (Point2<T>, Point2<T>);

    fn diameter(&self) -> T {
        let (lo, hi) = self.bounds();
        lo.distance(&hi)
    }
}

impl<T: Scalar> Domain<T> for PolygonalWindow<T> {
    fn measure(&self) -> T {
        self.area()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point2<T> {
        let (lo, hi) = self.bounding_box();
        loop {
            let u = Point2::new(
                lo.x + (hi.x - lo.x) * T::lit(rng.gen::<f64>()),
                lo.y + (hi.y - lo.y) * T::lit(rng.gen::<f64>()),
            );
            if self.contains(&u) {
                return u;
            }
        }
    }

    fn contains(&self, u: &Point2<T>) -> bool {
        PolygonalWindow::contains(self, u)
    }

    fn bounds(&self) -> (Point2<T>, Point2<T>) {
        self.bounding_box()
    }
}

/// Finite set of sites under counting measure; used for exact checks.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSites<T>(pub Vec<Point2<T>>);

impl<T: Scalar> Domain<T> for DiscreteSites<T> {
    fn measure(&self) -> T {
        T::from_usize_lossy(self.0.len())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point2<T> {
        self.0[rng.gen_range(0..self.0.len())]
    }

    fn contains(&self, u: &Point2<T>) -> bool {
        self.0.contains(u)
    }

    fn bounds(&self) -> (Point2<T>, Point2<T>) {
        self.0.iter().fold(
            (
                Point2::new(T::infinity(), T::infinity()),
                Point2::new(T::neg_infinity(), T::neg_infinity()),
            ),
            |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
        )
    }
}

/// First-order term: `log B_m(u) = log_constant[m] + log S(u)`.
///
/// `surfaces` is empty (no spatial term), one surface shared by all marks,
/// or one surface per mark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trend<T> {
    pub log_constant: Vec<T>,
    pub surfaces: Vec<IntensitySurface<T>>,
}

impl<T: Scalar> Trend<T> {
    /// Constant intensity per mark.
    pub fn constant(intensities: &[T]) -> Result<Self> {
        if intensities.iter().any(|b| !(*b > T::zero()) || !b.is_finite()) {
            return Err(Error::InvalidArgument("trend intensities must be positive and finite".into()));
        }
        Ok(Self {
            log_constant: intensities.iter().map(|b| b.ln()).collect(),
            surfaces: Vec::new(),
        })
    }

    pub fn marks(&self) -> usize {
        self.log_constant.len()
    }

    #[inline]
    pub fn log_at(&self, u: &Point2<T>, m: usize) -> T {
        let spatial = match self.surfaces.len() {
            0 => T::zero(),
            1 => self.surfaces[0].log_offset_at(u),
            _ => self.surfaces[m].log_offset_at(u),
        };
        self.log_constant[m] + spatial
    }
}

/// A fully specified Gibbs model: trend, interaction and strengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GibbsModel<T> {
    pub trend: Trend<T>,
    pub spec: InteractionSpec<T>,
    /// Strength per statistic slot, in `spec.pairs()` order.
    pub strengths: Vec<T>,
}

impl<T: Scalar> GibbsModel<T> {
    pub fn new(trend: Trend<T>, spec: InteractionSpec<T>, strengths: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if strengths.len() != spec.n_statistics() {
            return Err(Error::InvalidArgument(format!(
                "{} strengths for {} statistics",
                strengths.len(),
                spec.n_statistics()
            )));
        }
        if strengths.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("strengths must be finite".into()));
        }
        let m = trend.marks();
        if spec.kind() != InteractionKind::None && spec.marks() != m {
            return Err(Error::InvalidArgument(format!("trend has {m} marks, interaction {}", spec.marks())));
        }
        if trend.surfaces.len() > 1 && trend.surfaces.len() != m {
            return Err(Error::InvalidArgument("need one shared surface or one per mark".into()));
        }
        Ok(Self { trend, spec, strengths })
    }

    /// The fitted model of one patient, with its covariates and offset.
    pub fn from_fitted(model: &FittedModel<T>, ctx: &PatientFit<T>) -> Result<Self> {
        let beta = |k: usize| T::lit(model.coefficients[k].estimate);
        let cov: T = model
            .layout
            .covariate_range()
            .zip(&ctx.covariates)
            .map(|(k, z)| beta(k) * *z)
            .sum();
        let trend = Trend {
            log_constant: (0..model.marks.len()).map(|m| beta(m) + cov).collect(),
            surfaces: ctx.offset.iter().cloned().collect(),
        };
        let strengths = model.layout.strength_range().map(beta).collect();
        Self::new(trend, model.spec.clone(), strengths)
    }

    pub fn marks(&self) -> usize {
        self.trend.marks()
    }

    /// `lambda((u, m) | X)` against the points in `index`, skipping `exclude`.
    pub fn papangelou(&self, index: &NeighborGrid<T>, u: &Point2<T>, m: usize, exclude: Option<usize>) -> T {
        let mut stats = vec![T::zero(); self.strengths.len()];
        if self.spec.statistics_at(index, u, m, exclude, &mut stats) {
            return T::zero();
        }
        let eta: T = stats.iter().zip(&self.strengths).map(|(s, c)| *s * *c).sum();
        (self.trend.log_at(u, m) + eta).exp()
    }

    /// Conservative bound on `sum c s(u, m | X)` over all hardcore-admissible `X`.
    ///
    /// A positive strength needs the neighbours it counts to be kept apart by
    /// a same-type hardcore; the number of such neighbours within the range is
    /// bounded by disk packing. Infinite when no such bound exists.
    pub fn stability_bound(&self) -> T {
        let spec = &self.spec;
        let kind = spec.kind();
        if matches!(kind, InteractionKind::None | InteractionKind::Hardcore) {
            return T::zero();
        }
        let m_count = spec.marks();
        let range = spec.range_matrix().expect("interaction with a range");
        let hard = spec.hardcore_matrix();
        let mut worst = T::zero();
        for m in 0..m_count {
            let mut total = T::zero();
            for j in 0..m_count {
                let Some(slot) = spec.pair_index(m, j) else { continue };
                let c = self.strengths[slot];
                if !(c > T::zero()) {
                    continue;
                }
                let h_jj = hard.map_or(T::zero(), |h| h.get(j, j));
                if !(h_jj > T::zero()) {
                    return T::infinity();
                }
                let r = range.get(m, j);
                let two = T::lit(2.0);
                let packing = (two * r / h_jj + T::one()).powi(2);
                let per_neighbour = match (kind, spec.slope_matrix()) {
                    (InteractionKind::Fiksel | InteractionKind::FikselWithinOnly, Some(g)) => {
                        let g = g.get(m, j);
                        let h_mj = hard.map_or(T::zero(), |h| h.get(m, j));
                        if g >= T::zero() { (-g * h_mj).exp() } else { (-g * r).exp() }
                    }
                    _ => T::one(),
                };
                total += c * packing * per_neighbour;
            }
            worst = worst.max(total);
        }
        worst
    }
}

/// One trace record of a chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    pub n: usize,
    /// Same-type pairs closer than the interaction radius.
    pub same_type_pairs: usize,
    /// Log unnormalized density relative to the empty start.
    pub log_density: f64,
    pub acceptance_rate: f64,
}

/// A running birth-death-shift chain started from the empty configuration.
pub struct Chain<'a, T: Scalar, D: Domain<T>> {
    domain: &'a D,
    model: &'a GibbsModel<T>,
    config: SimulationConfig<T>,
    shift: Normal<f64>,
    state: NeighborGrid<T>,
    log_density: f64,
    accepted: u64,
    steps: u64,
}

impl<'a, T: Scalar, D: Domain<T>> Chain<'a, T, D> {
    /// Refuses models whose conditional intensity is not bounded.
    pub fn new(domain: &'a D, model: &'a GibbsModel<T>, config: &SimulationConfig<T>) -> Result<Self> {
        config.validate()?;
        let bound = model.stability_bound();
        if !bound.is_finite() {
            return Err(Error::UnstableSpec { bound: bound.as_f64() });
        }
        if !(domain.measure() > T::zero()) {
            return Err(Error::EmptyWindow("simulation domain has zero measure".into()));
        }
        let scale = config
            .shift_scale
            .unwrap_or_else(|| T::lit(DEFAULT_SHIFT_FRACTION) * domain.diameter())
            .as_f64();
        let shift = Normal::new(0.0, scale.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidArgument(format!("shift scale: {e}")))?;
        let (lo, hi) = domain.bounds();
        let state = NeighborGrid::empty(lo, hi, model.spec.search_radius());
        Ok(Self {
            domain,
            model,
            config: config.clone(),
            shift,
            state,
            log_density: 0.0,
            accepted: 0,
            steps: 0,
        })
    }

    pub fn points(&self) -> &[MarkedPoint<T>] {
        self.state.points()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.accepted as f64 / self.steps as f64 }
    }

    /// One proposal; returns whether it was accepted.
    pub fn step(&mut self, rng: &mut ChaCha8Rng) -> bool {
        self.steps += 1;
        let c = &self.config;
        let n = self.state.len();
        let marks = self.model.marks();
        let scale = self.domain.measure().as_f64() * marks as f64;
        let draw: f64 = rng.gen();
        let accepted = if draw < c.p_birth {
            let u = self.domain.sample(rng);
            let m = rng.gen_range(0..marks);
            let lambda = self.model.papangelou(&self.state, &u, m, None).as_f64();
            let ratio = lambda * scale * c.p_death / ((n + 1) as f64 * c.p_birth);
            let ok = lambda > 0.0 && rng.gen::<f64>() < ratio;
            if ok {
                self.state.insert(MarkedPoint { location: u, mark: m });
                self.log_density += lambda.ln();
            }
            ok
        } else if draw < c.p_birth + c.p_death {
            if n == 0 {
                return false;
            }
            let k = rng.gen_range(0..n);
            let p = self.state.points()[k];
            let lambda = self.model.papangelou(&self.state, &p.location, p.mark, Some(k)).as_f64();
            let ratio = n as f64 * c.p_birth / (lambda * scale * c.p_death);
            let ok = rng.gen::<f64>() < ratio;
            if ok {
                self.state.remove(k);
                self.log_density -= lambda.ln();
            }
            ok
        } else {
            if n == 0 {
                return false;
            }
            let k = rng.gen_range(0..n);
            let p = self.state.points()[k];
            let v = Point2::new(
                p.location.x + T::lit(self.shift.sample(rng)),
                p.location.y + T::lit(self.shift.sample(rng)),
            );
            if !self.domain.contains(&v) {
                return false;
            }
            let new = self.model.papangelou(&self.state, &v, p.mark, Some(k)).as_f64();
            if !(new > 0.0) {
                return false;
            }
            let old = self.model.papangelou(&self.state, &p.location, p.mark, Some(k)).as_f64();
            let ok = rng.gen::<f64>() < new / old;
            if ok {
                self.state.remove(k);
                self.state.insert(MarkedPoint { location: v, mark: p.mark });
                self.log_density += new.ln() - old.ln();
            }
            ok
        };
        if accepted {
            self.accepted += 1;
        }
        accepted
    }

    pub fn same_type_pairs(&self) -> usize {
        let r = self.model.spec.search_radius();
        let mut count = 0;
        for (k, p) in self.state.points().iter().enumerate() {
            self.state.for_each_within(&p.location, r, |q, other, _| {
                if q > k && other.mark == p.mark {
                    count += 1;
                }
            });
        }
        count
    }

    pub fn trace_entry(&self) -> TraceEntry {
        TraceEntry {
            step: self.steps,
            n: self.state.len(),
            same_type_pairs: self.same_type_pairs(),
            log_density: self.log_density,
            acceptance_rate: self.acceptance_rate(),
        }
    }

    /// Runs to `config.steps`, tracing after burn-in.
    pub fn run(&mut self, rng: &mut ChaCha8Rng) -> Vec<TraceEntry> {
        let mut trace = Vec::new();
        let every = self.config.trace_every;
        while self.steps < self.config.steps {
            self.step(rng);
            if every > 0 && self.steps >= self.config.burn_in && (self.steps - self.config.burn_in) % every == 0 {
                trace.push(self.trace_entry());
            }
        }
        trace
    }
}

/// Random stream `stream` of the root seed; independent chains use distinct streams.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOutput<T> {
    pub pattern: MarkedPointPattern<T>,
    pub trace: Vec<TraceEntry>,
}

/// Samples one pattern on `window` from stream 0 of `config.seed`.
pub fn mh_sample<T: Scalar>(
    id: &str,
    window: &PolygonalWindow<T>,
    model: &GibbsModel<T>,
    config: &SimulationConfig<T>,
) -> Result<SimulationOutput<T>> {
    mh_sample_stream(id, window, model, config, 0)
}

pub fn mh_sample_stream<T: Scalar>(
    id: &str,
    window: &PolygonalWindow<T>,
    model: &GibbsModel<T>,
    config: &SimulationConfig<T>,
    stream: u64,
) -> Result<SimulationOutput<T>> {
    let mut chain = Chain::new(window, model, config)?;
    let mut rng = chain_rng(config.seed, stream);
    let trace = chain.run(&mut rng);
    let pattern = MarkedPointPattern::new(id, chain.points().to_vec(), window.clone())?;
    Ok(SimulationOutput { pattern, trace })
}

/// Cohort-level model: covariates act on every mark's trend through
/// `exp(effects . encode(covariates))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CohortModel<T> {
    pub marks: MarkSet,
    pub window: PolygonalWindow<T>,
    pub trend: Trend<T>,
    /// Aligned with [`ClinicalCovariates::encode`]; empty for no covariate effect.
    pub covariate_effects: Vec<T>,
    pub spec: InteractionSpec<T>,
    pub strengths: Vec<T>,
}

impl<T: Scalar> CohortModel<T> {
    pub fn patient_model(&self, covariates: Option<&ClinicalCovariates>) -> Result<GibbsModel<T>> {
        let mut trend = self.trend.clone();
        if !self.covariate_effects.is_empty() {
            let c = covariates
                .ok_or_else(|| Error::Schema("covariate effects need patient covariates".into()))?;
            let enc: Vec<T> = c.encode();
            if enc.len() != self.covariate_effects.len() {
                return Err(Error::InvalidArgument("covariate effect length mismatch".into()));
            }
            let shift: T = enc.iter().zip(&self.covariate_effects).map(|(z, b)| *z * *b).sum();
            for v in &mut trend.log_constant {
                *v += shift;
            }
        }
        GibbsModel::new(trend, self.spec.clone(), self.strengths.clone())
    }
}

/// `g` independent patients named `sim{k}`; patient `k` uses stream `k` of `config.seed`.
pub fn simulate_cohort<T: Scalar>(
    g: usize,
    covariates: impl Fn(usize) -> Option<ClinicalCovariates> + Sync,
    model: &CohortModel<T>,
    config: &SimulationConfig<T>,
) -> Result<Cohort<T>> {
    if g == 0 {
        return Err(Error::InvalidArgument("cohort size must be at least 1".into()));
    }
    let patients = (0..g)
        .into_par_iter()
        .map(|k| {
            let cov = covariates(k);
            let gibbs = model.patient_model(cov.as_ref())?;
            let out = mh_sample_stream(&format!("sim{k}"), &model.window, &gibbs, config, k as u64)?;
            Ok(Patient {
                pattern: out.pattern,
                covariates: cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(model.marks.clone(), patients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::{sufficient_statistics, PairParamMatrix};
    use crate::patterns::Stage;
    use approx::assert_relative_eq;

    fn quick(steps: u64, seed: u64) -> SimulationConfig<f64> {
        SimulationConfig {
            steps,
            burn_in: steps / 2,
            seed,
            trace_every: 0,
            ..SimulationConfig::default()
        }
    }

    fn fiksel(m: usize, h: f64, r: f64, g: f64) -> InteractionSpec<f64> {
        InteractionSpec::fiksel(PairParamMatrix::filled(m, h), PairParamMatrix::filled(m, r), PairParamMatrix::filled(m, g))
            .unwrap()
    }

    #[test]
    fn poisson_papangelou_is_trend() {
        let model = GibbsModel::new(Trend::constant(&[2.5]).unwrap(), InteractionSpec::none(1), vec![]).unwrap();
        let idx = NeighborGrid::from_points(&[MarkedPoint::new(0.5, 0.5, 0)], 0.0);
        assert_relative_eq!(model.papangelou(&idx, &Point2::new(0.4, 0.4), 0, None), 2.5, max_relative = 1e-12);
    }

    #[test]
    fn hardcore_ball_gives_zero() {
        let spec = InteractionSpec::hardcore(PairParamMatrix::filled(1, 0.3)).unwrap();
        let model = GibbsModel::new(Trend::constant(&[1.0]).unwrap(), spec, vec![]).unwrap();
        let idx = NeighborGrid::from_points(&[MarkedPoint::new(0.5, 0.5, 0)], 0.3);
        assert_eq!(model.papangelou(&idx, &Point2::new(0.6, 0.5), 0, None), 0.0);
        assert!(model.papangelou(&idx, &Point2::new(0.9, 0.5), 0, None) > 0.0);
    }

    #[test]
    fn papangelou_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..60)
            .map(|_| MarkedPoint::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0, rng.gen_range(0..2)))
            .collect();
        let w = PolygonalWindow::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        let p = MarkedPointPattern::new("x", pts.clone(), w).unwrap();
        let spec = fiksel(2, 0.0, 2.0, 0.3);
        let c = vec![0.4, -0.2, 0.1];
        let model = GibbsModel::new(Trend::constant(&[1.5, 0.7]).unwrap(), spec.clone(), c.clone()).unwrap();
        let idx = NeighborGrid::from_points(&pts, 2.0);
        for _ in 0..50 {
            let u = Point2::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0);
            let m = rng.gen_range(0..2);
            let (s, _) = sufficient_statistics(&u, m, &p, &spec);
            let b = if m == 0 { 1.5f64 } else { 0.7 };
            let direct = b * (s.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()).exp();
            assert_relative_eq!(model.papangelou(&idx, &u, m, None), direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn unbounded_attraction_is_refused() {
        let spec = InteractionSpec::strauss(PairParamMatrix::filled(1, 1.0)).unwrap();
        let model = GibbsModel::new(Trend::constant(&[1.0]).unwrap(), spec, vec![0.5]).unwrap();
        let w = PolygonalWindow::unit_square();
        assert!(matches!(Chain::new(&w, &model, &quick(10, 0)), Err(Error::UnstableSpec { .. })));
        // A repulsive Strauss model is fine.
        let spec = InteractionSpec::strauss(PairParamMatrix::filled(1, 1.0)).unwrap();
        let model = GibbsModel::new(Trend::constant(&[1.0]).unwrap(), spec, vec![-0.5]).unwrap();
        assert!(Chain::new(&w, &model, &quick(10, 0)).is_ok());
    }

    #[test]
    fn stability_bound_uses_packing() {
        // c = 1, R = 1, h = 0.5: at most (2 * 1 / 0.5 + 1)^2 = 25 neighbours, each worth exp(-0.5 * 0.1).
        let model = GibbsModel::new(Trend::constant(&[1.0]).unwrap(), fiksel(1, 0.5, 1.0, 0.1), vec![1.0]).unwrap();
        assert_relative_eq!(model.stability_bound(), 25.0 * (-0.05f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut c = quick(10, 0);
        c.p_shift = 0.5;
        assert!(c.validate().is_err());
        let mut c = quick(10, 0);
        c.burn_in = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hardcore_never_violated() {
        let spec = InteractionSpec::hardcore(PairParamMatrix::filled(2, 0.05)).unwrap();
        let model = GibbsModel::new(Trend::constant(&[150.0, 100.0]).unwrap(), spec, vec![]).unwrap();
        let w = PolygonalWindow::unit_square();
        let out = mh_sample("h", &w, &model, &quick(20_000, 1)).unwrap();
        let pts = out.pattern.points();
        assert!(pts.len() > 50);
        for (a, p) in pts.iter().enumerate() {
            for q in &pts[a + 1..] {
                assert!(p.location.distance(&q.location) > 0.05);
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let model = GibbsModel::new(Trend::constant(&[50.0]).unwrap(), fiksel(1, 0.01, 0.1, 1.0), vec![-0.5]).unwrap();
        let w = PolygonalWindow::unit_square();
        let a = mh_sample("a", &w, &model, &quick(5000, 9)).unwrap();
        let b = mh_sample("a", &w, &model, &quick(5000, 9)).unwrap();
        let c = mh_sample("a", &w, &model, &quick(5000, 10)).unwrap();
        assert_eq!(a.pattern, b.pattern);
        assert_ne!(a.pattern, c.pattern);
    }

    #[test]
    fn trace_records_after_burn_in() {
        let model = GibbsModel::new(Trend::constant(&[20.0]).unwrap(), InteractionSpec::none(1), vec![]).unwrap();
        let w = PolygonalWindow::unit_square();
        let cfg = SimulationConfig { trace_every: 100, ..quick(1000, 2) };
        let out = mh_sample("t", &w, &model, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert_eq!(out.trace[0].step, 500);
        assert_eq!(out.trace.last().unwrap().n, out.pattern.len());
    }

    #[test]
    fn zero_covariate_effect_matches_plain_cohort() {
        let base = CohortModel {
            marks: MarkSet::new(["a"]).unwrap(),
            window: PolygonalWindow::unit_square(),
            trend: Trend::constant(&[30.0]).unwrap(),
            covariate_effects: vec![],
            spec: InteractionSpec::none(1),
            strengths: vec![],
        };
        let with = CohortModel { covariate_effects: vec![0.0; 13], ..base.clone() };
        let cov = |_k: usize| {
            Some(ClinicalCovariates {
                gender_masculine: true,
                age_at_diagnosis: 70.0,
                stage: Stage::IIA,
                mhcii_low: true,
                survival_days: 1.0,
                death: false,
                recurrence_or_death: true,
                adjuvant_therapy: false,
            })
        };
        let cfg = quick(4000, 5);
        let a = simulate_cohort(3, cov, &base, &cfg).unwrap();
        let b = simulate_cohort(3, cov, &with, &cfg).unwrap();
        for (p, q) in a.patients().iter().zip(b.patients()) {
            assert_eq!(p.pattern.points(), q.pattern.points());
        }
        // A single patient is the plain sampler on stream 0.
        let one = simulate_cohort(1, |_| None, &base, &cfg).unwrap();
        let direct = mh_sample("sim0", &base.window, &base.patient_model(None).unwrap(), &cfg).unwrap();
        assert_eq!(one.patients()[0].pattern, direct.pattern);
    }
}
