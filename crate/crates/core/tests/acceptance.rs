//! Acceptance suite: one pass/fail line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=3,4` to run a subset.

mod common;

use std::time::Instant;

use common::*;
use gibbsfit::diagnostics::{residual_total, ComparisonTable, ResidualKind};
use gibbsfit::fitting::{
    fit_cohort, fit_menu, make_quadrature, model_menu, profile_pl, FitConfig, FittedModel, MENU_LABELS,
};
use gibbsfit::geometry::{erode_border, tile_grid, Point2, PolygonalWindow};
use gibbsfit::intensity::estimate_mark_intensity;
use gibbsfit::interactions::{
    estimate_hardcore, fiksel_phi, FikselParams, InteractionSpec, NeighborGrid, PairParamMatrix,
};
use gibbsfit::patterns::{Cohort, MarkedPoint, MarkedPointPattern, Patient};
use gibbsfit::simulation::{mh_sample_stream, Chain, DiscreteSites, GibbsModel, SimulationConfig, Trend};
use gibbsfit::summaries::{default_r_grid, k_inhom_cross, l_from_k, pool_functions, DEFAULT_R_STEPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn plain() -> FitConfig<f64> {
    FitConfig {
        use_offset: false,
        use_covariates: false,
        ..FitConfig::default()
    }
}

/// Intercept-only fits to CSR patterns recover the log intensity.
fn poisson_recovery() -> Outcome {
    let start = Instant::now();
    let rate = 200.0;
    let intercepts: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
            let p = csr(&mut rng, &format!("csr{k}"), rate, 1.0, 1.0, 1);
            let model = fit_cohort(&cohort_of(vec![p], 1), &InteractionSpec::none(1), &plain()).unwrap();
            model.coefficients[0].estimate
        })
        .collect();
    let mean = intercepts.iter().sum::<f64>() / intercepts.len() as f64;
    let err = (mean - rate.ln()).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err < 0.02 && secs < 60.0,
        format!("mean intercept {mean:.4} vs log 200 = {:.4} (|diff| {err:.4} < 0.02), {secs:.1}s < 60s", rate.ln()),
    )
}

/// Log-PL evaluated from the fitted conditional intensity equals the solver's objective.
fn glm_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + k);
        let patterns: Vec<_> = (0..2).map(|g| csr(&mut rng, &format!("p{g}"), 0.4, 20.0, 20.0, 2)).collect();
        let cohort = cohort_of(patterns, 2);
        let hmin = estimate_hardcore(&cohort, true).unwrap().matrix.min_entry();
        let h = hmin * rng.gen_range(0.0..0.9);
        let r = rng.gen_range(1.5..4.0);
        let g = rng.gen_range(-0.2..0.3);
        let spec = fiksel_spec(2, h, r, g);
        let config = FitConfig {
            use_covariates: false,
            dummy_side: Some(32),
            ..FitConfig::default()
        };
        let model = fit_cohort(&cohort, &spec, &config).unwrap();
        let mut direct = 0.0;
        for (p, ctx) in cohort.patients().iter().zip(&model.patients) {
            let index = NeighborGrid::from_points(p.pattern.points(), spec.search_radius());
            let grid = tile_grid(&ctx.domain, 32, 32).unwrap();
            let quad = make_quadrature(&p.pattern, &grid, 2).unwrap();
            for q in quad.points() {
                let lambda = model.lambda_at(ctx, &index, &q.location, q.mark, q.data);
                direct -= q.weight * lambda;
                if q.is_data() {
                    direct += lambda.ln();
                }
            }
        }
        worst = worst.max((direct - model.log_pl).abs() / model.log_pl.abs());
    }
    outcome(worst < 1e-6, format!("max relative gap over 20 designs {worst:.2e} < 1e-6"))
}

// Dilute regime. Denser windows or longer runs of this strongly attractive
// model nucleate packed clusters, and a chain caught mid-nucleation no longer
// follows the model's local specification.
const C3_SIDE: f64 = 120.0;
const C3_RATE: f64 = 0.0015;
const C3_STEPS: u64 = 8_000;

fn c3_truth() -> (InteractionSpec<f64>, Vec<f64>) {
    (fiksel_spec(2, 0.5, 5.0, 0.1), vec![0.8, 0.0, 0.8])
}

fn c3_cohort(experiment: u64) -> Cohort<f64> {
    let (spec, strengths) = c3_truth();
    let model = cohort_model(2, C3_SIDE, C3_RATE, spec, strengths);
    simulate(&model, 20, C3_STEPS, 3000 + experiment)
}

/// Strengths of a simulated two-mark Fiksel cohort are recovered with the true irregular parameters.
fn fiksel_recovery() -> Outcome {
    let start = Instant::now();
    let (spec, truth) = c3_truth();
    let hits: Vec<[bool; 3]> = (0..20u64)
        .into_par_iter()
        .map(|e| {
            let model = fit_cohort(&c3_cohort(e), &spec, &plain()).unwrap();
            let mut hit = [false; 3];
            for (k, c) in model.strengths().iter().enumerate() {
                hit[k] = (c.estimate - truth[k]).abs() <= 3.0 * c.std_error;
            }
            hit
        })
        .collect();
    let counts: Vec<usize> = (0..3).map(|k| hits.iter().filter(|h| h[k]).count()).collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        counts.iter().all(|c| *c >= 18) && secs < 600.0,
        format!("within 3 SE per strength (m0:m0, m0:m1, m1:m1) {counts:?} of 20, need >= 18; {secs:.0}s < 600s"),
    )
}

/// Profile PL selects the true range on simulated single-mark cohorts.
fn profile_recovery() -> Outcome {
    let truth = fiksel_spec(1, 0.5, 5.0, 0.1);
    let grid = [3.0, 4.0, 5.0, 6.0, 7.0];
    let picks: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|e| {
            let model = cohort_model(1, 60.0, 0.05, truth.clone(), vec![-1.0]);
            let cohort = simulate(&model, 5, 40_000, 4000 + e);
            let res = profile_pl(&cohort, &truth, &grid, &[0.1], &plain()).unwrap();
            res.spec.range_matrix().unwrap().get(0, 0)
        })
        .collect();
    let hits = picks.iter().filter(|r| **r == 5.0).count();
    outcome(hits >= 8, format!("selected R = 5 in {hits}/10 runs (need >= 8); picks {picks:?}"))
}

/// Minimum-distance hardcore estimate on simulated hardcore patterns.
fn hardcore_estimator() -> Outcome {
    let spec = InteractionSpec::hardcore(PairParamMatrix::filled(1, 0.5)).unwrap();
    let gibbs = GibbsModel::new(Trend::constant(&[1.5]).unwrap(), spec, vec![]).unwrap();
    let window = PolygonalWindow::rectangle(0.0, 0.0, 20.0, 20.0).unwrap();
    let results: Vec<(usize, f64)> = (0..10u64)
        .into_par_iter()
        .map(|k| {
            let out = mh_sample_stream(&format!("hc{k}"), &window, &gibbs, &sim_config(60_000, 5000), k).unwrap();
            let n = out.pattern.len();
            let est = estimate_hardcore(&cohort_of(vec![out.pattern], 1), false).unwrap();
            (n, est.matrix.get(0, 0))
        })
        .collect();
    let inside = results.iter().filter(|(_, h)| (0.5..=0.55).contains(h)).count();
    let above = results.iter().all(|(_, h)| *h >= 0.5);
    let mean_n = results.iter().map(|(n, _)| *n as f64).sum::<f64>() / 10.0;
    outcome(
        inside >= 9 && above,
        format!("h in [0.5, 0.55] in {inside}/10 (need >= 9), all >= 0.5: {above}; mean n {mean_n:.0}"),
    )
}

/// Sampler matches an enumerated toy distribution and calibrated Poisson counts.
fn sampler_correctness() -> Outcome {
    // Toy: three sites, two marks, Strauss-hardcore interaction.
    let sites = DiscreteSites(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.5, 0.0)]);
    let spec = InteractionSpec::strauss_hardcore(PairParamMatrix::filled(2, 0.5), PairParamMatrix::filled(2, 1.6)).unwrap();
    let strengths = vec![-0.7, 0.4, 0.3];
    let b = [0.9, 0.6];
    let gibbs = GibbsModel::new(Trend::constant(&b).unwrap(), spec, strengths.clone()).unwrap();
    let slot = |a: usize, c: usize| if a == c { 2 * a } else { 1 };
    let states: Vec<[Option<usize>; 3]> = (0..27)
        .map(|code: usize| {
            let mut s = [None; 3];
            for (k, v) in s.iter_mut().enumerate() {
                let d = (code / 3usize.pow(k as u32)) % 3;
                *v = if d == 0 { None } else { Some(d - 1) };
            }
            s
        })
        .collect();
    let weight = |s: &[Option<usize>; 3]| {
        let mut logw = 0.0;
        for k in 0..3 {
            if let Some(m) = s[k] {
                logw += f64::ln(b[m]);
                for l in k + 1..3 {
                    if let Some(m2) = s[l] {
                        if sites.0[k].distance(&sites.0[l]) <= 1.6 {
                            logw += strengths[slot(m, m2)];
                        }
                    }
                }
            }
        }
        f64::exp(logw)
    };
    let z: f64 = states.iter().map(weight).sum();
    let config = SimulationConfig {
        steps: 3_000_000,
        burn_in: 1000,
        p_birth: 0.5,
        p_death: 0.5,
        p_shift: 0.0,
        seed: 6000,
        trace_every: 0,
        ..SimulationConfig::default()
    };
    let mut chain = Chain::new(&sites, &gibbs, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let mut counts = vec![0u64; 27];
    for step in 0..config.steps {
        chain.step(&mut rng);
        if step < config.burn_in {
            continue;
        }
        let mut code = 0;
        for p in chain.points() {
            let k = sites.0.iter().position(|s| *s == p.location).unwrap();
            code += (p.mark + 1) * 3usize.pow(k as u32);
        }
        counts[code] += 1;
    }
    let total = counts.iter().sum::<u64>() as f64;
    let tv = 0.5
        * states
            .iter()
            .zip(&counts)
            .map(|(s, c)| (*c as f64 / total - weight(s) / z).abs())
            .sum::<f64>();

    // Poisson calibration: mean count of 500 runs.
    let rate = 100.0;
    let poisson = GibbsModel::new(Trend::constant(&[rate]).unwrap(), InteractionSpec::none(1), vec![]).unwrap();
    let window = PolygonalWindow::unit_square();
    let ns: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|k| mh_sample_stream("p", &window, &poisson, &sim_config(4000, 6001), k).unwrap().pattern.len() as f64)
        .collect();
    let mean = ns.iter().sum::<f64>() / 500.0;
    let bound = 3.0 * (rate / 500.0f64).sqrt();
    outcome(
        tv < 0.02 && (mean - rate).abs() < bound,
        format!("toy TV {tv:.4} < 0.02; Poisson mean count {mean:.2} vs 100 (|diff| < {bound:.2})"),
    )
}

fn pooled_l_minus_r(cohort_seed: u64) -> Vec<f64> {
    let window = PolygonalWindow::unit_square();
    let rgrid = default_r_grid(&window, DEFAULT_R_STEPS);
    let grid = tile_grid(&window, 32, 32).unwrap();
    let curves: Vec<_> = (0..20u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cohort_seed * 1000 + k);
            let p = csr(&mut rng, "c", 100.0, 1.0, 1.0, 1);
            let (s, _) = estimate_mark_intensity(&p, 0, &grid, None).unwrap();
            l_from_k(&k_inhom_cross(&p, 0, 0, &s, &s, &rgrid).unwrap())
        })
        .collect();
    let pooled = pool_functions(&curves).unwrap();
    pooled.values.iter().zip(&pooled.r).map(|(l, r)| l - r).collect()
}

/// Pooled L - r of a CSR cohort lies inside the global envelope of 99 simulated cohorts.
fn summary_calibration() -> Outcome {
    let observed = pooled_l_minus_r(7000);
    let sims: Vec<Vec<f64>> = (0..99u64).into_par_iter().map(|s| pooled_l_minus_r(7001 + s)).collect();
    let max_dev = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let envelope = sims.iter().map(|v| max_dev(v)).fold(0.0f64, f64::max);
    let obs = max_dev(&observed);
    outcome(
        obs <= envelope,
        format!("observed max |L - r| {obs:.4} <= global envelope {envelope:.4} from 99 simulated cohorts"),
    )
}

/// Raw residuals of a fixed fitted model on its own simulations centre at 0; Poisson loses on RMSE.
fn residual_centering(fitted: &FittedModel<f64>, cohort: &Cohort<f64>) -> Outcome {
    let ctx = &fitted.patients[0];
    let window = cohort.patients()[0].pattern.window().clone();
    let gibbs = GibbsModel::from_fitted(fitted, ctx).unwrap();
    let totals: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let out = mh_sample_stream("r", &window, &gibbs, &sim_config(C3_STEPS, 8000), k).unwrap();
            (0..2)
                .map(|m| residual_total(fitted, ctx, &out.pattern, m, ResidualKind::Raw).unwrap().value)
                .sum::<f64>()
        })
        .collect();
    let mean = totals.iter().sum::<f64>() / 100.0;
    let sd = (totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    let se = sd / 10.0;

    let poisson = fit_cohort(cohort, &InteractionSpec::none(2), &plain()).unwrap();
    let mut table = ComparisonTable::default();
    table.add_model(fitted, cohort).unwrap();
    table.add_model(&poisson, cohort).unwrap();
    let (fik, poi) = (table.rows[0].rmse[0], table.rows[1].rmse[0]);
    outcome(
        mean.abs() <= 2.0 * se && poi > fik,
        format!("mean raw total {mean:.3} (2 SE = {:.3}); raw RMSE Poisson {poi:.3} > Fiksel {fik:.3}", 2.0 * se),
    )
}

/// Spot checks against printed values and the model menu.
fn published_spot_checks() -> Outcome {
    let params = FikselParams {
        hardcore: PairParamMatrix::filled(1, 0.498),
        strength: PairParamMatrix::filled(1, 1.3052),
        slope: PairParamMatrix::filled(1, 0.110),
        range: PairParamMatrix::filled(1, 27.11),
    };
    let phi: f64 = fiksel_phi(0, 0, 10.0, &params);
    let printed = format!("{:.4}", (-5.459f64).exp());

    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    let patients: Vec<Patient<f64>> = (0..20)
        .map(|k| Patient {
            pattern: csr(&mut rng, &format!("p{k}"), 0.3, 25.0, 25.0, 2),
            covariates: Some(random_covariates(&mut rng)),
        })
        .collect();
    let cohort = Cohort::new(labels(2), patients).unwrap();
    let h = estimate_hardcore(&cohort, true).unwrap().matrix;
    let menu = model_menu(&h, &PairParamMatrix::filled(2, 3.0), &PairParamMatrix::filled(2, 0.1)).unwrap();
    let labels_ok = menu.iter().map(|e| e.label.as_str()).eq(MENU_LABELS);
    let config = FitConfig {
        dummy_side: Some(32),
        ..FitConfig::default()
    };
    let fitted = fit_menu(&cohort, &menu, &config).unwrap();
    let ok = fitted.iter().filter(|f| f.is_ok()).count();
    outcome(
        (phi - 0.43446).abs() <= 1e-4 && printed == "0.0043" && labels_ok && ok == 8,
        format!("Phi(10) = {phi:.5} (0.43446 +/- 1e-4); exp(-5.459) = {printed}; menu labels ok {labels_ok}, {ok}/8 fitted"),
    )
}

fn random_polygon(rng: &mut ChaCha8Rng) -> PolygonalWindow<f64> {
    let n = rng.gen_range(3..12);
    // Jittered equal sectors keep the ring star-shaped about its center.
    let sector = std::f64::consts::TAU / n as f64;
    let angles: Vec<f64> = (0..n).map(|k| (k as f64 + rng.gen_range(0.0..0.9)) * sector).collect();
    let ring = angles
        .iter()
        .map(|a| {
            let r = rng.gen_range(2.0..10.0);
            Point2::new(20.0 + r * a.cos(), 20.0 + r * a.sin())
        })
        .collect();
    PolygonalWindow::from_rings(vec![ring]).unwrap()
}

/// Tile areas and quadrature weights sum to the window area.
fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 50 {
        let w = random_polygon(&mut rng);
        if w.area() < 1.0 {
            continue;
        }
        done += 1;
        let side = rng.gen_range(4..40);
        let grid = tile_grid(&w, side, side + 3).unwrap();
        worst = worst.max((grid.total_area() - w.area()).abs() / w.area());
        let (lo, hi) = w.bounding_box();
        let pts: Vec<_> = (0..200)
            .map(|_| MarkedPoint::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(0..2)))
            .filter(|p| w.contains(&p.location))
            .collect();
        let p = MarkedPointPattern::new("w", pts, w.clone()).unwrap();
        let eroded = erode_border(&w, 0.5).unwrap();
        for dom in [&w, &eroded] {
            let g = tile_grid(dom, side, side).unwrap();
            let q = make_quadrature(&p, &g, 2).unwrap();
            for m in 0..2 {
                worst = worst.max((q.weight_sum(m) - dom.area()).abs() / dom.area());
            }
        }
    }
    outcome(worst < 1e-6, format!("max relative area error over 50 polygons {worst:.2e} < 1e-6"))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().map_or(true, |o| o.contains(&k));
    let mut failed = Vec::new();
    let mut report = |k: usize, name: &str, run: &dyn Fn() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {k:>2} [{status}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(k);
        }
    };
    report(1, "Poisson recovery", &poisson_recovery);
    report(2, "GLM objective equivalence", &glm_equivalence);
    report(3, "Fiksel strength recovery", &fiksel_recovery);
    report(4, "profile range recovery", &profile_recovery);
    report(5, "hardcore estimator", &hardcore_estimator);
    report(6, "sampler correctness", &sampler_correctness);
    report(7, "summary calibration", &summary_calibration);
    report(8, "residual centering", &|| {
        let cohort = c3_cohort(0);
        let (spec, _) = c3_truth();
        let fitted = fit_cohort(&cohort, &spec, &plain()).unwrap();
        residual_centering(&fitted, &cohort)
    });
    report(9, "published spot checks", &published_spot_checks);
    report(10, "area and weight conservation", &conservation);
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
