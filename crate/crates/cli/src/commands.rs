use std::path::{Path, PathBuf};

use gibbsfit::diagnostics::{write_totals_csv, ComparisonTable};
use gibbsfit::fitting::{fit_menu, model_menu, profile_pl, MenuEntry, ProfileResult, MENU_LABELS};
use gibbsfit::geometry::tile_grid;
use gibbsfit::intensity::estimate_mark_intensity;
use gibbsfit::interactions::{estimate_hardcore, InteractionSpec, PairParamMatrix};
use gibbsfit::patterns::{write_pattern, Cohort, Manifest, ManifestEntry};
use gibbsfit::simulation::{mh_sample_stream, GibbsModel};
use gibbsfit::summaries::{
    default_r_grid, l_from_k, pattern_k_functions, pool_functions, suggest_max_range, write_summary_csv,
    SummaryFunction,
};
use gibbsfit::{Error, Model, Result, Window};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{read_json, Output};

type Curves = Vec<SummaryFunction<f64>>;

fn load_cohort(cfg: &RunConfig) -> Result<Cohort<f64>> {
    let path = cfg.manifest()?;
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest.load_cohort(base)
}

/// The cohort restricted to the intersection of the patient windows.
fn common_cohort(cfg: &RunConfig) -> Result<Cohort<f64>> {
    load_cohort(cfg)?.with_common_window()
}

fn has_covariates(cohort: &Cohort<f64>) -> bool {
    cohort.patients().iter().all(|p| p.covariates.is_some())
}

fn slug(label: &str) -> String {
    label.to_lowercase().replace(' ', "_")
}

// ---------------------------------------------------------------- window

#[derive(Serialize)]
struct PatientWindow {
    id: String,
    points: usize,
    area: f64,
}

#[derive(Serialize)]
struct WindowReport {
    patients: Vec<PatientWindow>,
    common_area: f64,
    window: Window,
}

pub fn window(cfg: &RunConfig, out: &Output) -> Result<()> {
    let cohort = load_cohort(cfg)?;
    let patients: Vec<_> = cohort
        .patients()
        .iter()
        .map(|p| PatientWindow {
            id: p.pattern.id().to_string(),
            points: p.pattern.len(),
            area: p.pattern.window().area(),
        })
        .collect();
    let common = cohort.intersect_windows()?;
    for p in &patients {
        println!("{:<24} n={:<8} area={:.6}", p.id, p.points, p.area);
    }
    println!("{:<24} {:<10} area={:.6}", "common", "", common.area());
    out.json(
        "window.json",
        &WindowReport {
            patients,
            common_area: common.area(),
            window: common,
        },
    )?;
    Ok(())
}

// ------------------------------------------------------------- summaries

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxRange {
    pub value: f64,
    /// `user` when supplied, `suggested` when taken from the pooled L curves.
    pub source: String,
    pub suggested: Option<f64>,
}

struct Summaries {
    per_patient: Vec<(String, Curves)>,
    pooled: Curves,
    max_range: MaxRange,
}

fn compute_summaries(cfg: &RunConfig, cohort: &Cohort<f64>) -> Result<Summaries> {
    let window = cohort
        .common_window()
        .ok_or_else(|| Error::InvalidArgument("cohort has no common window".into()))?;
    let rgrid = default_r_grid(window, cfg.r_steps);
    let grid = tile_grid(window, cfg.grid, cfg.grid)?;
    let marks = cohort.marks().len();
    let per_patient = cohort
        .patients()
        .par_iter()
        .map(|p| {
            let surfaces = (0..marks)
                .map(|m| Ok(estimate_mark_intensity(&p.pattern, m, &grid, None)?.0))
                .collect::<Result<Vec<_>>>()?;
            Ok((p.pattern.id().to_string(), pattern_k_functions(&p.pattern, &surfaces, &rgrid)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = Vec::new();
    for pair in 0..per_patient[0].1.len() {
        let curves: Vec<_> = per_patient.iter().map(|(_, c)| c[pair].clone()).collect();
        match pool_functions(&curves) {
            Ok(k) => pooled.push(k),
            Err(Error::AllEmpty(i, j)) => log::warn!("pair ({i}, {j}) is empty in every patient"),
            Err(e) => return Err(e),
        }
    }
    let pooled_l: Vec<_> = pooled.iter().map(l_from_k).collect();
    let suggested = suggest_max_range(&pooled_l);
    let max_range = match (cfg.max_range, suggested) {
        (Some(value), _) => MaxRange { value, source: "user".into(), suggested },
        (None, Some(value)) => MaxRange { value, source: "suggested".into(), suggested },
        (None, None) => {
            return Err(Error::InvalidArgument(
                "no pooled L curve is available to suggest a max range; pass --max-range".into(),
            ))
        }
    };
    Ok(Summaries {
        per_patient,
        pooled,
        max_range,
    })
}

fn print_pooled_table(cohort: &Cohort<f64>, pooled: &Curves) {
    let Some(first) = pooled.first() else { return };
    let marks = cohort.marks();
    let ls: Vec<_> = pooled.iter().map(l_from_k).collect();
    print!("{:>12}", "r");
    for l in &ls {
        print!(" {:>16}", format!("L {}:{}", marks.label(l.i), marks.label(l.j)));
    }
    println!();
    let stride = (first.r.len() / 16).max(1);
    for k in (0..first.r.len()).step_by(stride) {
        print!("{:>12.4}", first.r[k]);
        for l in &ls {
            print!(" {:>16.4}", l.values[k]);
        }
        println!();
    }
}

fn echo_max_range(m: &MaxRange) {
    println!("max range: {:.4} ({})", m.value, m.source);
}

pub fn summaries(cfg: &RunConfig, out: &Output) -> Result<()> {
    let cohort = common_cohort(cfg)?;
    let s = compute_summaries(cfg, &cohort)?;
    let mut series = s.per_patient;
    series.push(("pooled".into(), s.pooled.clone()));
    out.csv("summaries.csv", |buf| write_summary_csv(buf, cohort.marks(), &series))?;
    out.json("max_range.json", &s.max_range)?;
    print_pooled_table(&cohort, &s.pooled);
    echo_max_range(&s.max_range);
    Ok(())
}

// --------------------------------------------------------------- profile

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub max_range: MaxRange,
    pub hardcore: PairParamMatrix<f64>,
    pub unobserved_pairs: Vec<(usize, usize)>,
    pub r_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub spec: InteractionSpec<f64>,
    pub log_pl: f64,
    pub sweeps: usize,
    pub border: f64,
}

fn run_profile(cfg: &RunConfig, cohort: &Cohort<f64>, out: &Output) -> Result<ProfileReport> {
    let max_range = match cfg.max_range {
        Some(value) => MaxRange { value, source: "user".into(), suggested: None },
        None => compute_summaries(cfg, cohort)?.max_range,
    };
    echo_max_range(&max_range);
    let hc = estimate_hardcore(cohort, false)?;
    let h_max = hc.matrix.max_entry();
    let r_grid: Vec<f64> = match &cfg.r_grid {
        Some(g) => g.clone(),
        None => {
            let n = cfg.r_grid_size;
            (1..=n).map(|k| max_range.value * k as f64 / n as f64).collect()
        }
    };
    let r_grid: Vec<f64> = r_grid.into_iter().filter(|r| *r > h_max).collect();
    if r_grid.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no candidate range exceeds the largest hardcore distance {h_max}"
        )));
    }
    let m = cohort.marks().len();
    let start = r_grid[r_grid.len() / 2];
    let template = InteractionSpec::fiksel(
        hc.matrix.clone(),
        PairParamMatrix::filled(m, start),
        PairParamMatrix::filled(m, cfg.gamma_grid[cfg.gamma_grid.len() / 2]),
    )?;
    let fit_cfg = cfg.fit_config(has_covariates(cohort));
    let result: ProfileResult<f64> = profile_pl(cohort, &template, &r_grid, &cfg.gamma_grid, &fit_cfg)?;
    out.csv("profile_trace.csv", |buf| result.write_trace_csv(buf))?;
    let report = ProfileReport {
        max_range,
        hardcore: hc.matrix,
        unobserved_pairs: hc.missing,
        r_grid,
        gamma_grid: cfg.gamma_grid.clone(),
        spec: result.spec,
        log_pl: result.log_pl,
        sweeps: result.sweeps,
        border: result.border,
    };
    out.json("profile.json", &report)?;
    println!("profile log-PL {:.6} after {} sweep(s)", report.log_pl, report.sweeps);
    Ok(report)
}

pub fn profile(cfg: &RunConfig, out: &Output) -> Result<()> {
    let cohort = common_cohort(cfg)?;
    run_profile(cfg, &cohort, out).map(|_| ())
}

// ------------------------------------------------------------------- fit

fn select_models(selection: &str, menu: Vec<MenuEntry<f64>>) -> Result<Vec<MenuEntry<f64>>> {
    if selection.trim().eq_ignore_ascii_case("all") {
        return Ok(menu);
    }
    let norm = |s: &str| s.to_lowercase().replace([' ', '_', '-'], "");
    let wanted: Vec<String> = selection.split(',').map(norm).filter(|s| !s.is_empty()).collect();
    if let Some(w) = wanted.iter().find(|w| !MENU_LABELS.iter().any(|l| norm(l) == **w)) {
        return Err(Error::InvalidArgument(format!(
            "unknown model {w:?}; expected `all` or some of {MENU_LABELS:?}"
        )));
    }
    Ok(menu.into_iter().filter(|e| wanted.contains(&norm(&e.label))).collect())
}

#[derive(Serialize)]
struct FitStatus {
    label: String,
    file: Option<String>,
    error_kind: Option<&'static str>,
    error: Option<String>,
}

/// Returns the number of failed fits.
pub fn fit(cfg: &RunConfig, out: &Output) -> Result<usize> {
    let cohort = common_cohort(cfg)?;
    let report = match &cfg.profile {
        Some(p) => read_json::<ProfileReport>(p)?,
        None => run_profile(cfg, &cohort, out)?,
    };
    let spec = &report.spec;
    let (Some(h), Some(r), Some(g)) = (spec.hardcore_matrix(), spec.range_matrix(), spec.slope_matrix()) else {
        return Err(Error::Schema("profile spec lacks hardcore, range or slope matrices".into()));
    };
    let covariates = has_covariates(&cohort);
    let mut entries = select_models(&cfg.models, model_menu(h, r, g)?)?;
    if !covariates {
        log::warn!("the manifest binds no covariates; fitting every model without them");
        for e in &mut entries {
            e.use_covariates = false;
        }
    }
    let fits = fit_menu(&cohort, &entries, &cfg.fit_config(covariates))?;
    let mut status = Vec::new();
    let mut failed = 0;
    for (entry, fit) in entries.iter().zip(fits) {
        match fit {
            Ok(model) => {
                let name = slug(&entry.label);
                out.json(&format!("models/{name}.json"), &model)?;
                out.csv(&format!("models/{name}_coefficients.csv"), |buf| model.write_coefficients_csv(buf))?;
                println!("{:<14} log-PL {:.6}", entry.label, model.log_pl);
                status.push(FitStatus {
                    label: entry.label.clone(),
                    file: Some(format!("models/{name}.json")),
                    error_kind: None,
                    error: None,
                });
            }
            Err(e) => {
                failed += 1;
                crate::report_error(&e, Some(&entry.label));
                status.push(FitStatus {
                    label: entry.label.clone(),
                    file: None,
                    error_kind: Some(e.kind()),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    out.json("fit_summary.json", &serde_json::json!({ "models": status }))?;
    Ok(failed)
}

// ------------------------------------------------------------- residuals

fn model_files(cfg: &RunConfig, out: &Output) -> Result<Vec<PathBuf>> {
    if !cfg.model_files.is_empty() {
        return Ok(cfg.model_files.clone());
    }
    let dir = out.path("models");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::InvalidArgument(format!("no model files given and {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no model files in {}", dir.display())));
    }
    Ok(files)
}

fn read_model(path: &Path) -> Result<Model> {
    let model: Model = read_json(path)?;
    model.spec.validate()?;
    Ok(model)
}

pub fn residuals(cfg: &RunConfig, out: &Output) -> Result<()> {
    let cohort = common_cohort(cfg)?;
    let mut table = ComparisonTable::default();
    let mut totals = Vec::new();
    for path in model_files(cfg, out)? {
        let model = read_model(&path)?;
        if model.marks != *cohort.marks() {
            return Err(Error::Schema(format!("{} was fitted with another mark set", path.display())));
        }
        totals.push((model.label.clone(), table.add_model(&model, &cohort)?));
    }
    out.csv("residual_totals.csv", |buf| write_totals_csv(buf, cohort.marks().labels(), &totals))?;
    out.csv("comparison.csv", |buf| table.write_csv(buf))?;
    println!("{:<14} {:>12} {:>12} {:>12}", "model", "raw", "pearson", "inverse");
    for row in &table.rows {
        println!("{:<14} {:>12.4} {:>12.4} {:>12.4}", row.label, row.rmse[0], row.rmse[1], row.rmse[2]);
    }
    Ok(())
}

// -------------------------------------------------------------- simulate

pub fn simulate(cfg: &RunConfig, out: &Output) -> Result<()> {
    let files = model_files(cfg, out)?;
    let [path] = files.as_slice() else {
        return Err(Error::InvalidArgument("simulate needs exactly one model file (--model)".into()));
    };
    let model = read_model(path)?;
    let cohort = common_cohort(cfg)?;
    let sim_cfg = cfg.simulation_config();
    sim_cfg.validate()?;
    let outputs = cohort
        .patients()
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let id = p.pattern.id();
            let ctx = model
                .patient(id)
                .ok_or_else(|| Error::Schema(format!("patient {id} is not part of the fitted model")))?;
            let gibbs = GibbsModel::from_fitted(&model, ctx)?;
            mh_sample_stream(id, p.pattern.window(), &gibbs, &sim_cfg, k as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let marks = cohort.marks();
    let mut entries = Vec::new();
    for sim in &outputs {
        let id = sim.pattern.id();
        out.csv(&format!("sim/{id}.csv"), |buf| write_pattern(&sim.pattern, marks, buf))?;
        out.json(&format!("sim/{id}_window.json"), sim.pattern.window())?;
        entries.push(ManifestEntry {
            id: id.to_string(),
            cells: PathBuf::from(format!("{id}.csv")),
            covariate_row: None,
            window: Some(PathBuf::from(format!("{id}_window.json"))),
        });
        println!("{:<24} n={}", id, sim.pattern.len());
    }
    out.csv("sim/trace.csv", |buf| write_trace(buf, &outputs))?;
    // The simulated cohort is itself a valid manifest input (without covariates).
    let manifest = Manifest {
        marks: marks.labels().to_vec(),
        covariates: None,
        patients: entries,
    };
    out.json("sim/manifest.json", &manifest)?;
    Ok(())
}

fn write_trace(buf: &mut Vec<u8>, outputs: &[gibbsfit::simulation::SimulationOutput<f64>]) -> Result<()> {
    use std::io::Write;
    writeln!(buf, "patient,step,n,same_type_pairs,log_density,acceptance_rate")?;
    for o in outputs {
        for t in &o.trace {
            writeln!(
                buf,
                "{},{},{},{},{},{}",
                o.pattern.id(),
                t.step,
                t.n,
                t.same_type_pairs,
                t.log_density,
                t.acceptance_rate
            )?;
        }
    }
    Ok(())
}
