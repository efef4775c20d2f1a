//! Marked point patterns, clinical covariates and cohort ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect_windows, ripley_rasson_window, Point2, PolygonalWindow};
use crate::scalar::Scalar;

/// Ordered, distinct type labels; the order indexes every parameter matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct MarkSet {
    labels: Vec<String>,
}

impl TryFrom<Vec<String>> for MarkSet {
    type Error = Error;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        MarkSet::new(labels)
    }
}

impl From<MarkSet> for Vec<String> {
    fn from(m: MarkSet) -> Self {
        m.labels
    }
}

impl MarkSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Schema("mark set is empty".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Schema(format!("duplicate mark label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MarkedPoint<T> {
    pub location: Point2<T>,
    pub mark: usize,
}

impl<T: Scalar> MarkedPoint<T> {
    pub fn new(x: T, y: T, mark: usize) -> Self {
        Self {
            location: Point2::new(x, y),
            mark,
        }
    }
}

/// One patient's cell map: typed locations observed in a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MarkedPointPattern<T> {
    id: String,
    points: Vec<MarkedPoint<T>>,
    window: PolygonalWindow<T>,
}

impl<T: Scalar> MarkedPointPattern<T> {
    pub fn new(
        id: impl Into<String>,
        points: Vec<MarkedPoint<T>>,
        window: PolygonalWindow<T>,
    ) -> Result<Self> {
        let id = id.into();
        if let Some(k) = points.iter().position(|p| !window.contains(&p.location)) {
            return Err(Error::Schema(format!(
                "pattern {id}: point {k} at ({}, {}) lies outside the window",
                points[k].location.x, points[k].location.y
            )));
        }
        Ok(Self { id, points, window })
    }

    /// Builds a pattern whose window is the Ripley–Rasson estimate from the points.
    pub fn with_estimated_window(id: impl Into<String>, points: Vec<MarkedPoint<T>>) -> Result<Self> {
        let id = id.into();
        if points.is_empty() {
            return Err(Error::EmptyPattern(id));
        }
        let locs: Vec<_> = points.iter().map(|p| p.location).collect();
        let window = ripley_rasson_window(&locs)?;
        Self::new(id, points, window)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[MarkedPoint<T>] {
        &self.points
    }

    pub fn window(&self) -> &PolygonalWindow<T> {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn of_mark(&self, mark: usize) -> impl Iterator<Item = &Point2<T>> + '_ {
        self.points
            .iter()
            .filter(move |p| p.mark == mark)
            .map(|p| &p.location)
    }

    pub fn counts_by_mark(&self, marks: usize) -> Vec<usize> {
        let mut counts = vec![0; marks];
        for p in &self.points {
            if p.mark < marks {
                counts[p.mark] += 1;
            }
        }
        counts
    }

    /// Keeps the points inside `window` and attaches it.
    ///
    /// Fails with an empty-window error when `window` does not overlap the
    /// current window.
    pub fn restrict(&self, window: &PolygonalWindow<T>) -> Result<Self> {
        intersect_windows(&[self.window.clone(), window.clone()])?;
        Ok(Self {
            id: self.id.clone(),
            points: self
                .points
                .iter()
                .filter(|p| window.contains(&p.location))
                .copied()
                .collect(),
            window: window.clone(),
        })
    }

    /// Minimum distance between a type-`i` and a distinct type-`j` point.
    ///
    /// `None` when the pair is not observable (no point of a type, or fewer
    /// than two points when `i == j`).
    pub fn min_cross_nn_distance(&self, i: usize, j: usize) -> Option<T> {
        let mut a: Vec<(usize, Point2<T>)> = Vec::new();
        let mut b: Vec<(usize, Point2<T>)> = Vec::new();
        for (k, p) in self.points.iter().enumerate() {
            if p.mark == i {
                a.push((k, p.location));
            }
            if p.mark == j {
                b.push((k, p.location));
            }
        }
        if a.is_empty() || b.is_empty() || (i == j && a.len() < 2) {
            return None;
        }
        b.sort_by(|p, q| p.1.x.partial_cmp(&q.1.x).unwrap());
        let mut best = T::infinity();
        for (ka, pa) in &a {
            let start = b.partition_point(|(_, q)| q.x < pa.x);
            // Sweep right, then left, while the x gap alone can still beat `best`.
            for (kb, pb) in &b[start..] {
                if pb.x - pa.x > best {
                    break;
                }
                if ka != kb {
                    best = best.min(pa.distance(pb));
                }
            }
            for (kb, pb) in b[..start].iter().rev() {
                if pa.x - pb.x > best {
                    break;
                }
                if ka != kb {
                    best = best.min(pa.distance(pb));
                }
            }
        }
        Some(best)
    }
}

/// Reads a cell table (`x,y,phenotype`) into a pattern.
///
/// Lines starting with `#` are ignored. Without an explicit window, the
/// Ripley–Rasson window of the points is used.
pub fn load_pattern<T: Scalar, R: Read>(
    reader: R,
    marks: &MarkSet,
    id: &str,
    window: Option<PolygonalWindow<T>>,
) -> Result<MarkedPointPattern<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("cell table for {id} lacks column {name:?}")))
    };
    let (cx, cy, cp) = (col("x")?, col("y")?, col("phenotype")?);
    let mut points = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<T> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::lit)
                .ok_or_else(|| Error::Schema(format!("{id} row {}: bad coordinate {raw:?}", line + 1)))
        };
        let label = rec.get(cp).unwrap_or("");
        let mark = marks
            .index_of(label)
            .ok_or_else(|| Error::Schema(format!("{id} row {}: unknown phenotype {label:?}", line + 1)))?;
        points.push(MarkedPoint::new(num(cx)?, num(cy)?, mark));
    }
    if points.is_empty() {
        return Err(Error::EmptyPattern(id.to_string()));
    }
    match window {
        Some(w) => MarkedPointPattern::new(id, points, w),
        None => MarkedPointPattern::with_estimated_window(id, points),
    }
}

pub fn load_pattern_file<T: Scalar>(
    path: &Path,
    marks: &MarkSet,
    id: &str,
    window: Option<PolygonalWindow<T>>,
) -> Result<MarkedPointPattern<T>> {
    load_pattern(File::open(path)?, marks, id, window)
}

/// Writes a pattern in the cell-table format read by [`load_pattern`].
pub fn write_pattern<T: Scalar, W: Write>(
    pattern: &MarkedPointPattern<T>,
    marks: &MarkSet,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["x", "y", "phenotype"])?;
    for p in pattern.points() {
        wtr.write_record([
            p.location.x.to_string(),
            p.location.y.to_string(),
            marks.label(p.mark).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    IA,
    IB,
    IIA,
    IIB,
    IIIA,
    IIIB,
    IV,
}

impl Stage {
    /// Non-reference levels, in dummy-column order.
    pub const CONTRASTS: [Stage; 6] = [Stage::IB, Stage::IIA, Stage::IIB, Stage::IIIA, Stage::IIIB, Stage::IV];

    pub fn parse(s: &str) -> Option<Stage> {
        Some(match s.trim().to_ascii_uppercase().as_str() {
            "IA" => Stage::IA,
            "IB" => Stage::IB,
            "IIA" => Stage::IIA,
            "IIB" => Stage::IIB,
            "IIIA" => Stage::IIIA,
            "IIIB" => Stage::IIIB,
            "IV" => Stage::IV,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::IA => "IA",
            Stage::IB => "IB",
            Stage::IIA => "IIA",
            Stage::IIB => "IIB",
            Stage::IIIA => "IIIA",
            Stage::IIIB => "IIIB",
            Stage::IV => "IV",
        }
    }
}

/// Per-patient design covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCovariates {
    pub gender_masculine: bool,
    pub age_at_diagnosis: f64,
    pub stage: Stage,
    pub mhcii_low: bool,
    pub survival_days: f64,
    pub death: bool,
    pub recurrence_or_death: bool,
    pub adjuvant_therapy: bool,
}

impl ClinicalCovariates {
    /// Column names of [`encode`](Self::encode), in order.
    pub fn column_names() -> Vec<String> {
        let mut names = vec!["Gender (Masculine)".to_string(), "Age at diagnosis".to_string()];
        names.extend(Stage::CONTRASTS.iter().map(|s| format!("Stage {}", s.name())));
        names.extend(
            [
                "MHCII status (low)",
                "Survival days",
                "Death (Yes)",
                "Recurrence (Yes)",
                "Adjuvant therapy (Yes)",
            ]
            .map(String::from),
        );
        names
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.age_at_diagnosis > 0.0) || !self.age_at_diagnosis.is_finite() {
            return Err(Error::Schema(format!("age {} must be positive", self.age_at_diagnosis)));
        }
        if !(self.survival_days >= 0.0) || !self.survival_days.is_finite() {
            return Err(Error::Schema(format!(
                "survival days {} must be nonnegative",
                self.survival_days
            )));
        }
        Ok(())
    }

    /// Treatment-contrast encoding with stage IA as reference.
    pub fn encode<T: Scalar>(&self) -> Vec<T> {
        let b = |v: bool| if v { T::one() } else { T::zero() };
        let mut out = vec![b(self.gender_masculine), T::lit(self.age_at_diagnosis)];
        out.extend(Stage::CONTRASTS.iter().map(|s| b(*s == self.stage)));
        out.extend([
            b(self.mhcii_low),
            T::lit(self.survival_days),
            b(self.death),
            b(self.recurrence_or_death),
            b(self.adjuvant_therapy),
        ]);
        out
    }
}

fn parse_binary(field: &str, raw: &str, yes: &[&str], no: &[&str]) -> Result<bool> {
    let v = raw.trim().to_ascii_lowercase();
    if v == "1" || yes.contains(&v.as_str()) {
        Ok(true)
    } else if v == "0" || no.contains(&v.as_str()) {
        Ok(false)
    } else {
        Err(Error::Schema(format!("{field}: cannot read {raw:?} as binary")))
    }
}

const COVARIATE_HEADER: [&str; 9] = [
    "patient_id",
    "gender",
    "age",
    "stage",
    "mhcii",
    "survival_days",
    "death",
    "recurrence_or_death",
    "adjuvant_therapy",
];

/// Reads the covariates table, keyed by patient id.
pub fn load_covariates<R: Read>(reader: R) -> Result<BTreeMap<String, ClinicalCovariates>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = COVARIATE_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Schema(format!("covariates table lacks column {name:?}")))
        })
        .collect::<Result<_>>()?;
    let yes_no = (["yes", "true", "y"], ["no", "false", "n"]);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            get(k)
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("{}: bad number {:?}", COVARIATE_HEADER[k], get(k))))
        };
        let id = get(0).to_string();
        let cov = ClinicalCovariates {
            gender_masculine: parse_binary(
                "gender",
                get(1),
                &["m", "male", "masculine"],
                &["f", "female", "feminine"],
            )?,
            age_at_diagnosis: num(2)?,
            stage: Stage::parse(get(3))
                .ok_or_else(|| Error::Schema(format!("unknown stage {:?}", get(3))))?,
            mhcii_low: parse_binary("mhcii", get(4), &["low"], &["high"])?,
            survival_days: num(5)?,
            death: parse_binary("death", get(6), &yes_no.0, &yes_no.1)?,
            recurrence_or_death: parse_binary("recurrence_or_death", get(7), &yes_no.0, &yes_no.1)?,
            adjuvant_therapy: parse_binary("adjuvant_therapy", get(8), &yes_no.0, &yes_no.1)?,
        };
        cov.validate()?;
        if out.insert(id.clone(), cov).is_some() {
            return Err(Error::Schema(format!("duplicate covariate row for {id}")));
        }
    }
    Ok(out)
}

pub fn write_covariates<'a, W: Write>(
    rows: impl IntoIterator<Item = (&'a str, &'a ClinicalCovariates)>,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COVARIATE_HEADER)?;
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    for (id, c) in rows {
        wtr.write_record([
            id.to_string(),
            if c.gender_masculine { "M" } else { "F" }.to_string(),
            c.age_at_diagnosis.to_string(),
            c.stage.name().to_string(),
            if c.mhcii_low { "low" } else { "high" }.to_string(),
            c.survival_days.to_string(),
            b(c.death),
            b(c.recurrence_or_death),
            b(c.adjuvant_therapy),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Patient<T> {
    pub pattern: MarkedPointPattern<T>,
    pub covariates: Option<ClinicalCovariates>,
}

/// Replicated patterns sharing one mark set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Cohort<T> {
    marks: MarkSet,
    patients: Vec<Patient<T>>,
    common_window: Option<PolygonalWindow<T>>,
}

impl<T: Scalar> Cohort<T> {
    pub fn new(marks: MarkSet, patients: Vec<Patient<T>>) -> Result<Self> {
        let mut ids = HashSet::new();
        for p in &patients {
            if !ids.insert(p.pattern.id().to_string()) {
                return Err(Error::Schema(format!("duplicate patient id {}", p.pattern.id())));
            }
            if p.pattern.points().iter().any(|q| q.mark >= marks.len()) {
                return Err(Error::Schema(format!(
                    "patient {} has mark indexes outside the mark set",
                    p.pattern.id()
                )));
            }
        }
        Ok(Self {
            marks,
            patients,
            common_window: None,
        })
    }

    pub fn marks(&self) -> &MarkSet {
        &self.marks
    }

    pub fn patients(&self) -> &[Patient<T>] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn common_window(&self) -> Option<&PolygonalWindow<T>> {
        self.common_window.as_ref()
    }

    /// Intersection of all patient windows.
    pub fn intersect_windows(&self) -> Result<PolygonalWindow<T>> {
        let windows: Vec<_> = self.patients.iter().map(|p| p.pattern.window().clone()).collect();
        intersect_windows(&windows)
    }

    /// Restricts every pattern to the intersection of the patient windows.
    pub fn with_common_window(&self) -> Result<Self> {
        let w = self.intersect_windows()?;
        self.restricted_to(&w)
    }

    pub fn restricted_to(&self, window: &PolygonalWindow<T>) -> Result<Self> {
        let patients = self
            .patients
            .iter()
            .map(|p| {
                Ok(Patient {
                    pattern: p.pattern.restrict(window)?,
                    covariates: p.covariates.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            marks: self.marks.clone(),
            patients,
            common_window: Some(window.clone()),
        })
    }
}

/// Cohort manifest: mark order, per-patient cell tables and the covariate binding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub marks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    pub patients: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub cells: PathBuf,
    /// Row of the covariates table; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_row: Option<String>,
    /// Window JSON file; defaults to the Ripley–Rasson window of the cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    /// Loads every pattern (with per-patient windows) and binds covariates.
    /// Relative paths resolve against `base`.
    pub fn load_cohort<T: Scalar>(&self, base: &Path) -> Result<Cohort<T>> {
        let marks = MarkSet::new(self.marks.clone())?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let covariates = match &self.covariates {
            Some(p) => {
                let path = resolve(p);
                let file = File::open(&path).map_err(|e| {
                    Error::Schema(format!("covariates table {}: {e}", path.display()))
                })?;
                Some(load_covariates(file)?)
            }
            None => None,
        };
        let patients = self
            .patients
            .iter()
            .map(|entry| {
                let window = match &entry.window {
                    Some(w) => Some(serde_json::from_reader(File::open(resolve(w))?)?),
                    None => None,
                };
                let pattern = load_pattern_file(&resolve(&entry.cells), &marks, &entry.id, window)?;
                let covariates = match &covariates {
                    Some(table) => {
                        let key = entry.covariate_row.as_deref().unwrap_or(&entry.id);
                        Some(table.get(key).cloned().ok_or_else(|| {
                            Error::Schema(format!("no covariate row for patient {key}"))
                        })?)
                    }
                    None => None,
                };
                Ok(Patient { pattern, covariates })
            })
            .collect::<Result<_>>()?;
        Cohort::new(marks, patients)
    }
}
