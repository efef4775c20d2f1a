//! Multitype pairwise interactions.
//!
//! A model's log conditional intensity is linear in one strength coefficient
//! per active unordered mark pair. This module owns the irregular parameters
//! (hardcores, ranges, slopes), the statistics they induce and the spatial
//! index used to find neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::patterns::{Cohort, MarkSet, MarkedPoint, MarkedPointPattern};
use crate::scalar::Scalar;

/// Patterns smaller than this are scanned linearly instead of hashed.
pub const BRUTE_FORCE_BELOW: usize = 1000;
const MAX_BUCKETS: usize = 1 << 22;

/// Symmetric `M x M` matrix indexed by mark pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
pub struct PairParamMatrix<T> {
    m: usize,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<Vec<Vec<T>>> for PairParamMatrix<T> {
    type Error = Error;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl<T: Scalar> From<PairParamMatrix<T>> for Vec<Vec<T>> {
    fn from(p: PairParamMatrix<T>) -> Self {
        p.rows()
    }
}

impl<T: Scalar> PairParamMatrix<T> {
    pub fn filled(m: usize, value: T) -> Self {
        Self {
            m,
            values: vec![value; m * m],
        }
    }

    /// Validates a square, finite, symmetric matrix.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("pair matrix must be square and nonempty".into()));
        }
        let values: Vec<T> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pair matrix entries must be finite".into()));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (values[i * m + j], values[j * m + i]);
                let scale = a.abs().max(b.abs()).max(T::one());
                if (a - b).abs() > T::lit(1e-12) * scale {
                    return Err(Error::InvalidArgument(format!(
                        "pair matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { m, values })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.m + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.values[i * self.m + j] = value;
        self.values[j * self.m + i] = value;
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.values.chunks(self.m).map(|r| r.to_vec()).collect()
    }

    pub fn min_entry(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_entry(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            m: self.m,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Fiksel,
    /// Fiksel potential with every cross-type strength fixed at zero.
    FikselWithinOnly,
    Strauss,
    Hardcore,
    StraussHardcore,
    None,
}

impl InteractionKind {
    pub fn name(self) -> &'static str {
        match self {
            InteractionKind::Fiksel => "fiksel",
            InteractionKind::FikselWithinOnly => "fiksel_within_only",
            InteractionKind::Strauss => "strauss",
            InteractionKind::Hardcore => "hardcore",
            InteractionKind::StraussHardcore => "strauss_hardcore",
            InteractionKind::None => "none",
        }
    }
}

/// Fiksel potential parameters for [`fiksel_phi`].
#[derive(Clone, Debug, PartialEq)]
pub struct FikselParams<T> {
    pub hardcore: PairParamMatrix<T>,
    pub strength: PairParamMatrix<T>,
    pub slope: PairParamMatrix<T>,
    pub range: PairParamMatrix<T>,
}

/// `-inf` below the hardcore, `c exp(-gamma r)` on `[h, R)`, zero from `R` on.
pub fn fiksel_phi<T: Scalar>(i: usize, j: usize, r: T, params: &FikselParams<T>) -> T {
    if r < params.hardcore.get(i, j) {
        T::neg_infinity()
    } else if r < params.range.get(i, j) {
        params.strength.get(i, j) * (-params.slope.get(i, j) * r).exp()
    } else {
        T::zero()
    }
}

/// Parameters of the Strauss-type alternatives for [`strauss_family_phi`].
///
/// `gamma` is the interaction parameter (the potential is `log gamma` in the
/// band); `hardcore` is only read by the Strauss–hardcore model.
#[derive(Clone, Debug, PartialEq)]
pub struct StraussFamilyParams<T> {
    pub hardcore: Option<PairParamMatrix<T>>,
    pub range: PairParamMatrix<T>,
    pub gamma: Option<PairParamMatrix<T>>,
}

/// Pair potential of the Strauss, hardcore and Strauss–hardcore models.
///
/// Returns zero for kinds outside that family.
pub fn strauss_family_phi<T: Scalar>(kind: InteractionKind, i: usize, j: usize, r: T, params: &StraussFamilyParams<T>) -> T {
    let range = params.range.get(i, j);
    let log_gamma = || params.gamma.as_ref().map_or(T::zero(), |g| g.get(i, j).ln());
    match kind {
        InteractionKind::Strauss if r <= range => log_gamma(),
        InteractionKind::Hardcore if r <= range => T::neg_infinity(),
        InteractionKind::StraussHardcore => {
            let h = params.hardcore.as_ref().map_or(T::zero(), |h| h.get(i, j));
            if r < h {
                T::neg_infinity()
            } else if r <= range {
                log_gamma()
            } else {
                T::zero()
            }
        }
        _ => T::zero(),
    }
}

/// Pair potential family with its irregular parameters.
///
/// For [`InteractionKind::Hardcore`] the exclusion distance lives in `range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InteractionSpec<T> {
    kind: InteractionKind,
    marks: usize,
    hardcore: Option<PairParamMatrix<T>>,
    range: Option<PairParamMatrix<T>>,
    slope: Option<PairParamMatrix<T>>,
}

/// What a single neighbour at distance `d` does to a statistic vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairEffect<T> {
    Nothing,
    Excluded,
    Add(usize, T),
}

impl<T: Scalar> InteractionSpec<T> {
    pub fn none(marks: usize) -> Self {
        Self {
            kind: InteractionKind::None,
            marks,
            hardcore: None,
            range: None,
            slope: None,
        }
    }

    pub fn fiksel(hardcore: PairParamMatrix<T>, range: PairParamMatrix<T>, slope: PairParamMatrix<T>) -> Result<Self> {
        Self::build(InteractionKind::Fiksel, Some(hardcore), Some(range), Some(slope))
    }

    pub fn fiksel_within_only(
        hardcore: PairParamMatrix<T>,
        range: PairParamMatrix<T>,
        slope: PairParamMatrix<T>,
    ) -> Result<Self> {
        Self::build(InteractionKind::FikselWithinOnly, Some(hardcore), Some(range), Some(slope))
    }

    pub fn strauss(range: PairParamMatrix<T>) -> Result<Self> {
        Self::build(InteractionKind::Strauss, None, Some(range), None)
    }

    /// Pure exclusion: `r <= distance` is forbidden.
    pub fn hardcore(distance: PairParamMatrix<T>) -> Result<Self> {
        Self::build(InteractionKind::Hardcore, None, Some(distance), None)
    }

    pub fn strauss_hardcore(hardcore: PairParamMatrix<T>, range: PairParamMatrix<T>) -> Result<Self> {
        Self::build(InteractionKind::StraussHardcore, Some(hardcore), Some(range), None)
    }

    fn build(
        kind: InteractionKind,
        hardcore: Option<PairParamMatrix<T>>,
        range: Option<PairParamMatrix<T>>,
        slope: Option<PairParamMatrix<T>>,
    ) -> Result<Self> {
        let marks = range.as_ref().map(|r| r.size()).unwrap_or(0);
        let spec = Self {
            kind,
            marks,
            hardcore,
            range,
            slope,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks presence, sizes and ordering of the parameter matrices.
    pub fn validate(&self) -> Result<()> {
        use InteractionKind::*;
        let need = |m: &Option<PairParamMatrix<T>>, what: &str| -> Result<()> {
            match m {
                Some(p) if p.size() == self.marks => Ok(()),
                Some(p) => Err(Error::InvalidArgument(format!(
                    "{what} matrix is {0}x{0} but the spec has {1} marks",
                    p.size(),
                    self.marks
                ))),
                Option::None => Err(Error::InvalidArgument(format!(
                    "{} interaction needs a {what} matrix",
                    self.kind.name()
                ))),
            }
        };
        match self.kind {
            Fiksel | FikselWithinOnly => {
                need(&self.hardcore, "hardcore")?;
                need(&self.range, "range")?;
                need(&self.slope, "slope")?;
            }
            Strauss | Hardcore => need(&self.range, "range")?,
            StraussHardcore => {
                need(&self.hardcore, "hardcore")?;
                need(&self.range, "range")?;
            }
            None => return Ok(()),
        }
        if self.marks == 0 {
            return Err(Error::InvalidArgument("interaction needs at least one mark".into()));
        }
        for m in [&self.hardcore, &self.range].into_iter().flatten() {
            if m.min_entry() < T::zero() {
                return Err(Error::InvalidArgument("hardcore and range entries must be >= 0".into()));
            }
        }
        if let (Some(h), Some(r)) = (&self.hardcore, &self.range) {
            for i in 0..self.marks {
                for j in i..self.marks {
                    if !(r.get(i, j) > h.get(i, j)) {
                        return Err(Error::InvalidArgument(format!(
                            "range {} must exceed hardcore {} for pair ({i}, {j})",
                            r.get(i, j),
                            h.get(i, j)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> InteractionKind {
        self.kind
    }

    pub fn marks(&self) -> usize {
        self.marks
    }

    pub fn hardcore_matrix(&self) -> Option<&PairParamMatrix<T>> {
        self.hardcore.as_ref()
    }

    pub fn range_matrix(&self) -> Option<&PairParamMatrix<T>> {
        self.range.as_ref()
    }

    pub fn slope_matrix(&self) -> Option<&PairParamMatrix<T>> {
        self.slope.as_ref()
    }

    /// Replaces every hardcore entry with the smallest one.
    pub fn with_shared_hardcore(mut self) -> Result<Self> {
        let target = match self.kind {
            InteractionKind::Hardcore => &mut self.range,
            _ => &mut self.hardcore,
        };
        if let Some(h) = target.as_mut() {
            let min = h.min_entry();
            *h = h.map(|_| min);
        }
        self.validate()?;
        Ok(self)
    }

    /// Copy with one pair's range and slope replaced; used by the profile search.
    pub fn with_pair(&self, i: usize, j: usize, range: T, slope: Option<T>) -> Result<Self> {
        let mut out = self.clone();
        if let Some(r) = out.range.as_mut() {
            r.set(i, j, range);
        }
        if let (Some(s), Some(g)) = (out.slope.as_mut(), slope) {
            s.set(i, j, g);
        }
        out.validate()?;
        Ok(out)
    }

    /// Number of strength coefficients.
    pub fn n_statistics(&self) -> usize {
        match self.kind {
            InteractionKind::Fiksel | InteractionKind::Strauss | InteractionKind::StraussHardcore => {
                self.marks * (self.marks + 1) / 2
            }
            InteractionKind::FikselWithinOnly => self.marks,
            InteractionKind::Hardcore | InteractionKind::None => 0,
        }
    }

    /// Mark pairs `(i, j)`, `i <= j`, in coefficient order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self.kind {
            InteractionKind::FikselWithinOnly => (0..self.marks).map(|i| (i, i)).collect(),
            _ if self.n_statistics() == 0 => Vec::new(),
            _ => (0..self.marks)
                .flat_map(|i| (i..self.marks).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Coefficient slot of the unordered pair `{i, j}`, if it has one.
    #[inline]
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        match self.kind {
            InteractionKind::FikselWithinOnly => (a == b).then_some(a),
            InteractionKind::Fiksel | InteractionKind::Strauss | InteractionKind::StraussHardcore => {
                Some(a * (2 * self.marks - a + 1) / 2 + (b - a))
            }
            _ => None,
        }
    }

    pub fn strength_names(&self, marks: &MarkSet) -> Vec<String> {
        self.pairs()
            .into_iter()
            .map(|(i, j)| format!("{}:{}", marks.label(i), marks.label(j)))
            .collect()
    }

    /// Largest distance at which any pair still interacts or excludes.
    pub fn search_radius(&self) -> T {
        match self.kind {
            InteractionKind::None => T::zero(),
            _ => {
                let r = self.range.as_ref().map_or(T::zero(), |r| r.max_entry());
                let h = self.hardcore.as_ref().map_or(T::zero(), |h| h.max_entry());
                r.max(h)
            }
        }
    }

    /// Effect of one type-`j` neighbour at distance `d` on a type-`m` point.
    #[inline]
    pub fn pair_effect(&self, m: usize, j: usize, d: T) -> PairEffect<T> {
        use InteractionKind::*;
        match self.kind {
            None => PairEffect::Nothing,
            Hardcore => {
                if d <= self.range.as_ref().map_or(T::zero(), |r| r.get(m, j)) {
                    PairEffect::Excluded
                } else {
                    PairEffect::Nothing
                }
            }
            Strauss => {
                if d <= self.range.as_ref().map_or(T::zero(), |r| r.get(m, j)) {
                    PairEffect::Add(self.pair_index(m, j).unwrap_or(0), T::one())
                } else {
                    PairEffect::Nothing
                }
            }
            StraussHardcore => {
                let h = self.hardcore.as_ref().map_or(T::zero(), |h| h.get(m, j));
                let r = self.range.as_ref().map_or(T::zero(), |r| r.get(m, j));
                if d < h {
                    PairEffect::Excluded
                } else if d <= r {
                    PairEffect::Add(self.pair_index(m, j).unwrap_or(0), T::one())
                } else {
                    PairEffect::Nothing
                }
            }
            Fiksel | FikselWithinOnly => {
                let h = self.hardcore.as_ref().map_or(T::zero(), |h| h.get(m, j));
                if d < h {
                    return PairEffect::Excluded;
                }
                let r = self.range.as_ref().map_or(T::zero(), |r| r.get(m, j));
                if d >= r {
                    return PairEffect::Nothing;
                }
                match self.pair_index(m, j) {
                    Some(k) => {
                        let g = self.slope.as_ref().map_or(T::zero(), |s| s.get(m, j));
                        PairEffect::Add(k, (-g * d).exp())
                    }
                    Option::None => PairEffect::Nothing,
                }
            }
        }
    }

    /// Adds the statistics of a type-`m` point at `u` into `out` and reports
    /// whether a hardcore is violated. `exclude` names an index of `index`
    /// that stands for the point itself.
    pub fn statistics_at(
        &self,
        index: &NeighborGrid<T>,
        u: &Point2<T>,
        m: usize,
        exclude: Option<usize>,
        out: &mut [T],
    ) -> bool {
        debug_assert_eq!(out.len(), self.n_statistics());
        if self.kind == InteractionKind::None {
            return false;
        }
        let mut flagged = false;
        index.for_each_within(u, self.search_radius(), |k, q, d| {
            if Some(k) == exclude {
                return;
            }
            match self.pair_effect(m, q.mark, d) {
                PairEffect::Nothing => {}
                PairEffect::Excluded => flagged = true,
                PairEffect::Add(slot, v) => out[slot] += v,
            }
        });
        flagged
    }
}

/// Statistics of a type-`m` point at `u` against `pattern`.
///
/// A data point of the same mark at exactly `u` is treated as the point
/// itself and left out.
pub fn sufficient_statistics<T: Scalar>(
    u: &Point2<T>,
    m: usize,
    pattern: &MarkedPointPattern<T>,
    spec: &InteractionSpec<T>,
) -> (Vec<T>, bool) {
    let index = NeighborGrid::from_points(pattern.points(), spec.search_radius());
    let exclude = pattern
        .points()
        .iter()
        .position(|p| p.mark == m && p.location == *u);
    let mut out = vec![T::zero(); spec.n_statistics()];
    let flag = spec.statistics_at(&index, u, m, exclude, &mut out);
    (out, flag)
}

/// Estimated hardcore matrix plus the pairs no patient could inform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HardcoreEstimate<T> {
    /// Unobservable pairs carry zero (no exclusion).
    pub matrix: PairParamMatrix<T>,
    pub missing: Vec<(usize, usize)>,
}

/// Minimum over patients of the minimum cross-type nearest-neighbour distance.
///
/// With `shared`, every entry becomes the smallest observed one.
pub fn estimate_hardcore<T: Scalar>(cohort: &Cohort<T>, shared: bool) -> Result<HardcoreEstimate<T>> {
    let m = cohort.marks().len();
    let mut matrix = PairParamMatrix::filled(m, T::zero());
    let mut missing = Vec::new();
    let mut observed_min = T::infinity();
    for i in 0..m {
        for j in i..m {
            let mut best: Option<T> = None;
            for p in cohort.patients() {
                if let Some(d) = p.pattern.min_cross_nn_distance(i, j) {
                    if !(d > T::zero()) {
                        return Err(Error::ZeroHardcore {
                            patient: p.pattern.id().to_string(),
                            i,
                            j,
                        });
                    }
                    best = Some(best.map_or(d, |b| b.min(d)));
                }
            }
            match best {
                Some(d) => {
                    matrix.set(i, j, d);
                    observed_min = observed_min.min(d);
                }
                None => missing.push((i, j)),
            }
        }
    }
    if shared && observed_min.is_finite() {
        matrix = matrix.map(|_| observed_min);
    }
    Ok(HardcoreEstimate { matrix, missing })
}

/// Uniform spatial hash over marked points supporting insertion and removal.
#[derive(Clone, Debug)]
pub struct NeighborGrid<T> {
    points: Vec<MarkedPoint<T>>,
    cell: T,
    origin: Point2<T>,
    nx: usize,
    ny: usize,
    /// Empty in brute-force mode.
    buckets: Vec<Vec<usize>>,
}

impl<T: Scalar> NeighborGrid<T> {
    /// Static index over `points` for queries up to `radius`.
    pub fn from_points(points: &[MarkedPoint<T>], radius: T) -> Self {
        if points.len() < BRUTE_FORCE_BELOW || !(radius > T::zero()) {
            return Self {
                points: points.to_vec(),
                cell: T::zero(),
                origin: Point2::new(T::zero(), T::zero()),
                nx: 0,
                ny: 0,
                buckets: Vec::new(),
            };
        }
        let (lo, hi) = points.iter().fold(
            (
                Point2::new(T::infinity(), T::infinity()),
                Point2::new(T::neg_infinity(), T::neg_infinity()),
            ),
            |(lo, hi), p| {
                (
                    Point2::new(lo.x.min(p.location.x), lo.y.min(p.location.y)),
                    Point2::new(hi.x.max(p.location.x), hi.y.max(p.location.y)),
                )
            },
        );
        let mut g = Self::empty(lo, hi, radius);
        for p in points {
            g.insert(*p);
        }
        g
    }

    /// Empty bucketed index covering the box `[lo, hi]`; points outside the
    /// box are kept in the border buckets, which keeps queries exact.
    pub fn empty(lo: Point2<T>, hi: Point2<T>, cell: T) -> Self {
        let w = (hi.x - lo.x).max(T::zero());
        let h = (hi.y - lo.y).max(T::zero());
        let mut cell = if cell > T::zero() { cell } else { (w.max(h)).max(T::one()) };
        let count = |c: T| -> (usize, usize) {
            (
                (w / c).floor().to_usize().unwrap_or(usize::MAX / 4) + 1,
                (h / c).floor().to_usize().unwrap_or(usize::MAX / 4) + 1,
            )
        };
        let (mut nx, mut ny) = count(cell);
        while nx.saturating_mul(ny) > MAX_BUCKETS {
            cell = cell * T::lit(2.0);
            (nx, ny) = count(cell);
        }
        Self {
            points: Vec::new(),
            cell,
            origin: lo,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        }
    }

    pub fn points(&self) -> &[MarkedPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn is_brute(&self) -> bool {
        self.buckets.is_empty()
    }

    #[inline]
    fn axis(&self, v: T, n: usize) -> usize {
        let k = (v / self.cell).floor();
        if !(k > T::zero()) {
            0
        } else {
            k.to_usize().unwrap_or(n - 1).min(n - 1)
        }
    }

    #[inline]
    fn bucket_of(&self, p: &Point2<T>) -> usize {
        self.axis(p.y - self.origin.y, self.ny) * self.nx + self.axis(p.x - self.origin.x, self.nx)
    }

    /// Appends a point and returns its index.
    pub fn insert(&mut self, p: MarkedPoint<T>) -> usize {
        let k = self.points.len();
        self.points.push(p);
        if !self.is_brute() {
            let b = self.bucket_of(&p.location);
            self.buckets[b].push(k);
        }
        k
    }

    /// Removes point `k`; the last point takes over index `k`.
    pub fn remove(&mut self, k: usize) -> MarkedPoint<T> {
        let last = self.points.len() - 1;
        if !self.is_brute() {
            let b = self.bucket_of(&self.points[k].location);
            let pos = self.buckets[b].iter().position(|&q| q == k).expect("indexed point");
            self.buckets[b].swap_remove(pos);
            if k != last {
                let bl = self.bucket_of(&self.points[last].location);
                let pos = self.buckets[bl].iter().position(|&q| q == last).expect("indexed point");
                self.buckets[bl][pos] = k;
            }
        }
        self.points.swap_remove(k)
    }

    /// Calls `f(index, point, distance)` for every point within `radius` of `u`.
    pub fn for_each_within(&self, u: &Point2<T>, radius: T, mut f: impl FnMut(usize, &MarkedPoint<T>, T)) {
        if !(radius > T::zero()) {
            return;
        }
        let r2 = radius * radius;
        let mut visit = |k: usize| {
            let q = &self.points[k];
            let d2 = q.location.distance_sq(u);
            if d2 <= r2 {
                f(k, q, d2.sqrt());
            }
        };
        if self.is_brute() {
            (0..self.points.len()).for_each(&mut visit);
            return;
        }
        let i0 = self.axis(u.x - radius - self.origin.x, self.nx);
        let i1 = self.axis(u.x + radius - self.origin.x, self.nx);
        let j0 = self.axis(u.y - radius - self.origin.y, self.ny);
        let j1 = self.axis(u.y + radius - self.origin.y, self.ny);
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &k in &self.buckets[j * self.nx + i] {
                    visit(k);
                }
            }
        }
    }
}
