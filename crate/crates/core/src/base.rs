//! Model base dynamics: circle rotations, the cat map on 𝕋², Bernoulli
//! shifts, their products, and the shift skew product carrying random
//! products of cocycles.
//!
//! Circle and torus coordinates are held as [`Phase`] values, fixed-point
//! fractions of 2⁶⁴. The cat map is an integer matrix and a rotation adds a
//! fixed phase, so both act exactly on this representation: forward and
//! backward iterates invert bit for bit, and differences of nearby points
//! are known to full relative precision.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::matrix::Mat2;

/// Golden mean `(√5 − 1)/2`, a bounded-type irrational.
pub const GOLDEN_MEAN: f64 = 0.618_033_988_749_894_9;

/// Tolerance for leaf membership on the torus.
pub const LEAF_TOL: f64 = 1e-9;

/// Largest leaf arc-length searched by [`leaf_distance`].
pub const MAX_LEAF_SEARCH: f64 = 32.0;

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaseError {
    #[error("the system has no {0} leaves")]
    LeafAbsent(LeafKind),
    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),
    #[error("trivial splitting: {0}")]
    TrivialSplitting(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
}

/// A point of ℝ/ℤ stored as a 64-bit fixed-point fraction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phase(pub u64);

impl Phase {
    pub fn from_f64(t: f64) -> Phase {
        let r = t.rem_euclid(1.0) * TWO_POW_64;
        if r >= TWO_POW_64 || !r.is_finite() {
            Phase(0)
        } else {
            Phase(r as u64)
        }
    }

    /// Value in `[0, 1)`.
    pub fn to_f64(self) -> f64 {
        (self.0 >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn add(self, other: Phase) -> Phase {
        Phase(self.0.wrapping_add(other.0))
    }

    /// Shifts by `delta` turns, keeping the relative precision of small
    /// shifts of either sign.
    pub fn offset(self, delta: f64) -> Phase {
        let frac = delta - delta.round();
        self.add(Phase((frac * TWO_POW_64).round() as i64 as u64))
    }

    pub fn times(self, k: i64) -> Phase {
        Phase(self.0.wrapping_mul(k as u64))
    }

    /// `self − other` as the representative in `[-1/2, 1/2)`.
    pub fn signed_diff(self, other: Phase) -> f64 {
        (self.0.wrapping_sub(other.0) as i64) as f64 / TWO_POW_64
    }
}

impl Serialize for Phase {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafKind {
    S,
    U,
}

impl LeafKind {
    pub fn other(self) -> LeafKind {
        match self {
            LeafKind::S => LeafKind::U,
            LeafKind::U => LeafKind::S,
        }
    }
}

impl fmt::Display for LeafKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeafKind::S => "s",
            LeafKind::U => "u",
        })
    }
}

/// Where the symbols of a shift point come from.
#[derive(Clone, Debug, PartialEq)]
pub enum SymbolSource {
    Constant(u8),
    /// `x_i = pattern[i mod len]`.
    Periodic(Vec<u8>),
    /// i.i.d. symbols with the given cumulative distribution, generated
    /// positionally from a ChaCha stream keyed by `seed`.
    Bernoulli { seed: u64, cumulative: Vec<f64> },
}

const CHUNK: i64 = 4096;

fn pick_symbol(cumulative: &[f64], u: f64) -> u8 {
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1) as u8
}

fn stream_at(seed: u64, index: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // two 32-bit words per symbol; indices are shifted to be nonnegative
    let pos = (index as i128 - i64::MIN as i128) as u128 * 2;
    rng.set_word_pos(pos);
    rng
}

impl SymbolSource {
    fn generate(&self, abs: i64) -> u8 {
        match self {
            SymbolSource::Constant(s) => *s,
            SymbolSource::Periodic(p) => p[abs.rem_euclid(p.len() as i64) as usize],
            SymbolSource::Bernoulli { seed, cumulative } => {
                pick_symbol(cumulative, stream_at(*seed, abs).gen::<f64>())
            }
        }
    }

    fn chunk(&self, chunk: i64) -> Vec<u8> {
        match self {
            SymbolSource::Bernoulli { seed, cumulative } => {
                let mut rng = stream_at(*seed, chunk * CHUNK);
                (0..CHUNK).map(|_| pick_symbol(cumulative, rng.gen::<f64>())).collect()
            }
            _ => (0..CHUNK).map(|i| self.generate(chunk * CHUNK + i)).collect(),
        }
    }
}

/// A bi-infinite symbol sequence: a shared symbol source, the position of
/// coordinate 0 inside it, and a materialized window of generated symbols.
///
/// The window only caches; symbols are a pure function of the source and
/// absolute index, so extension order never changes them.
#[derive(Clone)]
pub struct ShiftPoint {
    source: Arc<SymbolSource>,
    offset: i64,
    window_start: i64,
    window: Vec<u8>,
}

impl ShiftPoint {
    pub fn from_source(source: SymbolSource) -> Self {
        let mut p = Self { source: Arc::new(source), offset: 0, window_start: 0, window: Vec::new() };
        p.ensure(0, 1);
        p
    }

    pub fn constant(symbol: u8) -> Self {
        Self::from_source(SymbolSource::Constant(symbol))
    }

    pub fn periodic(pattern: Vec<u8>) -> Self {
        assert!(!pattern.is_empty(), "periodic pattern must be nonempty");
        Self::from_source(SymbolSource::Periodic(pattern))
    }

    pub fn bernoulli(seed: u64, probs: &[f64]) -> Self {
        Self::from_source(SymbolSource::Bernoulli { seed, cumulative: cumulative(probs) })
    }

    pub fn source(&self) -> &SymbolSource {
        &self.source
    }

    /// Number of materialized symbols.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Symbol `x_i`.
    pub fn symbol(&self, i: i64) -> u8 {
        let abs = self.offset + i;
        let rel = abs - self.window_start;
        if rel >= 0 && (rel as usize) < self.window.len() {
            self.window[rel as usize]
        } else {
            self.source.generate(abs)
        }
    }

    /// Materializes symbols `x_lo .. x_hi` (half-open).
    pub fn ensure(&mut self, lo: i64, hi: i64) {
        if !matches!(*self.source, SymbolSource::Bernoulli { .. }) {
            return;
        }
        let lo_chunk = (self.offset + lo).div_euclid(CHUNK);
        let hi_chunk = (self.offset + hi - 1).div_euclid(CHUNK);
        if self.window.is_empty() {
            self.window_start = lo_chunk * CHUNK;
            for c in lo_chunk..=hi_chunk {
                let chunk = self.source.chunk(c);
                self.window.extend_from_slice(&chunk);
            }
            return;
        }
        let mut first = self.window_start.div_euclid(CHUNK);
        let mut last = first + self.window.len() as i64 / CHUNK - 1;
        while lo_chunk < first {
            first -= 1;
            let mut fresh = self.source.chunk(first);
            fresh.extend_from_slice(&self.window);
            self.window = fresh;
            self.window_start = first * CHUNK;
        }
        while hi_chunk > last {
            last += 1;
            let chunk = self.source.chunk(last);
            self.window.extend_from_slice(&chunk);
        }
    }

    /// Applies `σⁿ`.
    pub fn shift(&mut self, n: i64) {
        self.offset += n;
        self.ensure(0, 1);
    }
}

impl PartialEq for ShiftPoint {
    fn eq(&self, other: &Self) -> bool {
        self.offset == other.offset
            && (Arc::ptr_eq(&self.source, &other.source) || self.source == other.source)
    }
}

impl fmt::Debug for ShiftPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: String = (-2..=4).map(|i| char::from(b'0' + self.symbol(i))).collect();
        f.debug_struct("ShiftPoint")
            .field("offset", &self.offset)
            .field("symbols[-2..=4]", &head)
            .finish()
    }
}

impl Serialize for ShiftPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let head: Vec<u8> = (0..16).map(|i| self.symbol(i)).collect();
        head.serialize(s)
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// A point of one of the model base spaces.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BasePoint {
    Circle(Phase),
    Torus(Phase, Phase),
    Shift(ShiftPoint),
    Product(Box<BasePoint>, Box<BasePoint>),
}

impl BasePoint {
    pub fn circle(t: f64) -> Self {
        BasePoint::Circle(Phase::from_f64(t))
    }

    pub fn torus(x: f64, y: f64) -> Self {
        BasePoint::Torus(Phase::from_f64(x), Phase::from_f64(y))
    }

    pub fn product(left: BasePoint, right: BasePoint) -> Self {
        BasePoint::Product(Box::new(left), Box::new(right))
    }

    /// The circle coordinate, looking through products left first.
    pub fn circle_coordinate(&self) -> Option<Phase> {
        match self {
            BasePoint::Circle(t) => Some(*t),
            BasePoint::Product(l, r) => l.circle_coordinate().or_else(|| r.circle_coordinate()),
            _ => None,
        }
    }

    /// Phase coordinates used by Fourier observables: `(t, 0)` on the
    /// circle, `(x, y)` on the torus; products use the left factor when it
    /// has phases, otherwise the right.
    pub fn phases(&self) -> (Phase, Phase) {
        self.try_phases().unwrap_or_default()
    }

    fn try_phases(&self) -> Option<(Phase, Phase)> {
        match self {
            BasePoint::Circle(t) => Some((*t, Phase(0))),
            BasePoint::Torus(x, y) => Some((*x, *y)),
            BasePoint::Shift(_) => None,
            BasePoint::Product(l, r) => l.try_phases().or_else(|| r.try_phases()),
        }
    }

    pub fn as_shift(&self) -> Option<&ShiftPoint> {
        match self {
            BasePoint::Shift(s) => Some(s),
            BasePoint::Product(l, r) => l.as_shift().or_else(|| r.as_shift()),
            _ => None,
        }
    }

    pub fn left(&self) -> Option<&BasePoint> {
        match self {
            BasePoint::Product(l, _) => Some(l),
            _ => None,
        }
    }

    pub fn right(&self) -> Option<&BasePoint> {
        match self {
            BasePoint::Product(_, r) => Some(r),
            _ => None,
        }
    }
}

/// Partial-hyperbolicity rate constants. Absent entries mean the
/// corresponding sub-bundle is trivial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhRates {
    pub nu: Option<f64>,
    pub nu_hat: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_hat: Option<f64>,
}

impl PhRates {
    /// Checks `ν, ν̂ < 1` and `ν < γ ≤ γ̂⁻¹ < ν̂⁻¹` on the parts present.
    pub fn is_consistent(&self) -> bool {
        let (Some(nu), Some(nu_hat)) = (self.nu, self.nu_hat) else {
            return false;
        };
        if !(nu < 1.0 && nu_hat < 1.0 && nu > 0.0 && nu_hat > 0.0) {
            return false;
        }
        match (self.gamma, self.gamma_hat) {
            (Some(g), Some(gh)) => nu < g && g <= 1.0 / gh && 1.0 / gh < 1.0 / nu_hat,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CenterBunching {
    pub nu: f64,
    pub nu_hat: f64,
    pub gamma: f64,
    pub gamma_hat: f64,
    /// `γγ̂ − ν`
    pub stable_margin: f64,
    /// `γγ̂ − ν̂`
    pub unstable_margin: f64,
    pub center_bunched: bool,
}

/// A model base system. Rotation frequencies and fiber rotations are in
/// turns (fractions of the circle).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseSystem {
    Rotation { omega: f64 },
    /// The automorphism `[[2,1],[1,1]]^power` of 𝕋².
    CatMap { power: u32 },
    BernoulliShift { probs: Vec<f64> },
    Product { left: Box<BaseSystem>, right: Box<BaseSystem> },
    /// `(x, t) ↦ (σx, t + rotations[x₀])` on Σ × S¹.
    ShiftSkew { probs: Vec<f64>, fiber_rotations: Vec<f64> },
    /// Dynamics of `inner` with declared rate constants.
    WithRates { inner: Box<BaseSystem>, rates: PhRates },
}

fn validate_probs(probs: &[f64]) -> Result<(), BaseError> {
    if probs.is_empty() || probs.len() > 255 {
        return Err(BaseError::InvalidProbabilities("need between 1 and 255 symbols".into()));
    }
    if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(BaseError::InvalidProbabilities("probabilities must be positive".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(BaseError::InvalidProbabilities(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Largest eigenvalue `(3+√5)/2` of `[[2,1],[1,1]]`.
pub fn cat_lambda() -> f64 {
    (3.0 + 5f64.sqrt()) / 2.0
}

/// Unit eigendirections `(v_u, v_s)` of `[[2,1],[1,1]]`; orthogonal since the
/// matrix is symmetric.
pub fn cat_eigendirections() -> ([f64; 2], [f64; 2]) {
    let slope = GOLDEN_MEAN;
    let n = (1.0 + slope * slope).sqrt();
    ([1.0 / n, slope / n], [-slope / n, 1.0 / n])
}

fn cat_direction(kind: LeafKind) -> [f64; 2] {
    let (u, s) = cat_eigendirections();
    match kind {
        LeafKind::U => u,
        LeafKind::S => s,
    }
}

type IntMat = [u64; 4];

fn int_mul(p: IntMat, q: IntMat) -> IntMat {
    let w = |x: u64, y: u64| x.wrapping_mul(y);
    [
        w(p[0], q[0]).wrapping_add(w(p[1], q[2])),
        w(p[0], q[1]).wrapping_add(w(p[1], q[3])),
        w(p[2], q[0]).wrapping_add(w(p[3], q[2])),
        w(p[2], q[1]).wrapping_add(w(p[3], q[3])),
    ]
}

/// `[[2,1],[1,1]]^k` reduced mod 2⁶⁴ (negative `k` uses the inverse
/// `[[1,-1],[-1,2]]`).
fn cat_power(k: i64) -> IntMat {
    let mut base: IntMat = if k >= 0 { [2, 1, 1, 1] } else { [1, u64::MAX, u64::MAX, 2] };
    let mut e = k.unsigned_abs();
    let mut acc: IntMat = [1, 0, 0, 1];
    while e > 0 {
        if e & 1 == 1 {
            acc = int_mul(acc, base);
        }
        base = int_mul(base, base);
        e >>= 1;
    }
    acc
}

fn apply_int(m: IntMat, x: Phase, y: Phase) -> (Phase, Phase) {
    let nx = m[0].wrapping_mul(x.0).wrapping_add(m[1].wrapping_mul(y.0));
    let ny = m[2].wrapping_mul(x.0).wrapping_add(m[3].wrapping_mul(y.0));
    (Phase(nx), Phase(ny))
}

impl BaseSystem {
    pub fn rotation(omega: f64) -> Self {
        BaseSystem::Rotation { omega }
    }

    pub fn golden_rotation() -> Self {
        BaseSystem::Rotation { omega: GOLDEN_MEAN }
    }

    pub fn cat_map() -> Self {
        BaseSystem::CatMap { power: 1 }
    }

    pub fn bernoulli(probs: Vec<f64>) -> Result<Self, BaseError> {
        validate_probs(&probs)?;
        Ok(BaseSystem::BernoulliShift { probs })
    }

    pub fn product(left: BaseSystem, right: BaseSystem) -> Self {
        BaseSystem::Product { left: Box::new(left), right: Box::new(right) }
    }

    pub fn shift_skew(probs: Vec<f64>, fiber_rotations: Vec<f64>) -> Result<Self, BaseError> {
        validate_probs(&probs)?;
        if fiber_rotations.len() != probs.len() {
            return Err(BaseError::InvalidProbabilities(
                "one fiber rotation per symbol is required".into(),
            ));
        }
        Ok(BaseSystem::ShiftSkew { probs, fiber_rotations })
    }

    pub fn with_rates(inner: BaseSystem, rates: PhRates) -> Self {
        BaseSystem::WithRates { inner: Box::new(inner), rates }
    }

    /// Strips rate overrides.
    pub fn dynamics(&self) -> &BaseSystem {
        match self {
            BaseSystem::WithRates { inner, .. } => inner.dynamics(),
            other => other,
        }
    }

    /// Applies `fⁿ` in place.
    ///
    /// # Panics
    /// If `x` is not a point of this system.
    pub fn advance(&self, x: &mut BasePoint, n: i64) {
        if n == 0 {
            return;
        }
        match (self, x) {
            (BaseSystem::Rotation { omega }, BasePoint::Circle(t)) => {
                *t = t.add(Phase::from_f64(*omega).times(n));
            }
            (BaseSystem::CatMap { power }, BasePoint::Torus(px, py)) => {
                let m = if n == 1 && *power == 1 { [2, 1, 1, 1] } else { cat_power(n * *power as i64) };
                let (nx, ny) = apply_int(m, *px, *py);
                *px = nx;
                *py = ny;
            }
            (BaseSystem::BernoulliShift { .. }, BasePoint::Shift(s)) => s.shift(n),
            (BaseSystem::Product { left, right }, BasePoint::Product(l, r)) => {
                left.advance(l, n);
                right.advance(r, n);
            }
            (BaseSystem::ShiftSkew { fiber_rotations, .. }, BasePoint::Product(l, r)) => {
                let (BasePoint::Shift(s), BasePoint::Circle(t)) = (l.as_mut(), r.as_mut()) else {
                    panic!("shift skew point must be (shift, circle)");
                };
                let rot = |sym: u8| Phase::from_f64(fiber_rotations[sym as usize]);
                if n > 0 {
                    for _ in 0..n {
                        *t = t.add(rot(s.symbol(0)));
                        s.shift(1);
                    }
                } else {
                    for _ in 0..-n {
                        s.shift(-1);
                        *t = Phase(t.0.wrapping_sub(rot(s.symbol(0)).0));
                    }
                }
            }
            (BaseSystem::WithRates { inner, .. }, x) => inner.advance(x, n),
            (sys, x) => panic!("point {x:?} does not belong to {sys:?}"),
        }
    }

    /// `fⁿ(x)`.
    pub fn step(&self, x: &BasePoint, n: i64) -> BasePoint {
        let mut y = x.clone();
        self.advance(&mut y, n);
        y
    }

    pub fn contains(&self, x: &BasePoint) -> bool {
        match (self.dynamics(), x) {
            (BaseSystem::Rotation { .. }, BasePoint::Circle(_)) => true,
            (BaseSystem::CatMap { .. }, BasePoint::Torus(..)) => true,
            (BaseSystem::BernoulliShift { .. }, BasePoint::Shift(_)) => true,
            (BaseSystem::Product { left, right }, BasePoint::Product(l, r)) => {
                left.contains(l) && right.contains(r)
            }
            (BaseSystem::ShiftSkew { .. }, BasePoint::Product(l, r)) => {
                matches!((l.as_ref(), r.as_ref()), (BasePoint::Shift(_), BasePoint::Circle(_)))
            }
            _ => false,
        }
    }

    /// A point distributed by the model's invariant measure.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> BasePoint {
        match self {
            BaseSystem::Rotation { .. } => BasePoint::Circle(Phase(rng.gen())),
            BaseSystem::CatMap { .. } => BasePoint::Torus(Phase(rng.gen()), Phase(rng.gen())),
            BaseSystem::BernoulliShift { probs } => BasePoint::Shift(ShiftPoint::bernoulli(rng.gen(), probs)),
            BaseSystem::Product { left, right } => {
                let l = left.sample_with(rng);
                let r = right.sample_with(rng);
                BasePoint::product(l, r)
            }
            BaseSystem::ShiftSkew { probs, .. } => {
                let s = ShiftPoint::bernoulli(rng.gen(), probs);
                BasePoint::product(BasePoint::Shift(s), BasePoint::Circle(Phase(rng.gen())))
            }
            BaseSystem::WithRates { inner, .. } => inner.sample_with(rng),
        }
    }

    /// Rate constants of the model.
    pub fn rates(&self) -> PhRates {
        match self {
            BaseSystem::Rotation { .. } => {
                PhRates { nu: None, nu_hat: None, gamma: Some(1.0), gamma_hat: Some(1.0) }
            }
            BaseSystem::CatMap { power } => {
                let nu = cat_lambda().powi(-(*power as i32));
                PhRates { nu: Some(nu), nu_hat: Some(nu), gamma: None, gamma_hat: None }
            }
            // sequence metric 2^{-|n|}
            BaseSystem::BernoulliShift { .. } => {
                PhRates { nu: Some(0.5), nu_hat: Some(0.5), gamma: None, gamma_hat: None }
            }
            BaseSystem::ShiftSkew { .. } => {
                PhRates { nu: Some(0.5), nu_hat: Some(0.5), gamma: Some(1.0), gamma_hat: Some(1.0) }
            }
            BaseSystem::Product { left, right } => {
                let (l, r) = (left.rates(), right.rates());
                let max = |a: Option<f64>, b: Option<f64>| match (a, b) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                };
                let min = |a: Option<f64>, b: Option<f64>| match (a, b) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                };
                PhRates {
                    nu: max(l.nu, r.nu),
                    nu_hat: max(l.nu_hat, r.nu_hat),
                    gamma: min(l.gamma, r.gamma),
                    gamma_hat: min(l.gamma_hat, r.gamma_hat),
                }
            }
            BaseSystem::WithRates { rates, .. } => *rates,
        }
    }

    /// Exact factor by which leaf distances of the given kind shrink per
    /// step: under `f` for stable leaves, under `f⁻¹` for unstable ones.
    pub fn leaf_contraction(&self, kind: LeafKind) -> Option<f64> {
        match self {
            BaseSystem::CatMap { power } => Some(cat_lambda().powi(-(*power as i32))),
            BaseSystem::Product { left, right } => {
                left.leaf_contraction(kind).or_else(|| right.leaf_contraction(kind))
            }
            BaseSystem::WithRates { inner, .. } => inner.leaf_contraction(kind),
            _ => None,
        }
    }

    /// Whether the system carries a leaf of the given type with an
    /// arc-length parametrization.
    pub fn has_leaf(&self, kind: LeafKind) -> bool {
        match self {
            BaseSystem::CatMap { .. } => true,
            BaseSystem::Product { left, right } => left.has_leaf(kind) || right.has_leaf(kind),
            BaseSystem::WithRates { inner, .. } => inner.has_leaf(kind),
            _ => false,
        }
    }
}

/// `fⁿ(x)`.
pub fn step(sys: &BaseSystem, x: &BasePoint, n: i64) -> BasePoint {
    sys.step(x, n)
}

/// Draws one point from the invariant measure, deterministically in `seed`.
pub fn sample_measure(sys: &BaseSystem, seed: u64) -> BasePoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sys.sample_with(&mut rng)
}

/// Distance in the base space: flat metric on circle and torus, `2^{-N}` on
/// sequences (`N` the first index, in absolute value, where they differ),
/// Euclidean combination on products.
pub fn distance(x: &BasePoint, y: &BasePoint) -> f64 {
    match (x, y) {
        (BasePoint::Circle(a), BasePoint::Circle(b)) => a.signed_diff(*b).abs(),
        (BasePoint::Torus(ax, ay), BasePoint::Torus(bx, by)) => {
            ax.signed_diff(*bx).hypot(ay.signed_diff(*by))
        }
        (BasePoint::Shift(a), BasePoint::Shift(b)) => {
            for n in 0..64i64 {
                if a.symbol(n) != b.symbol(n) || a.symbol(-n) != b.symbol(-n) {
                    return 0.5f64.powi(n as i32);
                }
            }
            0.0
        }
        (BasePoint::Product(al, ar), BasePoint::Product(bl, br)) => {
            distance(al, bl).hypot(distance(ar, br))
        }
        _ => f64::INFINITY,
    }
}

enum LeafSide {
    Left,
    Right,
}

fn leaf_side(left: &BaseSystem, right: &BaseSystem, kind: LeafKind) -> Result<LeafSide, BaseError> {
    match (left.has_leaf(kind), right.has_leaf(kind)) {
        (true, false) => Ok(LeafSide::Left),
        (false, true) => Ok(LeafSide::Right),
        (false, false) => Err(BaseError::LeafAbsent(kind)),
        (true, true) => Err(BaseError::UnsupportedSystem(
            "products with leaves in both factors".into(),
        )),
    }
}

/// A displacement `y − x` held in floating point, so that tiny
/// displacements keep full relative precision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Offset {
    /// No displacement; also used for sequence coordinates, which only
    /// admit equality.
    Zero,
    Circle(f64),
    Torus(f64, f64),
    Product(Box<Offset>, Box<Offset>),
}

impl Offset {
    /// `y − x`, with phase differences taken in `[-1/2, 1/2)`.
    pub fn between(x: &BasePoint, y: &BasePoint) -> Offset {
        match (x, y) {
            (BasePoint::Circle(a), BasePoint::Circle(b)) => Offset::Circle(b.signed_diff(*a)),
            (BasePoint::Torus(ax, ay), BasePoint::Torus(bx, by)) => {
                Offset::Torus(bx.signed_diff(*ax), by.signed_diff(*ay))
            }
            (BasePoint::Product(xl, xr), BasePoint::Product(yl, yr)) => {
                Offset::Product(Box::new(Offset::between(xl, yl)), Box::new(Offset::between(xr, yr)))
            }
            _ => Offset::Zero,
        }
    }

    /// `x + self`.
    pub fn apply(&self, x: &BasePoint) -> BasePoint {
        match (self, x) {
            (Offset::Circle(d), BasePoint::Circle(t)) => BasePoint::Circle(t.offset(*d)),
            (Offset::Torus(dx, dy), BasePoint::Torus(a, b)) => BasePoint::Torus(a.offset(*dx), b.offset(*dy)),
            (Offset::Product(l, r), BasePoint::Product(a, b)) => BasePoint::product(l.apply(a), r.apply(b)),
            _ => x.clone(),
        }
    }

    pub fn scale(&self, k: f64) -> Offset {
        match self {
            Offset::Zero => Offset::Zero,
            Offset::Circle(d) => Offset::Circle(d * k),
            Offset::Torus(dx, dy) => Offset::Torus(dx * k, dy * k),
            Offset::Product(l, r) => Offset::Product(Box::new(l.scale(k)), Box::new(r.scale(k))),
        }
    }

    pub fn left(&self) -> &Offset {
        match self {
            Offset::Product(l, _) => l,
            _ => &Offset::Zero,
        }
    }

    pub fn right(&self) -> &Offset {
        match self {
            Offset::Product(_, r) => r,
            _ => &Offset::Zero,
        }
    }

    /// The displacement of the coordinates returned by
    /// [`BasePoint::phases`] at `x`.
    pub fn phase_offsets(&self, x: &BasePoint) -> (f64, f64) {
        fn go(o: &Offset, x: &BasePoint) -> Option<(f64, f64)> {
            match (x, o) {
                (BasePoint::Circle(_), Offset::Circle(d)) => Some((*d, 0.0)),
                (BasePoint::Circle(_), _) => Some((0.0, 0.0)),
                (BasePoint::Torus(..), Offset::Torus(dx, dy)) => Some((*dx, *dy)),
                (BasePoint::Torus(..), _) => Some((0.0, 0.0)),
                (BasePoint::Shift(_), _) => None,
                (BasePoint::Product(l, r), o) => go(o.left(), l).or_else(|| go(o.right(), r)),
            }
        }
        go(self, x).unwrap_or((0.0, 0.0))
    }
}

impl BaseSystem {
    /// The image `Df(x)·δ` of a displacement; exact for the affine models.
    pub fn push_offset(&self, delta: &Offset) -> Offset {
        match (self, delta) {
            (_, Offset::Zero) => Offset::Zero,
            (BaseSystem::CatMap { power }, Offset::Torus(dx, dy)) => {
                let m = Mat2::new(2.0, 1.0, 1.0, 1.0);
                let mut v = [*dx, *dy];
                for _ in 0..*power {
                    v = m.apply(v);
                }
                Offset::Torus(v[0], v[1])
            }
            (BaseSystem::Product { left, right }, Offset::Product(l, r)) => {
                Offset::Product(Box::new(left.push_offset(l)), Box::new(right.push_offset(r)))
            }
            (BaseSystem::WithRates { inner, .. }, d) => inner.push_offset(d),
            (_, d) => d.clone(),
        }
    }
}

/// Displacement by signed arc-length `distance` along the leaves of `sys`.
pub fn leaf_offset(sys: &BaseSystem, kind: LeafKind, distance: f64) -> Result<Offset, BaseError> {
    match sys {
        BaseSystem::CatMap { .. } => {
            let v = cat_direction(kind);
            Ok(Offset::Torus(distance * v[0], distance * v[1]))
        }
        BaseSystem::Product { left, right } => match leaf_side(left, right, kind)? {
            LeafSide::Left => Ok(Offset::Product(Box::new(leaf_offset(left, kind, distance)?), Box::new(Offset::Zero))),
            LeafSide::Right => Ok(Offset::Product(Box::new(Offset::Zero), Box::new(leaf_offset(right, kind, distance)?))),
        },
        BaseSystem::WithRates { inner, .. } => leaf_offset(inner, kind, distance),
        _ => Err(BaseError::LeafAbsent(kind)),
    }
}

/// The point at signed arc-length `distance` from `x` along its leaf.
pub fn leaf_point(
    sys: &BaseSystem,
    x: &BasePoint,
    kind: LeafKind,
    distance: f64,
) -> Result<BasePoint, BaseError> {
    if !sys.contains(x) {
        return Err(BaseError::LeafAbsent(kind));
    }
    Ok(leaf_offset(sys, kind, distance)?.apply(x))
}

fn cat_leaf_distance(x: (Phase, Phase), y: (Phase, Phase), kind: LeafKind) -> Option<f64> {
    let along = cat_direction(kind);
    let perp = cat_direction(kind.other());
    let dx = y.0.signed_diff(x.0);
    let dy = y.1.signed_diff(x.1);
    let reach = MAX_LEAF_SEARCH.ceil() as i64 + 1;
    let mut best: Option<f64> = None;
    for m in -reach..=reach {
        let wx = dx + m as f64;
        // integer lift making the perpendicular component vanish
        let n = (-(wx * perp[0]) / perp[1] - dy).round();
        let wy = dy + n;
        let off = wx * perp[0] + wy * perp[1];
        if off.abs() <= LEAF_TOL {
            let t = wx * along[0] + wy * along[1];
            if t.abs() <= MAX_LEAF_SEARCH && best.map_or(true, |b: f64| t.abs() < b.abs()) {
                best = Some(t);
            }
        }
    }
    best
}

/// Signed arc-length from `x` to `y` along the `kind` leaf through `x`, or
/// `None` when `y` is not on that leaf (within [`LEAF_TOL`], searching
/// arc-lengths up to [`MAX_LEAF_SEARCH`]).
pub fn leaf_distance(sys: &BaseSystem, x: &BasePoint, y: &BasePoint, kind: LeafKind) -> Option<f64> {
    match (sys, x, y) {
        (BaseSystem::CatMap { .. }, BasePoint::Torus(ax, ay), BasePoint::Torus(bx, by)) => {
            cat_leaf_distance((*ax, *ay), (*bx, *by), kind)
        }
        (BaseSystem::Product { left, right }, BasePoint::Product(xl, xr), BasePoint::Product(yl, yr)) => {
            match leaf_side(left, right, kind).ok()? {
                LeafSide::Left => (xr == yr).then(|| leaf_distance(left, xl, yl, kind)).flatten(),
                LeafSide::Right => (xl == yl).then(|| leaf_distance(right, xr, yr, kind)).flatten(),
            }
        }
        (BaseSystem::WithRates { inner, .. }, x, y) => leaf_distance(inner, x, y, kind),
        _ => None,
    }
}

/// One leg of an su-path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuLeg {
    pub kind: LeafKind,
    pub start: BasePoint,
    pub end: BasePoint,
    pub leaf_distance: f64,
}

/// A chain of stable and unstable legs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuPath {
    pub legs: Vec<SuLeg>,
}

impl SuPath {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    pub fn start(&self) -> Option<&BasePoint> {
        self.legs.first().map(|l| &l.start)
    }

    pub fn end(&self) -> Option<&BasePoint> {
        self.legs.last().map(|l| &l.end)
    }

    /// At most `k` legs, each of leaf length at most `l`.
    pub fn is_kl_path(&self, k: usize, l: f64) -> bool {
        self.legs.len() <= k && self.legs.iter().all(|leg| leg.leaf_distance <= l)
    }

    /// The same path traversed backwards.
    pub fn reversed(&self) -> SuPath {
        SuPath {
            legs: self
                .legs
                .iter()
                .rev()
                .map(|leg| SuLeg {
                    kind: leg.kind,
                    start: leg.end.clone(),
                    end: leg.start.clone(),
                    leaf_distance: leg.leaf_distance,
                })
                .collect(),
        }
    }

    /// Concatenation `self ∧ other`.
    pub fn concat(mut self, other: SuPath) -> SuPath {
        self.legs.extend(other.legs);
        self
    }

    /// Checks leaf membership of every leg and chaining of consecutive legs.
    pub fn validate(&self, sys: &BaseSystem) -> Result<(), String> {
        for (i, leg) in self.legs.iter().enumerate() {
            match leaf_distance(sys, &leg.start, &leg.end, leg.kind) {
                Some(d) if (d.abs() - leg.leaf_distance).abs() <= 1e-9 => {}
                Some(d) => return Err(format!("leg {i}: recorded length {} but leaf distance {d}", leg.leaf_distance)),
                None => return Err(format!("leg {i}: end is not on the {} leaf of its start", leg.kind)),
            }
            if let Some(next) = self.legs.get(i + 1) {
                if distance(&leg.end, &next.start) > 1e-9 {
                    return Err(format!("legs {i} and {} do not chain", i + 1));
                }
            }
        }
        Ok(())
    }
}

fn push_legs(
    sys: &BaseSystem,
    legs: &mut Vec<SuLeg>,
    from: &BasePoint,
    kind: LeafKind,
    length: f64,
    max_leg: f64,
) -> BasePoint {
    if length.abs() < 1e-15 {
        return from.clone();
    }
    let pieces = ((length.abs() / max_leg).ceil() as usize).max(1);
    let piece = length / pieces as f64;
    let mut cur = from.clone();
    for _ in 0..pieces {
        let next = leaf_point(sys, &cur, kind, piece).expect("cat map carries both leaves");
        legs.push(SuLeg { kind, start: cur, end: next.clone(), leaf_distance: piece.abs() });
        cur = next;
    }
    cur
}

fn cat_connect(sys: &BaseSystem, x: &BasePoint, y: &BasePoint, max_leg: f64) -> SuPath {
    let (BasePoint::Torus(ax, ay), BasePoint::Torus(bx, by)) = (x, y) else {
        unreachable!("cat map points are torus points");
    };
    if x == y {
        return SuPath::empty();
    }
    let (vu, vs) = cat_eigendirections();
    let dx = bx.signed_diff(*ax);
    let dy = by.signed_diff(*ay);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for m in -3..=3 {
        for n in -3..=3 {
            let wx = dx + m as f64;
            let wy = dy + n as f64;
            let a = wx * vu[0] + wy * vu[1];
            let b = wx * vs[0] + wy * vs[1];
            let key = (a.abs().max(b.abs()), a.abs() + b.abs(), a, b);
            let better = match best {
                None => true,
                Some(k) => key
                    .0
                    .total_cmp(&k.0)
                    .then(key.1.total_cmp(&k.1))
                    .then(key.2.total_cmp(&k.2))
                    .then(key.3.total_cmp(&k.3))
                    .is_lt(),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (_, _, a, b) = best.expect("lift search is nonempty");
    let mut legs = Vec::new();
    let mid = push_legs(sys, &mut legs, x, LeafKind::U, a, max_leg);
    push_legs(sys, &mut legs, &mid, LeafKind::S, b, max_leg);
    if let Some(last) = legs.last_mut() {
        last.end = y.clone();
    }
    SuPath { legs }
}

/// An su-path from `x` to `y`: an unstable leg followed by a stable leg,
/// each subdivided into pieces of length at most `max_leg`.
///
/// Complete on the cat map. On products, the factor without leaves must
/// agree exactly at both ends; otherwise `y` is outside the su-class of `x`.
pub fn su_connect(sys: &BaseSystem, x: &BasePoint, y: &BasePoint, max_leg: f64) -> Result<SuPath, BaseError> {
    assert!(max_leg > 0.0, "max_leg must be positive");
    match (sys, x, y) {
        (BaseSystem::CatMap { .. }, BasePoint::Torus(..), BasePoint::Torus(..)) => Ok(cat_connect(sys, x, y, max_leg)),
        (BaseSystem::Product { left, right }, BasePoint::Product(xl, xr), BasePoint::Product(yl, yr)) => {
            let su = |s: &BaseSystem| s.has_leaf(LeafKind::S) && s.has_leaf(LeafKind::U);
            let wrap = |path: SuPath, f: &dyn Fn(BasePoint) -> BasePoint| SuPath {
                legs: path
                    .legs
                    .into_iter()
                    .map(|leg| SuLeg { kind: leg.kind, start: f(leg.start), end: f(leg.end), leaf_distance: leg.leaf_distance })
                    .collect(),
            };
            if su(right) && !left.has_leaf(LeafKind::S) && !left.has_leaf(LeafKind::U) {
                if xl != yl {
                    return Err(BaseError::UnsupportedSystem(
                        "su-paths preserve the left factor coordinate and the endpoints differ there".into(),
                    ));
                }
                let inner = su_connect(right, xr, yr, max_leg)?;
                Ok(wrap(inner, &|p| BasePoint::Product(xl.clone(), Box::new(p))))
            } else if su(left) && !right.has_leaf(LeafKind::S) && !right.has_leaf(LeafKind::U) {
                if xr != yr {
                    return Err(BaseError::UnsupportedSystem(
                        "su-paths preserve the right factor coordinate and the endpoints differ there".into(),
                    ));
                }
                let inner = su_connect(left, xl, yl, max_leg)?;
                Ok(wrap(inner, &|p| BasePoint::Product(Box::new(p), xr.clone())))
            } else {
                Err(BaseError::UnsupportedSystem("su_connect needs exactly one hyperbolic factor".into()))
            }
        }
        (BaseSystem::WithRates { inner, .. }, x, y) => su_connect(inner, x, y, max_leg),
        (sys, ..) => Err(BaseError::UnsupportedSystem(format!("su_connect is not available on {}", sys.name()))),
    }
}

impl BaseSystem {
    pub fn name(&self) -> &'static str {
        match self {
            BaseSystem::Rotation { .. } => "rotation",
            BaseSystem::CatMap { .. } => "catmap",
            BaseSystem::BernoulliShift { .. } => "bernoulli",
            BaseSystem::Product { .. } => "product",
            BaseSystem::ShiftSkew { .. } => "shift-skew",
            BaseSystem::WithRates { .. } => "with-rates",
        }
    }
}

/// Center-bunching inequalities `ν < γγ̂` and `ν̂ < γγ̂` with their margins.
pub fn check_center_bunching(sys: &BaseSystem) -> Result<CenterBunching, BaseError> {
    let r = sys.rates();
    let (Some(gamma), Some(gamma_hat)) = (r.gamma, r.gamma_hat) else {
        return Err(BaseError::TrivialSplitting("the center bundle is trivial".into()));
    };
    let (Some(nu), Some(nu_hat)) = (r.nu, r.nu_hat) else {
        return Err(BaseError::TrivialSplitting("the stable or unstable bundle is trivial".into()));
    };
    let gg = gamma * gamma_hat;
    Ok(CenterBunching {
        nu,
        nu_hat,
        gamma,
        gamma_hat,
        stable_margin: gg - nu,
        unstable_margin: gg - nu_hat,
        center_bunched: nu < gg && nu_hat < gg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn torus_of(p: &BasePoint) -> (f64, f64) {
        match p {
            BasePoint::Torus(x, y) => (x.to_f64(), y.to_f64()),
            _ => panic!("not a torus point"),
        }
    }

    #[test]
    fn step_examples() {
        let rot = BaseSystem::golden_rotation();
        let t = rot.step(&BasePoint::circle(0.0), 1);
        assert_abs_diff_eq!(t.circle_coordinate().unwrap().to_f64(), GOLDEN_MEAN, epsilon = 1e-15);

        let cat = BaseSystem::cat_map();
        assert_eq!(cat.step(&BasePoint::torus(0.0, 0.0), 5), BasePoint::torus(0.0, 0.0));
        let p = cat.step(&BasePoint::torus(0.5, 0.5), 1);
        assert_eq!(torus_of(&p), (0.5, 0.0));
    }

    #[test]
    fn cat_power_matches_iteration() {
        let cat = BaseSystem::cat_map();
        let x = sample_measure(&cat, 3);
        let mut y = x.clone();
        for _ in 0..37 {
            cat.advance(&mut y, 1);
        }
        assert_eq!(y, cat.step(&x, 37));
        let sq = BaseSystem::CatMap { power: 2 };
        assert_eq!(sq.step(&x, 5), cat.step(&x, 10));
    }

    #[test]
    fn shift_symbols_are_reproducible() {
        let a = ShiftPoint::bernoulli(11, &[0.5, 0.5]);
        let b = ShiftPoint::bernoulli(11, &[0.5, 0.5]);
        let sa: Vec<u8> = (-5000..5000).map(|i| a.symbol(i)).collect();
        let mut c = b.clone();
        c.ensure(-9000, 9000);
        let sc: Vec<u8> = (-5000..5000).map(|i| c.symbol(i)).collect();
        assert_eq!(sa, sc);
        let mut d = a.clone();
        d.shift(17);
        assert_eq!(d.symbol(0), a.symbol(17));
        d.shift(-17);
        assert_eq!(d, a);
    }

    #[test]
    fn bernoulli_frequencies() {
        // 10⁵ independent draws of symbol 0 at coordinate 0
        let n = 100_000u64;
        let zeros = (0..n)
            .filter(|s| {
                let p = sample_measure(&BaseSystem::bernoulli(vec![0.5, 0.5]).unwrap(), *s);
                p.as_shift().unwrap().symbol(0) == 0
            })
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((zeros - 0.5 * n as f64).abs() <= 3.0 * sigma, "zeros = {zeros}");
    }

    #[test]
    fn birkhoff_average_of_symbol_zero() {
        let p0 = 0.3;
        let sys = BaseSystem::bernoulli(vec![p0, 1.0 - p0]).unwrap();
        let mut x = sample_measure(&sys, 5);
        let n = 100_000;
        let mut hits = 0u64;
        for _ in 0..n {
            if x.as_shift().unwrap().symbol(0) == 0 {
                hits += 1;
            }
            sys.advance(&mut x, 1);
        }
        let avg = hits as f64 / n as f64;
        assert!((avg - p0).abs() <= 3.0 * (p0 * (1.0 - p0) / n as f64).sqrt(), "avg = {avg}");
    }

    #[test]
    fn product_sampling_is_independent_pair() {
        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
        let p = sample_measure(&sys, 9);
        assert!(sys.contains(&p));
        assert_eq!(p, sample_measure(&sys, 9));
        assert_ne!(p, sample_measure(&sys, 10));
    }

    #[test]
    fn leaf_point_examples() {
        let cat = BaseSystem::cat_map();
        let o = BasePoint::torus(0.0, 0.0);
        assert_eq!(leaf_point(&cat, &o, LeafKind::S, 0.0).unwrap(), o);

        let x = BasePoint::torus(0.3, 0.7);
        let y = leaf_point(&cat, &x, LeafKind::U, 0.37).unwrap();
        let back = leaf_point(&cat, &y, LeafKind::U, -0.37).unwrap();
        assert!(distance(&back, &x) <= 1e-12);

        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
        let p = BasePoint::product(BasePoint::circle(0.25), x.clone());
        let q = leaf_point(&sys, &p, LeafKind::S, 0.2).unwrap();
        assert_eq!(q.left(), p.left());
        assert_eq!(q.right().unwrap(), &leaf_point(&cat, &x, LeafKind::S, 0.2).unwrap());

        assert_eq!(
            leaf_point(&BaseSystem::golden_rotation(), &BasePoint::circle(0.1), LeafKind::S, 0.1),
            Err(BaseError::LeafAbsent(LeafKind::S))
        );
    }

    #[test]
    fn leaf_distance_examples() {
        let cat = BaseSystem::cat_map();
        let x = BasePoint::torus(0.12, 0.81);
        assert_eq!(leaf_distance(&cat, &x, &x, LeafKind::S), Some(0.0));
        let y = leaf_point(&cat, &x, LeafKind::U, 0.7).unwrap();
        assert_abs_diff_eq!(leaf_distance(&cat, &x, &y, LeafKind::U).unwrap(), 0.7, epsilon = 1e-9);
        assert_eq!(leaf_distance(&cat, &x, &y, LeafKind::S), None);
        // offset 0.1 along the complementary direction
        let z = leaf_point(&cat, &y, LeafKind::S, 0.1).unwrap();
        assert_eq!(leaf_distance(&cat, &x, &z, LeafKind::U), None);
        // long leaves wrap around the torus
        let far = leaf_point(&cat, &x, LeafKind::S, 7.5).unwrap();
        assert_abs_diff_eq!(leaf_distance(&cat, &x, &far, LeafKind::S).unwrap(), 7.5, epsilon = 1e-9);
    }

    #[test]
    fn stable_leaves_contract() {
        let cat = BaseSystem::cat_map();
        for seed in 0..20 {
            let x = sample_measure(&cat, seed);
            let d = 0.05 + 0.02 * seed as f64;
            let y = leaf_point(&cat, &x, LeafKind::S, d).unwrap();
            let fd = leaf_distance(&cat, &cat.step(&x, 1), &cat.step(&y, 1), LeafKind::S).unwrap();
            assert_abs_diff_eq!(fd, d / cat_lambda(), epsilon = 1e-9);
        }
    }

    #[test]
    fn su_connect_examples() {
        let cat = BaseSystem::cat_map();
        let x = BasePoint::torus(0.0, 0.0);
        assert!(su_connect(&cat, &x, &x, 1.0).unwrap().is_empty());

        let y = BasePoint::torus(0.25, 0.5);
        let path = su_connect(&cat, &x, &y, 1.0).unwrap();
        assert_eq!(path.legs.len(), 2);
        assert_eq!(path.legs[0].kind, LeafKind::U);
        assert_eq!(path.legs[1].kind, LeafKind::S);
        path.validate(&cat).unwrap();
        assert_eq!(path.end(), Some(&y));

        // oracle: solve a·v_u + b·v_s = Δ + (m, n) directly by Cramer's rule
        let (vu, vs) = cat_eigendirections();
        let det = vu[0] * vs[1] - vu[1] * vs[0];
        let a = (0.25 * vs[1] - 0.5 * vs[0]) / det;
        let b = (vu[0] * 0.5 - vu[1] * 0.25) / det;
        assert_abs_diff_eq!(path.legs[0].leaf_distance, a.abs(), epsilon = 1e-12);
        assert_abs_diff_eq!(path.legs[1].leaf_distance, b.abs(), epsilon = 1e-12);

        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
        let p = BasePoint::product(BasePoint::circle(0.1), BasePoint::torus(0.3, 0.3));
        let q = BasePoint::product(BasePoint::circle(0.2), BasePoint::torus(0.6, 0.1));
        assert!(matches!(su_connect(&sys, &p, &q, 1.0), Err(BaseError::UnsupportedSystem(_))));
    }

    #[test]
    fn su_connect_subdivides_long_legs() {
        let cat = BaseSystem::cat_map();
        let x = BasePoint::torus(0.1, 0.9);
        let y = BasePoint::torus(0.6, 0.4);
        let path = su_connect(&cat, &x, &y, 0.1).unwrap();
        assert!(path.legs.len() > 2);
        assert!(path.is_kl_path(path.legs.len(), 0.1 + 1e-12));
        path.validate(&cat).unwrap();
        assert_eq!(path.end(), Some(&y));
    }

    #[test]
    fn center_bunching_examples() {
        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
        let r = check_center_bunching(&sys).unwrap();
        assert!(r.center_bunched);
        assert_abs_diff_eq!(r.stable_margin, 1.0 - 1.0 / cat_lambda(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.nu, 0.381966, epsilon = 1e-6);

        assert!(matches!(
            check_center_bunching(&BaseSystem::cat_map()),
            Err(BaseError::TrivialSplitting(_))
        ));

        let synthetic = BaseSystem::with_rates(
            sys,
            PhRates { nu: Some(0.99), nu_hat: Some(0.99), gamma: Some(0.9), gamma_hat: Some(0.9) },
        );
        let r = check_center_bunching(&synthetic).unwrap();
        assert!(!r.center_bunched);
        assert!(r.stable_margin < 0.0);
    }

    #[test]
    fn model_rates_are_consistent() {
        let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
        assert!(sys.rates().is_consistent());
        assert!(BaseSystem::cat_map().rates().is_consistent());
        assert!(!BaseSystem::golden_rotation().rates().is_consistent());
    }

    #[test]
    fn probability_validation() {
        assert!(BaseSystem::bernoulli(vec![0.5, 0.6]).is_err());
        assert!(BaseSystem::bernoulli(vec![1.0, 0.0]).is_err());
        assert!(BaseSystem::shift_skew(vec![0.5, 0.5], vec![0.1]).is_err());
    }

    fn any_system() -> impl Strategy<Value = BaseSystem> {
        prop_oneof![
            (0.0f64..1.0).prop_map(BaseSystem::rotation),
            (1u32..3).prop_map(|power| BaseSystem::CatMap { power }),
            (0.05f64..0.95).prop_map(|p| BaseSystem::bernoulli(vec![p, 1.0 - p]).unwrap()),
            (0.0f64..1.0).prop_map(|w| BaseSystem::product(BaseSystem::rotation(w), BaseSystem::cat_map())),
            (0.05f64..0.95, 0.0f64..1.0)
                .prop_map(|(p, w)| BaseSystem::shift_skew(vec![p, 1.0 - p], vec![w, 0.0]).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn step_is_invertible(sys in any_system(), seed in any::<u64>(), n in -1000i64..=1000) {
            let x = sample_measure(&sys, seed);
            let y = sys.step(&sys.step(&x, n), -n);
            prop_assert!(distance(&x, &y) <= 1e-10);
        }

        #[test]
        fn su_connect_reaches_target(seed in any::<u64>(), max_leg in 0.05f64..2.0) {
            let cat = BaseSystem::cat_map();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cat.sample_with(&mut rng);
            let y = cat.sample_with(&mut rng);
            let path = su_connect(&cat, &x, &y, max_leg).unwrap();
            prop_assert!(path.validate(&cat).is_ok());
            prop_assert!(distance(path.end().unwrap(), &y) <= 1e-9);
            prop_assert!(distance(path.start().unwrap(), &x) <= 1e-9);
            prop_assert!(path.legs.iter().all(|l| l.leaf_distance <= max_leg + 1e-12));
        }

        #[test]
        fn product_paths_preserve_circle(seed in any::<u64>()) {
            let sys = BaseSystem::product(BaseSystem::golden_rotation(), BaseSystem::cat_map());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = sys.sample_with(&mut rng);
            let mut y = sys.sample_with(&mut rng);
            if let BasePoint::Product(l, _) = &mut y {
                *l = Box::new(x.left().unwrap().clone());
            }
            let path = su_connect(&sys, &x, &y, 1.0).unwrap();
            let c = x.circle_coordinate();
            for leg in &path.legs {
                prop_assert_eq!(leg.start.circle_coordinate(), c);
                prop_assert_eq!(leg.end.circle_coordinate(), c);
            }
        }
    }
}
