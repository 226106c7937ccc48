//! Universal eigenvalue inequalities checked on concrete spectra.
//!
//! Bounds are written with `κ = 2/n` (CR mode) or `κ = 4/d` (Carnot mode) and
//! an additive term `off`, which is `D_∞/4` in CR mode and `−inf V` in Carnot
//! mode:
//!
//! * average: `λ_{k+1} ≤ (1+κ) M_k + κ·off`, with `M_k` the mean of `λ_1..λ_k`;
//! * power: `λ_{k+1} ≤ (1+κ) k^e λ_1 + ((1+κ) k^e − 1)·off`, `e = 1/n` or `2/d`.
//!
//! With `d = 2n` and `D_∞ = −4 inf V` both modes evaluate identical floating
//! point expressions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{sorted_eigen, Spectrum, DENSE_CAP};
use crate::error::{Error, Result};
use crate::tension::ReillyQuantities;

pub const DEFAULT_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    YangType,
    AverageBound,
    PowerBound,
    Reilly,
    CommutatorLemma,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Self::YangType => "yang_type",
            Self::AverageBound => "average_bound",
            Self::PowerBound => "power_bound",
            Self::Reilly => "reilly",
            Self::CommutatorLemma => "commutator_lemma",
        }
    }
}

/// Dimension parameter selecting the constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DimensionMode {
    /// CR manifold of CR dimension `n`; extra term is `D_∞`.
    Cr { n: usize },
    /// Carnot group with horizontal rank `d`; extra term is `inf V`.
    Carnot { d: usize },
}

impl DimensionMode {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::Cr { n: 0 } | Self::Carnot { d: 0 } => {
                Err(Error::InvalidCheck("dimension parameter must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// `max{2,p}/n` or `max{4,2p}/d`.
    pub fn yang_constant(&self, p: f64) -> f64 {
        match *self {
            Self::Cr { n } => 2.0_f64.max(p) / n as f64,
            Self::Carnot { d } => 4.0_f64.max(2.0 * p) / d as f64,
        }
    }

    pub fn kappa(&self) -> f64 {
        match *self {
            Self::Cr { n } => 2.0 / n as f64,
            Self::Carnot { d } => 4.0 / d as f64,
        }
    }

    pub fn power_exponent(&self) -> f64 {
        match *self {
            Self::Cr { n } => 1.0 / n as f64,
            Self::Carnot { d } => 2.0 / d as f64,
        }
    }

    fn offset(&self, extra: f64) -> f64 {
        match self {
            Self::Cr { .. } => extra / 4.0,
            Self::Carnot { .. } => -extra,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum OffsetMode {
    Zero,
    Constant(f64),
    PerIndex(Vec<f64>),
}

/// The additive terms `s_i` in `λ_i + s_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSpec {
    #[serde(flatten)]
    pub mode: OffsetMode,
    #[serde(default)]
    pub note: String,
}

impl OffsetSpec {
    pub fn zero() -> Self {
        Self {
            mode: OffsetMode::Zero,
            note: "zero".into(),
        }
    }

    pub fn constant(c: f64, note: impl Into<String>) -> Self {
        Self {
            mode: OffsetMode::Constant(c),
            note: note.into(),
        }
    }

    /// `s_i` for the 1-based index `i`.
    pub fn value(&self, i: usize) -> f64 {
        match &self.mode {
            OffsetMode::Zero => 0.0,
            OffsetMode::Constant(c) => *c,
            OffsetMode::PerIndex(s) => s[i - 1],
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        match &self.mode {
            OffsetMode::PerIndex(s) if s.len() < k => Err(Error::InvalidCheck(format!(
                "per-index offsets have {} entries, need {k}",
                s.len()
            ))),
            OffsetMode::Constant(c) if !c.is_finite() => Err(Error::InvalidCheck("offset is not finite".into())),
            OffsetMode::PerIndex(s) if s.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidCheck("offset is not finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// `s_i − T_i`, for Schrödinger operators with potential moments `T_i`.
    pub fn minus_moments(&self, moments: &[f64]) -> Self {
        let s = moments
            .iter()
            .enumerate()
            .map(|(i, t)| self.value(i + 1) - t)
            .collect();
        Self {
            mode: OffsetMode::PerIndex(s),
            note: format!("{} minus potential moments", self.note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum OffsetPreset {
    HeisenbergZero,
    SphereN2 { n: usize },
    Projective { n: usize, d_f: usize },
    Submersion { h_euc: f64 },
    TensionD { d: Vec<f64> },
}

pub fn preset_offsets(preset: &OffsetPreset) -> Result<OffsetSpec> {
    match preset {
        OffsetPreset::HeisenbergZero => Ok(OffsetSpec::constant(0.0, "heisenberg: zero")),
        OffsetPreset::SphereN2 { n } => {
            let n = *n as f64;
            Ok(OffsetSpec::constant(n * n, "cr sphere: n^2"))
        }
        OffsetPreset::Projective { n, d_f } => {
            if !matches!(d_f, 1 | 2 | 4) || *n == 0 || (2 * n) % d_f != 0 {
                return Err(Error::InvalidCheck(format!(
                    "projective preset needs d_F in {{1,2,4}} dividing 2n (n = {n}, d_F = {d_f})"
                )));
            }
            let (n, d) = (*n as f64, *d_f as f64);
            Ok(OffsetSpec::constant(n * (2.0 * n + d), "projective: n(2n + d_F)"))
        }
        OffsetPreset::Submersion { h_euc } => {
            if !h_euc.is_finite() {
                return Err(Error::InvalidCheck("submersion constant is not finite".into()));
            }
            Ok(OffsetSpec::constant(h_euc * h_euc / 4.0, "submersion: H^2/4"))
        }
        OffsetPreset::TensionD { d } => Ok(OffsetSpec {
            mode: OffsetMode::PerIndex(d.iter().map(|x| x / 4.0).collect()),
            note: "tension: D_i/4".into(),
        }),
    }
}

/// `T_i = ∫ V u_i²` for the spectrum's normalized eigenvectors.
pub fn potential_moments(v: &[f64], spectrum: &Spectrum) -> Result<Vec<f64>> {
    let vecs = spectrum.eigenvectors.as_ref().ok_or(Error::MissingEigenvectors)?;
    vecs.iter()
        .map(|u| {
            if u.len() != v.len() {
                return Err(Error::LengthMismatch {
                    expected: v.len(),
                    actual: u.len(),
                });
            }
            Ok(v.iter().zip(u).map(|(p, x)| p * x * x).sum::<f64>() * spectrum.meta.cell_volume)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReillyMode {
    EnergyForm,
    SemiIsometricForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub family: Family,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reilly_mode: Option<ReillyMode>,
    /// Leading constant: `C`, `κ`, or `max{1, p/2}`.
    pub constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<OffsetSpec>,
    /// `D_∞` (CR) or `inf V` (Carnot).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub relative_margin: f64,
    pub tol_rel: f64,
    pub verdict: Verdict,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl InequalityReport {
    fn new(family: Family, k: usize, constant: f64, lhs: f64, rhs: f64, tol_rel: f64) -> Self {
        let margin = rhs - lhs;
        let scale = lhs.abs().max(rhs.abs());
        let relative_margin = if scale > 0.0 { margin / scale } else { 0.0 };
        let verdict = if margin >= -tol_rel * scale {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            family,
            k,
            p: None,
            dimension: None,
            reilly_mode: None,
            constant,
            offsets: None,
            extra: None,
            lhs,
            rhs,
            margin,
            relative_margin,
            tol_rel,
            verdict,
            degenerate: false,
            warnings: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// A failure that is not explained by a degenerate gap.
    pub fn is_hard_failure(&self) -> bool {
        !self.passed() && !self.degenerate
    }
}

fn validate_eigenvalues(lambda: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidCheck("k must be at least 1".into()));
    }
    if lambda.len() < k + 1 {
        return Err(Error::InvalidCheck(format!(
            "need {} eigenvalues for k = {k}, have {}",
            k + 1,
            lambda.len()
        )));
    }
    if lambda[..=k].iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCheck("eigenvalues must be finite".into()));
    }
    if lambda[..=k].windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidCheck("eigenvalues are not sorted".into()));
    }
    Ok(())
}

fn validate_tol(tol_rel: f64) -> Result<()> {
    if tol_rel >= 0.0 && tol_rel.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidCheck(format!("tolerance {tol_rel} must be finite and nonnegative")))
    }
}

/// `gap^e`, or `None` for a zero gap with negative exponent.
fn gap_pow(gap: f64, e: f64) -> Option<f64> {
    if gap == 0.0 && e < 0.0 {
        None
    } else {
        Some(gap.powf(e))
    }
}

fn p_warnings(p: f64) -> Vec<String> {
    if p <= 0.0 {
        vec![format!("p = {p} <= 0: the inequality is trivial or degenerate")]
    } else {
        Vec::new()
    }
}

/// `Σ_{i≤k} (λ_{k+1}−λ_i)^p ≤ C Σ_{i≤k} (λ_{k+1}−λ_i)^{p−1} (λ_i + s_i)`.
pub fn yang_type_check(lambda: &[f64], k: usize, p: f64, c: f64, offsets: &OffsetSpec, tol_rel: f64) -> Result<InequalityReport> {
    validate_eigenvalues(lambda, k)?;
    validate_tol(tol_rel)?;
    offsets.validate(k)?;
    if !(c > 0.0) || !c.is_finite() || !p.is_finite() {
        return Err(Error::InvalidCheck(format!("invalid constant {c} or exponent {p}")));
    }
    let next = lambda[k];
    let mut lhs = 0.0;
    let mut sum = 0.0;
    let mut degenerate = false;
    for i in 1..=k {
        let gap = next - lambda[i - 1];
        match gap_pow(gap, p) {
            Some(t) => lhs += t,
            None => degenerate = true,
        }
        match gap_pow(gap, p - 1.0) {
            Some(t) => sum += t * (lambda[i - 1] + offsets.value(i)),
            None => degenerate = true,
        }
    }
    let mut r = InequalityReport::new(Family::YangType, k, c, lhs, c * sum, tol_rel);
    r.p = Some(p);
    r.offsets = Some(offsets.clone());
    r.degenerate = degenerate;
    r.warnings = p_warnings(p);
    Ok(r)
}

/// Yang-type check with the constant taken from the dimension mode.
pub fn yang_type_check_mode(
    lambda: &[f64],
    k: usize,
    p: f64,
    mode: DimensionMode,
    offsets: &OffsetSpec,
    tol_rel: f64,
) -> Result<InequalityReport> {
    mode.validate()?;
    let mut r = yang_type_check(lambda, k, p, mode.yang_constant(p), offsets, tol_rel)?;
    r.dimension = Some(mode);
    Ok(r)
}

fn mean(lambda: &[f64]) -> f64 {
    lambda.iter().sum::<f64>() / lambda.len() as f64
}

fn average_rhs(lambda: &[f64], mode: DimensionMode, extra: f64) -> f64 {
    let kappa = mode.kappa();
    (1.0 + kappa) * mean(lambda) + kappa * mode.offset(extra)
}

fn validate_extra(mode: DimensionMode, extra: f64) -> Result<()> {
    mode.validate()?;
    if extra.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidCheck("extra term must be finite".into()))
    }
}

/// `λ_{k+1} ≤ (1+κ) M_k + κ·off`.
pub fn average_bound_check(lambda: &[f64], k: usize, mode: DimensionMode, extra: f64, tol_rel: f64) -> Result<InequalityReport> {
    validate_eigenvalues(lambda, k)?;
    validate_tol(tol_rel)?;
    validate_extra(mode, extra)?;
    let rhs = average_rhs(&lambda[..k], mode, extra);
    let mut r = InequalityReport::new(Family::AverageBound, k, mode.kappa(), lambda[k], rhs, tol_rel);
    r.dimension = Some(mode);
    r.extra = Some(extra);
    Ok(r)
}

/// `λ_{k+1} ≤ (1+κ) k^e λ_1 + ((1+κ) k^e − 1)·off`.
pub fn power_bound_check(lambda: &[f64], k: usize, mode: DimensionMode, extra: f64, tol_rel: f64) -> Result<InequalityReport> {
    validate_eigenvalues(lambda, k)?;
    validate_tol(tol_rel)?;
    validate_extra(mode, extra)?;
    let factor = (1.0 + mode.kappa()) * (k as f64).powf(mode.power_exponent());
    let rhs = factor * lambda[0] + (factor - 1.0) * mode.offset(extra);
    let mut r = InequalityReport::new(Family::PowerBound, k, mode.kappa(), lambda[k], rhs, tol_rel);
    r.dimension = Some(mode);
    r.extra = Some(extra);
    Ok(r)
}

/// Upper root of the quadratic `(λ − M_k)(λ − (1+κ)M_k − κ·off) ≤ 0` obtained
/// from the Yang-type inequality at `p = 2` with constant offsets; this is
/// the average bound's right-hand side.
pub fn implied_next_bound(lambda: &[f64], mode: DimensionMode, extra: f64) -> Result<f64> {
    if lambda.is_empty() {
        return Err(Error::InvalidCheck("need at least one eigenvalue".into()));
    }
    if lambda.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidCheck("eigenvalues are not sorted".into()));
    }
    validate_extra(mode, extra)?;
    Ok(average_rhs(lambda, mode, extra))
}

/// `λ_2 E_b ≤ ½∫|H_b|²` or `λ_2 ≤ ∫|H_b|² / (2n vol)`.
pub fn reilly_check(lambda2: f64, n: usize, q: &ReillyQuantities, mode: ReillyMode, tol_rel: f64) -> Result<InequalityReport> {
    validate_tol(tol_rel)?;
    if n == 0 {
        return Err(Error::InvalidCheck("n must be positive".into()));
    }
    if ![lambda2, q.energy, q.tension_integral, q.volume].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidCheck("Reilly inputs must be finite".into()));
    }
    let (lhs, rhs) = match mode {
        ReillyMode::EnergyForm => {
            if q.energy == 0.0 {
                return Err(Error::InvalidCheck("energy is zero".into()));
            }
            (lambda2 * q.energy, 0.5 * q.tension_integral)
        }
        ReillyMode::SemiIsometricForm => {
            if q.volume == 0.0 {
                return Err(Error::InvalidCheck("volume is zero".into()));
            }
            (lambda2, q.tension_integral / (2.0 * n as f64 * q.volume))
        }
    };
    let mut r = InequalityReport::new(Family::Reilly, 2, 0.5, lhs, rhs, tol_rel);
    r.reilly_mode = Some(mode);
    r.dimension = Some(DimensionMode::Cr { n });
    Ok(r)
}

/// Reilly quantities of the standard embedding of the CR sphere: `e_b ≡ n`, `|H_b|² ≡ 4n²`.
pub fn sphere_reilly_quantities(n: usize, volume: f64) -> ReillyQuantities {
    let nf = n as f64;
    ReillyQuantities {
        energy: nf * volume,
        tension_integral: 4.0 * nf * nf * volume,
        volume,
        coverage: 1.0,
    }
}

fn require_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m != &m.transpose() {
        return Err(Error::Asymmetric);
    }
    Ok(())
}

/// `Σ gap^p ⟨[A,B]u_i, B u_i⟩ ≤ max{1, p/2} Σ gap^{p−1} ‖[A,B]u_i‖²` over
/// the eigenvectors `u_i` of `A`. `k = 0` gives empty sums.
pub fn commutator_lemma_check(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize, p: f64, tol: f64) -> Result<InequalityReport> {
    require_symmetric(a)?;
    require_symmetric(b)?;
    validate_tol(tol)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::LengthMismatch { expected: n, actual: b.nrows() });
    }
    if n > DENSE_CAP {
        return Err(Error::DenseCap { dim: n, cap: DENSE_CAP });
    }
    if k > 0 && k + 1 > n {
        return Err(Error::InvalidCheck(format!("k = {k} needs dimension at least {}", k + 1)));
    }
    if !p.is_finite() {
        return Err(Error::InvalidCheck("p must be finite".into()));
    }
    let (lambda, u) = sorted_eigen(a.clone());
    let comm = a * b - b * a;
    let c = 1.0_f64.max(p / 2.0);
    let mut lhs = 0.0;
    let mut sum = 0.0;
    let mut degenerate = false;
    for i in 0..k {
        let gap = (lambda[k] - lambda[i]).max(0.0);
        let ui = u.column(i);
        let cu = &comm * ui;
        let bu = b * ui;
        match gap_pow(gap, p) {
            Some(t) => lhs += t * cu.dot(&bu),
            None => degenerate = true,
        }
        match gap_pow(gap, p - 1.0) {
            Some(t) => sum += t * cu.norm_squared(),
            None => degenerate = true,
        }
    }
    let mut r = InequalityReport::new(Family::CommutatorLemma, k, c, lhs, c * sum, tol);
    r.p = Some(p);
    r.degenerate = degenerate;
    r.warnings = p_warnings(p);
    Ok(r)
}

/// Random symmetric matrix with entries uniform in `[-scale, scale]`,
/// symmetric bit for bit.
pub fn random_symmetric(dim: usize, scale: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = rng.gen_range(-scale..=scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaStats {
    pub p: f64,
    pub checks: usize,
    pub failures: usize,
    pub degenerate: usize,
    pub min_relative_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaLabSummary {
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub per_p: Vec<LemmaStats>,
    pub failures: usize,
}

/// Random `(A, B)` pairs of size `dim`; every trial checks each `p` at a
/// random `k ≤ dim − 2` (`k = dim − 1` for `dim = 2`, `k = 0` for `dim = 1`).
pub fn lemma_lab(dim: usize, trials: usize, ps: &[f64], seed: u64, tol: f64) -> Result<LemmaLabSummary> {
    if dim == 0 || dim > DENSE_CAP {
        return Err(Error::InvalidCheck(format!("dimension {dim} outside 1..={DENSE_CAP}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_p: Vec<LemmaStats> = ps
        .iter()
        .map(|&p| LemmaStats {
            p,
            checks: 0,
            failures: 0,
            degenerate: 0,
            min_relative_margin: None,
        })
        .collect();
    for _ in 0..trials {
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let a = random_symmetric(dim, scale, &mut rng);
        let b = random_symmetric(dim, 1.0, &mut rng);
        let k = match dim {
            1 => 0,
            2 => 1,
            _ => rng.gen_range(1..=dim - 2),
        };
        for stats in per_p.iter_mut() {
            let r = commutator_lemma_check(&a, &b, k, stats.p, tol)?;
            stats.checks += 1;
            stats.failures += r.is_hard_failure() as usize;
            stats.degenerate += r.degenerate as usize;
            stats.min_relative_margin = Some(
                stats
                    .min_relative_margin
                    .map_or(r.relative_margin, |m| m.min(r.relative_margin)),
            );
        }
    }
    let failures = per_p.iter().map(|s| s.failures).sum();
    Ok(LemmaLabSummary {
        dim,
        trials,
        seed,
        tol,
        per_p,
        failures,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    family: &'a str,
    k: usize,
    p: Option<f64>,
    lhs: f64,
    rhs: f64,
    margin: f64,
    relative_margin: f64,
    verdict: &'a str,
    degenerate: bool,
}

/// Plot-ready table with one row per report.
pub fn reports_to_csv(reports: &[InequalityReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if reports.is_empty() {
        w.write_record(["family", "k", "p", "lhs", "rhs", "margin", "relative_margin", "verdict", "degenerate"])
            .map_err(csv_error)?;
    }
    for r in reports {
        w.serialize(CsvRow {
            family: r.family.name(),
            k: r.k,
            p: r.p,
            lhs: r.lhs,
            rhs: r.rhs,
            margin: r.margin,
            relative_margin: r.relative_margin,
            verdict: if r.passed() { "pass" } else { "fail" },
            degenerate: r.degenerate,
        })
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_error(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
