//! Levi tension of sampled maps, semi-isometry diagnostics and the integrals
//! entering the eigenvalue bounds.
//!
//! Heisenberg targets `ℍᵐ` use coordinates `(φ_1..φ_m, ψ_1..ψ_m, α)` and the
//! metric `g(W, W) = 4 Σ (v_j² + w_j²) + θ(W)²`, where `W = (v, w, s)` is a
//! coordinate tangent vector at `(φ, ψ, α)` and `θ(W) = s + 2 Σ (φ_j w_j − ψ_j v_j)`.

use serde::{Deserialize, Serialize};

use crate::discretization::{first_order_operator, AssembledOperator};
use crate::eigensolver::Spectrum;
use crate::error::{Error, Result};
use crate::grid::GridDomain;
use crate::group_models::{GroupModel, ModelKind};

pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "m", rename_all = "snake_case")]
pub enum Target {
    Euclidean(usize),
    Heisenberg(usize),
}

impl Target {
    /// Number of stored coordinate components.
    pub fn num_components(&self) -> usize {
        match *self {
            Self::Euclidean(m) => m,
            Self::Heisenberg(m) => 2 * m + 1,
        }
    }

    /// Number of tension components (`2m` for Heisenberg: no vertical slot).
    pub fn tension_components(&self) -> usize {
        match *self {
            Self::Euclidean(m) => m,
            Self::Heisenberg(m) => 2 * m,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSample {
    target: Target,
    components: Vec<Vec<f64>>,
}

impl MapSample {
    pub fn new(target: Target, components: Vec<Vec<f64>>, grid: &GridDomain) -> Result<Self> {
        if target.tension_components() == 0 {
            return Err(Error::InvalidMap("target dimension must be positive".into()));
        }
        if components.len() != target.num_components() {
            return Err(Error::LengthMismatch {
                expected: target.num_components(),
                actual: components.len(),
            });
        }
        if let Some(c) = components.iter().find(|c| c.len() != grid.num_unknowns()) {
            return Err(Error::LengthMismatch {
                expected: grid.num_unknowns(),
                actual: c.len(),
            });
        }
        Ok(Self { target, components })
    }

    /// Sample a point map `p ↦ f(p)` on the unknowns.
    pub fn from_fn(target: Target, grid: &GridDomain, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let m = target.num_components();
        let mut components = vec![Vec::with_capacity(grid.num_unknowns()); m];
        let mut p = vec![0.0; grid.dim()];
        for q in 0..grid.num_unknowns() {
            grid.unknown_point(q, &mut p);
            let v = f(&p);
            if v.len() != m {
                return Err(Error::LengthMismatch { expected: m, actual: v.len() });
            }
            for (c, x) in components.iter_mut().zip(v) {
                c.push(x);
            }
        }
        Self::new(target, components, grid)
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Componentwise sum, for linearity checks.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.target != other.target {
            return Err(Error::InvalidMap("targets differ".into()));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            target: self.target,
            components,
        })
    }
}

/// Named maps that can be sampled on any compatible model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapPreset {
    /// Horizontal coordinates into `ℝ^rank`.
    Projection,
    /// Horizontal coordinates scaled by `1/√w`, semi-isometric.
    ScaledProjection,
    /// `ℍⁿ → ℍⁿ` identity.
    Identity,
    /// All ambient coordinates into `ℝ^dim`.
    Coordinates,
    /// Semi-isometric wrap of the first horizontal coordinate around a unit
    /// circle; its tension is the inward unit normal.
    Cylinder,
}

impl MapPreset {
    pub fn sample(&self, model: &GroupModel, grid: &GridDomain) -> Result<MapSample> {
        let horizontal = model.horizontal_coords();
        let rank = horizontal.len();
        let s = 1.0 / model.levi_weight().sqrt();
        match self {
            Self::Projection | Self::ScaledProjection => {
                let scale = if *self == Self::Projection { 1.0 } else { s };
                MapSample::from_fn(Target::Euclidean(rank), grid, |p| {
                    horizontal.iter().map(|&a| scale * p[a]).collect()
                })
            }
            Self::Identity => match model.kind() {
                ModelKind::Heisenberg { n } => {
                    MapSample::from_fn(Target::Heisenberg(*n), grid, |p| p.to_vec())
                }
                _ => Err(Error::InvalidMap("identity preset needs a Heisenberg model".into())),
            },
            Self::Coordinates => {
                MapSample::from_fn(Target::Euclidean(model.ambient_dim()), grid, |p| p.to_vec())
            }
            Self::Cylinder => MapSample::from_fn(Target::Euclidean(rank + 1), grid, |p| {
                let a = s * p[horizontal[0]];
                let mut v = vec![a.cos(), a.sin()];
                v.extend(horizontal[1..].iter().map(|&b| s * p[b]));
                v
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensionField {
    pub target: Target,
    /// Target-frame components per node: `Δ_b f_α` (Euclidean) or
    /// `(Δ_b φ_j, Δ_b ψ_j)` (Heisenberg). Empty for synthetic fields.
    pub values: Vec<Vec<f64>>,
    pub norm_sq: Vec<f64>,
    /// Nodes whose whole stencil neighbourhood lies inside the domain.
    pub trusted: Vec<bool>,
}

impl TensionField {
    /// Constant `|H_b|²` on every node, with no component data.
    pub fn uniform(target: Target, nodes: usize, norm_sq: f64) -> Self {
        Self {
            target,
            values: Vec::new(),
            norm_sq: vec![norm_sq; nodes],
            trusted: vec![true; nodes],
        }
    }

    /// Tension of the standard embedding `S^{2n+1} → ℝ^{2n+2}`: `|H_b|² ≡ 4n²`.
    pub fn sphere(n: usize, nodes: usize) -> Self {
        let n = n as f64;
        Self::uniform(Target::Euclidean(2 * n as usize + 2), nodes, 4.0 * n * n)
    }

    pub fn trusted_count(&self) -> usize {
        self.trusted.iter().filter(|t| **t).count()
    }

    pub fn max_norm_sq_trusted(&self) -> f64 {
        self.norm_sq
            .iter()
            .zip(&self.trusted)
            .filter(|(_, t)| **t)
            .fold(0.0, |m, (v, _)| m.max(*v))
    }

    /// `max |H_b|` over trusted nodes.
    pub fn max_trusted(&self) -> f64 {
        self.max_norm_sq_trusted().sqrt()
    }

    /// `|H_b|²` with untrusted nodes replaced by the trusted supremum.
    pub fn filled_norm_sq(&self) -> Vec<f64> {
        let sup = self.max_norm_sq_trusted();
        self.norm_sq
            .iter()
            .zip(&self.trusted)
            .map(|(v, t)| if *t { *v } else { sup })
            .collect()
    }
}

fn require_zero_potential(a: &AssembledOperator, grid: &GridDomain) -> Result<()> {
    if !a.has_zero_potential() {
        return Err(Error::InvalidMap("tension needs an operator assembled with V = 0".into()));
    }
    if a.dim() != grid.num_unknowns() {
        return Err(Error::LengthMismatch {
            expected: grid.num_unknowns(),
            actual: a.dim(),
        });
    }
    Ok(())
}

fn neg_apply(a: &AssembledOperator, f: &[f64]) -> Vec<f64> {
    let mut v = a.apply(f);
    v.iter_mut().for_each(|x| *x = -*x);
    v
}

/// `H_b(f) = (Δ_b f_1, .., Δ_b f_m)` with `Δ_b = −A`.
pub fn levi_tension_euclidean(a: &AssembledOperator, grid: &GridDomain, f: &MapSample) -> Result<TensionField> {
    require_zero_potential(a, grid)?;
    if !matches!(f.target, Target::Euclidean(_)) {
        return Err(Error::InvalidMap("expected a Euclidean target".into()));
    }
    let values: Vec<Vec<f64>> = f.components.iter().map(|c| neg_apply(a, c)).collect();
    let norm_sq = (0..grid.num_unknowns())
        .map(|q| values.iter().map(|v| v[q] * v[q]).sum())
        .collect();
    Ok(TensionField {
        target: f.target,
        values,
        norm_sq,
        trusted: grid.trusted_mask(),
    })
}

/// `H_b(f) = Σ (Δ_b φ_j X_j + Δ_b ψ_j Y_j)`, `|H_b|² = 4 Σ [(Δ_b φ_j)² + (Δ_b ψ_j)²]`.
pub fn levi_tension_heisenberg(a: &AssembledOperator, grid: &GridDomain, f: &MapSample) -> Result<TensionField> {
    require_zero_potential(a, grid)?;
    let Target::Heisenberg(m) = f.target else {
        return Err(Error::InvalidMap("expected a Heisenberg target".into()));
    };
    // α (the last component) does not enter the tension
    let values: Vec<Vec<f64>> = f.components[..2 * m].iter().map(|c| neg_apply(a, c)).collect();
    let norm_sq = (0..grid.num_unknowns())
        .map(|q| 4.0 * values.iter().map(|v| v[q] * v[q]).sum::<f64>())
        .collect();
    Ok(TensionField {
        target: f.target,
        values,
        norm_sq,
        trusted: grid.trusted_mask(),
    })
}

/// Dispatch on the map's target.
pub fn levi_tension(a: &AssembledOperator, grid: &GridDomain, f: &MapSample) -> Result<TensionField> {
    match f.target {
        Target::Euclidean(_) => levi_tension_euclidean(a, grid, f),
        Target::Heisenberg(_) => levi_tension_heisenberg(a, grid, f),
    }
}

/// `df(e_i)` for the G-orthonormal frame: `[i][α][node]`.
fn frame_differential(model: &GroupModel, grid: &GridDomain, f: &MapSample) -> Result<Vec<Vec<Vec<f64>>>> {
    let scale = model.levi_weight().sqrt();
    (0..model.horizontal_rank())
        .map(|i| {
            let s = first_order_operator(model, i, grid)?;
            Ok(f.components
                .iter()
                .map(|c| {
                    let mut d = s.mul_vec(c);
                    d.iter_mut().for_each(|x| *x *= scale);
                    d
                })
                .collect())
        })
        .collect()
}

/// Centered difference of every component along coordinate axis `axis`.
fn axis_differential(grid: &GridDomain, f: &MapSample, axis: usize) -> Vec<Vec<f64>> {
    let h2 = 2.0 * grid.spacings()[axis];
    f.components
        .iter()
        .map(|c| {
            (0..grid.num_unknowns())
                .map(|q| {
                    let l = grid.lattice_of(q);
                    let at = |fwd| grid.step(l, axis, fwd).and_then(|m| grid.unknown_at(m)).map_or(0.0, |u| c[u]);
                    (at(true) - at(false)) / h2
                })
                .collect()
        })
        .collect()
}

fn vector_at(d: &[Vec<f64>], q: usize) -> Vec<f64> {
    d.iter().map(|c| c[q]).collect()
}

/// Target inner product of tangent vectors `a`, `b` at the image of node `q`.
fn target_inner(f: &MapSample, q: usize, a: &[f64], b: &[f64]) -> f64 {
    match f.target {
        Target::Euclidean(_) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        Target::Heisenberg(m) => {
            let horizontal: f64 = a[..2 * m].iter().zip(&b[..2 * m]).map(|(x, y)| x * y).sum();
            4.0 * horizontal + contact_form(f, q, a) * contact_form(f, q, b)
        }
    }
}

/// `θ(W) = s + 2 Σ (φ_j w_j − ψ_j v_j)`; zero for Euclidean targets.
fn contact_form(f: &MapSample, q: usize, w: &[f64]) -> f64 {
    match f.target {
        Target::Euclidean(_) => 0.0,
        Target::Heisenberg(m) => {
            let c = &f.components;
            let mut th = w[2 * m];
            for j in 0..m {
                th += 2.0 * (c[j][q] * w[m + j] - c[m + j][q] * w[j]);
            }
            th
        }
    }
}

/// Per-node defect from semi-isometry: the largest Gram deviation
/// `|g(df e_i, df e_j) − δ_ij|` plus the largest `|g(df e_i, df ∂_t)|` over
/// vertical directions; Heisenberg targets add the largest `|θ(df e_i)|`.
/// Only trusted nodes are meaningful, since centered differences reach
/// outside the domain elsewhere.
pub fn semi_isometry_residual(model: &GroupModel, grid: &GridDomain, f: &MapSample) -> Result<Vec<f64>> {
    let df = frame_differential(model, grid, f)?;
    let dv: Vec<Vec<Vec<f64>>> = model
        .vertical_coords()
        .iter()
        .map(|&a| axis_differential(grid, f, a))
        .collect();
    let r = df.len();
    Ok((0..grid.num_unknowns())
        .map(|q| {
            let e: Vec<Vec<f64>> = df.iter().map(|d| vector_at(d, q)).collect();
            let t: Vec<Vec<f64>> = dv.iter().map(|d| vector_at(d, q)).collect();
            let mut gram = 0.0_f64;
            let mut vertical = 0.0_f64;
            let mut horizontality = 0.0_f64;
            for i in 0..r {
                for j in 0..=i {
                    let target = if i == j { 1.0 } else { 0.0 };
                    gram = gram.max((target_inner(f, q, &e[i], &e[j]) - target).abs());
                }
                for tk in &t {
                    vertical = vertical.max(target_inner(f, q, &e[i], tk).abs());
                }
                horizontality = horizontality.max(contact_form(f, q, &e[i]).abs());
            }
            gram + vertical + horizontality
        })
        .collect())
}

/// Largest value over the nodes flagged in `mask`.
pub fn max_over(values: &[f64], mask: &[bool]) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold(0.0, |acc, (v, _)| acc.max(*v))
}

/// `max |g(H_b, df e_i)| / (1 + |H_b|)` over trusted nodes. Fails when the
/// map is not semi-isometric to within `semi_tol` on trusted nodes.
pub fn orthogonality_residual(
    model: &GroupModel,
    grid: &GridDomain,
    f: &MapSample,
    tension: &TensionField,
    semi_tol: f64,
) -> Result<f64> {
    if tension.target != f.target || tension.values.len() != f.target.tension_components() {
        return Err(Error::InvalidMap("tension does not belong to this map".into()));
    }
    let trusted = &tension.trusted;
    let semi = max_over(&semi_isometry_residual(model, grid, f)?, trusted);
    if semi > semi_tol {
        return Err(Error::NotSemiIsometric {
            residual: semi,
            tolerance: semi_tol,
        });
    }
    let df = frame_differential(model, grid, f)?;
    let mut worst = 0.0_f64;
    for q in (0..grid.num_unknowns()).filter(|&q| trusted[q]) {
        let h = vector_at(&tension.values, q);
        let norm = tension.norm_sq[q].sqrt();
        for d in &df {
            let e = vector_at(d, q);
            // H_b is horizontal, so only the 4Σ part of g survives for Heisenberg targets
            let dot: f64 = match f.target {
                Target::Euclidean(_) => h.iter().zip(&e).map(|(x, y)| x * y).sum(),
                Target::Heisenberg(_) => 4.0 * h.iter().zip(&e).map(|(x, y)| x * y).sum::<f64>(),
            };
            worst = worst.max(dot.abs() / (1.0 + norm));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCoefficients {
    pub d: Vec<f64>,
    pub d_inf: f64,
}

/// `D_i = ∫ (|H_b|² − 4V) u_i²` and `D_∞ = sup (|H_b|² − 4V)`; untrusted
/// nodes use the trusted supremum of `|H_b|²`.
pub fn d_coefficients(grid: &GridDomain, tension: &TensionField, v: &[f64], spectrum: &Spectrum) -> Result<DCoefficients> {
    let n = grid.num_unknowns();
    for len in [tension.norm_sq.len(), v.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, actual: len });
        }
    }
    let vecs = spectrum.eigenvectors.as_ref().ok_or(Error::MissingEigenvectors)?;
    let weight: Vec<f64> = tension
        .filled_norm_sq()
        .iter()
        .zip(v)
        .map(|(h, vv)| h - 4.0 * vv)
        .collect();
    let d = vecs
        .iter()
        .map(|u| {
            if u.len() != n {
                return Err(Error::LengthMismatch { expected: n, actual: u.len() });
            }
            Ok(weight.iter().zip(u).map(|(w, x)| w * x * x).sum::<f64>() * grid.cell_volume())
        })
        .collect::<Result<Vec<_>>>()?;
    let d_inf = weight.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DCoefficients { d, d_inf })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReillyQuantities {
    /// `E_b = ∫ ½ Σ_i |df(e_i)|²`.
    pub energy: f64,
    /// `∫ |H_b|²`.
    pub tension_integral: f64,
    pub volume: f64,
    /// Fraction of nodes that are trusted.
    pub coverage: f64,
}

/// Integrals over trusted nodes only.
pub fn reilly_quantities(
    grid: &GridDomain,
    model: &GroupModel,
    f: &MapSample,
    tension: &TensionField,
    min_coverage: f64,
) -> Result<ReillyQuantities> {
    let n = grid.num_unknowns();
    if tension.norm_sq.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: tension.norm_sq.len(),
        });
    }
    let trusted = &tension.trusted;
    let coverage = tension.trusted_count() as f64 / n as f64;
    if coverage < min_coverage {
        return Err(Error::InsufficientCoverage {
            coverage,
            required: min_coverage,
        });
    }
    let df = frame_differential(model, grid, f)?;
    let w = grid.cell_volume();
    let mut energy = 0.0;
    let mut tension_integral = 0.0;
    for q in (0..n).filter(|&q| trusted[q]) {
        let e: f64 = df
            .iter()
            .map(|d| {
                let v = vector_at(d, q);
                target_inner(f, q, &v, &v)
            })
            .sum();
        energy += 0.5 * e;
        tension_integral += tension.norm_sq[q];
    }
    Ok(ReillyQuantities {
        energy: energy * w,
        tension_integral: tension_integral * w,
        volume: tension.trusted_count() as f64 * w,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble, Potential};
    use crate::eigensolver::{smallest_eigenpairs, SolverOptions};
    use crate::grid::build_grid;
    use crate::group_models::{carnot_step2_model, heisenberg_model, StructureConstants};

    fn h1_grid(h: f64) -> GridDomain {
        build_grid(&[(0.0, 1.0); 3], &[h, h, h / 2.0], None).unwrap()
    }

    fn setup(h: f64) -> (GroupModel, GridDomain, AssembledOperator) {
        let m = heisenberg_model(1).unwrap();
        let g = h1_grid(h);
        let a = assemble(&m, &g, Potential::Zero).unwrap();
        (m, g, a)
    }

    #[test]
    fn constant_map_has_zero_tension_on_trusted_nodes() {
        let (m, g, a) = setup(0.125);
        let f = MapSample::from_fn(Target::Euclidean(2), &g, |_| vec![3.0, -1.0]).unwrap();
        let t = levi_tension_euclidean(&a, &g, &f).unwrap();
        assert_eq!(t.max_norm_sq_trusted(), 0.0);
        let res = semi_isometry_residual(&m, &g, &f).unwrap();
        let trusted = g.trusted_mask();
        for q in (0..g.num_unknowns()).filter(|&q| trusted[q]) {
            assert_eq!(res[q], 1.0);
        }
        let r = reilly_quantities(&g, &m, &f, &t, 0.25).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.tension_integral, 0.0);
    }

    #[test]
    fn projection_residuals() {
        let (m, g, _) = setup(0.125);
        let trusted = g.trusted_mask();
        let scaled = MapPreset::ScaledProjection.sample(&m, &g).unwrap();
        assert!(max_over(&semi_isometry_residual(&m, &g, &scaled).unwrap(), &trusted) < 1e-12);
        let plain = MapPreset::Projection.sample(&m, &g).unwrap();
        let r = max_over(&semi_isometry_residual(&m, &g, &plain).unwrap(), &trusted);
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn identity_map_is_semi_isometric_and_horizontal() {
        let (m, g, a) = setup(0.125);
        let f = MapPreset::Identity.sample(&m, &g).unwrap();
        let t = levi_tension_heisenberg(&a, &g, &f).unwrap();
        assert_eq!(t.values.len(), 2);
        assert!(t.max_norm_sq_trusted() < 1e-18);
        let r = max_over(&semi_isometry_residual(&m, &g, &f).unwrap(), &g.trusted_mask());
        assert!(r < 1e-12, "{r}");
        let q = reilly_quantities(&g, &m, &f, &t, 0.25).unwrap();
        assert!((q.energy / q.volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_tension_of_square() {
        let (_, g, a) = setup(0.125);
        let f = MapSample::from_fn(Target::Heisenberg(1), &g, |p| vec![p[0] * p[0], p[1], p[2]]).unwrap();
        let t = levi_tension_heisenberg(&a, &g, &f).unwrap();
        // Δ_b x² = ¼ X² x² = ½, so |H_b|² = 4 · ¼ = 1
        let trusted = &t.trusted;
        for q in (0..g.num_unknowns()).filter(|&q| trusted[q]) {
            assert!((t.values[0][q] - 0.5).abs() < 1e-10);
            assert!((t.norm_sq[q] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cylinder_tension_converges_and_is_normal() {
        let mut errs = Vec::new();
        for h in [0.125, 0.0625] {
            let (m, g, a) = setup(h);
            let f = MapPreset::Cylinder.sample(&m, &g).unwrap();
            let t = levi_tension_euclidean(&a, &g, &f).unwrap();
            let mut p = [0.0; 3];
            let mut err = 0.0_f64;
            for q in (0..g.num_unknowns()).filter(|&q| t.trusted[q]) {
                g.unknown_point(q, &mut p);
                err = err.max((t.values[0][q] + (2.0 * p[0]).cos()).abs());
                err = err.max((t.values[1][q] + (2.0 * p[0]).sin()).abs());
            }
            errs.push(err);
            let o = orthogonality_residual(&m, &g, &f, &t, 0.1).unwrap();
            assert!(o < 0.05, "{o}");
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn non_semi_isometric_map_is_refused() {
        let (m, g, a) = setup(0.125);
        let f = MapPreset::Projection.sample(&m, &g).unwrap();
        let t = levi_tension_euclidean(&a, &g, &f).unwrap();
        assert!(matches!(
            orthogonality_residual(&m, &g, &f, &t, 1e-3),
            Err(Error::NotSemiIsometric { .. })
        ));
    }

    #[test]
    fn tangential_perturbation_is_detected() {
        let (m, g, a) = setup(0.125);
        let f = MapPreset::ScaledProjection.sample(&m, &g).unwrap();
        let mut t = levi_tension_euclidean(&a, &g, &f).unwrap();
        t.values[0].iter_mut().for_each(|x| *x += 1.0);
        assert!(orthogonality_residual(&m, &g, &f, &t, 1e-6).unwrap() > 0.4);
    }

    #[test]
    fn d_coefficients_cases() {
        let (_, g, a) = setup(0.25);
        let s = smallest_eigenpairs(&a, 3, &SolverOptions::default()).unwrap();
        let n = g.num_unknowns();
        let zero = TensionField::uniform(Target::Euclidean(2), n, 0.0);
        let d = d_coefficients(&g, &zero, &vec![0.0; n], &s).unwrap();
        assert!(d.d.iter().all(|x| *x == 0.0));
        assert_eq!(d.d_inf, 0.0);
        let d = d_coefficients(&g, &zero, &vec![0.5; n], &s).unwrap();
        assert!(d.d.iter().all(|x| (x + 2.0).abs() < 1e-8));
        let sphere = TensionField::sphere(2, n);
        let d = d_coefficients(&g, &sphere, &vec![0.0; n], &s).unwrap();
        assert!(d.d.iter().all(|x| (x - 16.0).abs() < 1e-7));
        assert_eq!(d.d_inf, 16.0);
        let mut bare = s.clone();
        bare.eigenvectors = None;
        assert!(matches!(d_coefficients(&g, &zero, &vec![0.0; n], &bare), Err(Error::MissingEigenvectors)));
    }

    #[test]
    fn carnot_coordinates_are_harmonic_inside() {
        let m = carnot_step2_model(3, 3, &StructureConstants::levi_civita()).unwrap();
        let g = build_grid(&vec![(0.0, 1.0); 6], &[0.25; 6], None).unwrap();
        let a = assemble(&m, &g, Potential::Zero).unwrap();
        let f = MapPreset::Coordinates.sample(&m, &g).unwrap();
        let t = levi_tension_euclidean(&a, &g, &f).unwrap();
        assert!(t.trusted_count() > 0);
        assert!(t.max_trusted() < 1e-10);
        assert!(MapPreset::Identity.sample(&m, &g).is_err());
    }

    #[test]
    fn coverage_is_enforced() {
        let (m, g, a) = setup(0.25);
        let f = MapPreset::ScaledProjection.sample(&m, &g).unwrap();
        let t = levi_tension_euclidean(&a, &g, &f).unwrap();
        assert!(matches!(
            reilly_quantities(&g, &m, &f, &t, 0.99),
            Err(Error::InsufficientCoverage { .. })
        ));
    }

    #[test]
    fn potential_must_vanish() {
        let m = heisenberg_model(1).unwrap();
        let g = h1_grid(0.25);
        let a = assemble(&m, &g, Potential::Constant(1.0)).unwrap();
        let f = MapPreset::ScaledProjection.sample(&m, &g).unwrap();
        assert!(levi_tension_euclidean(&a, &g, &f).is_err());
    }
}
