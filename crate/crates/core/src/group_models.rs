//! Coordinate presentations of the groups whose horizontal Laplacians we
//! discretize.
//!
//! Every model is a list of horizontal vector fields `X_j = Σ_a c_j^a(p) ∂_a`
//! whose coefficients are affine in the point `p`, plus the weight `w` that
//! turns `Σ_j X_j²` into the operator of interest:
//!
//! * Heisenberg `ℍⁿ` in coordinates `(x_1..x_n, y_1..y_n, t)` with
//!   `X_j = ∂x_j + 2y_j ∂t`, `Y_j = ∂y_j − 2x_j ∂t`. The Levi form gives
//!   `|X_j|² = 4`, so the sub-Laplacian is `¼ Σ (X_j² + Y_j²)` and `w = ¼`.
//! * step-2 Carnot groups in first-kind exponential coordinates
//!   `(x_1..x_{d1}, t_1..t_{d2})` with
//!   `X_i = ∂x_i + ½ Σ_{k,j} c^k_{ji} x_j ∂t_k`, so that
//!   `[X_i, X_j] = Σ_k c^k_{ij} ∂t_k`, and `w = 1`.
//! * the abelian group `ℝᵈ` with `X_j = ∂_j`, `w = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `constant + Σ (coordinate, coefficient)`; the coefficient of one `∂_a`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineCoeff {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineCoeff {
    pub fn constant(value: f64) -> Self {
        Self {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn linear(coord: usize, slope: f64) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(coord, slope)],
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(b, s)| acc + s * point[b])
    }

    /// Partial derivative with respect to coordinate `b` (a constant).
    pub fn partial(&self, b: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(c, _)| *c == b)
            .map(|(_, s)| s)
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|(_, s)| *s == 0.0)
    }

    fn depends_on(&self, b: usize) -> bool {
        self.partial(b) != 0.0
    }
}

/// A horizontal field: one affine coefficient per ambient coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalField {
    pub coefficients: Vec<AffineCoeff>,
}

impl HorizontalField {
    /// Coordinates along which the field differentiates somewhere.
    pub fn directions(&self) -> impl Iterator<Item = usize> + '_ {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(a, _)| a)
    }

    /// Apply the field to an affine function `g`: `X g (p) = Σ_b c^b(p) ∂_b g`.
    pub fn apply_affine(&self, g: &AffineCoeff, point: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(b, c)| c.eval(point) * g.partial(b))
            .sum()
    }

    /// Flat divergence `Σ_a ∂_a c^a`; zero means the field is formally
    /// skew-adjoint for Lebesgue measure.
    pub fn divergence(&self) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(a, c)| c.partial(a))
            .sum()
    }

    /// True when no coefficient depends on a coordinate the field moves along.
    /// This is what makes the one-sided and centered difference stencils
    /// transpose cleanly.
    pub fn is_translation_invariant_along_itself(&self) -> bool {
        let dirs: Vec<usize> = self.directions().collect();
        self.coefficients
            .iter()
            .all(|c| dirs.iter().all(|&b| !c.depends_on(b)))
    }
}

/// Structure constants `c^k_{ij}` of a step-2 algebra, stored as
/// `values[k][i][j]`, so that `[X_i, X_j] = Σ_k c^k_{ij} ∂t_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StructureConstants(pub Vec<Vec<Vec<f64>>>);

impl StructureConstants {
    pub fn zeros(rank: usize, layers: usize) -> Self {
        Self(vec![vec![vec![0.0; rank]; rank]; layers])
    }

    /// The Levi-Civita symbol on three generators; the free step-2 algebra.
    pub fn levi_civita() -> Self {
        let mut c = Self::zeros(3, 3);
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            c.0[k][i][j] = 1.0;
            c.0[k][j][i] = -1.0;
        }
        c
    }

    pub fn layers(&self) -> usize {
        self.0.len()
    }

    pub fn rank(&self) -> usize {
        self.0.first().map_or(0, |m| m.len())
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.0[k][i][j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Heisenberg { n: usize },
    CarnotStep2 { d1: usize, d2: usize },
    Abelian { d: usize },
}

/// JSON form of a model: `{"kind": "heisenberg", "n": 1}`,
/// `{"kind": "carnot_step2", "d1": 3, "d2": 3, "c": [[[..]]]}` with `c[k][i][j]`,
/// or `{"kind": "abelian", "d": 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDescriptor {
    Heisenberg {
        n: usize,
    },
    CarnotStep2 {
        d1: usize,
        d2: usize,
        c: StructureConstants,
    },
    Abelian {
        d: usize,
    },
}

impl ModelDescriptor {
    pub fn build(&self) -> Result<GroupModel> {
        match self {
            Self::Heisenberg { n } => heisenberg_model(*n),
            Self::CarnotStep2 { d1, d2, c } => carnot_step2_model(*d1, *d2, c),
            Self::Abelian { d } => abelian_model(*d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    kind: ModelKind,
    ambient_dim: usize,
    levi_weight: f64,
    fields: Vec<HorizontalField>,
    vertical: Vec<usize>,
    /// Prescribed brackets `[X_i, X_j] = Σ_k brackets[k][i][j] ∂_{vertical[k]}`.
    brackets: StructureConstants,
    descriptor: ModelDescriptor,
}

/// `ℍⁿ` with the frame `X_j = ∂x_j + 2y_j ∂t`, `Y_j = ∂y_j − 2x_j ∂t`.
pub fn heisenberg_model(n: usize) -> Result<GroupModel> {
    if n == 0 {
        return Err(Error::InvalidModel(
            "Heisenberg group needs n >= 1".into(),
        ));
    }
    let dim = 2 * n + 1;
    let t = 2 * n;
    let mut fields = Vec::with_capacity(2 * n);
    for j in 0..n {
        let mut c = vec![AffineCoeff::default(); dim];
        c[j] = AffineCoeff::constant(1.0);
        c[t] = AffineCoeff::linear(n + j, 2.0);
        fields.push(HorizontalField { coefficients: c });
    }
    for j in 0..n {
        let mut c = vec![AffineCoeff::default(); dim];
        c[n + j] = AffineCoeff::constant(1.0);
        c[t] = AffineCoeff::linear(j, -2.0);
        fields.push(HorizontalField { coefficients: c });
    }
    // [X_j, Y_k] = -4 δ_jk T
    let mut brackets = StructureConstants::zeros(2 * n, 1);
    for j in 0..n {
        brackets.0[0][j][n + j] = -4.0;
        brackets.0[0][n + j][j] = 4.0;
    }
    Ok(GroupModel {
        kind: ModelKind::Heisenberg { n },
        ambient_dim: dim,
        levi_weight: 0.25,
        fields,
        vertical: vec![t],
        brackets,
        descriptor: ModelDescriptor::Heisenberg { n },
    })
}

/// Step-2 Carnot group in exponential coordinates of the first kind.
pub fn carnot_step2_model(d1: usize, d2: usize, c: &StructureConstants) -> Result<GroupModel> {
    if d1 < 2 || d2 < 1 {
        return Err(Error::InvalidModel(format!(
            "step-2 Carnot model needs d1 >= 2 and d2 >= 1, got d1={d1}, d2={d2}"
        )));
    }
    if c.layers() != d2 || c.0.iter().any(|m| m.len() != d1 || m.iter().any(|r| r.len() != d1)) {
        return Err(Error::InvalidModel(format!(
            "structure constants must have shape [{d2}][{d1}][{d1}]"
        )));
    }
    for k in 0..d2 {
        for i in 0..d1 {
            for j in 0..d1 {
                let (a, b) = (c.get(k, i, j), c.get(k, j, i));
                if !a.is_finite() || a != -b {
                    return Err(Error::InvalidModel(format!(
                        "structure constants not antisymmetric at k={k}, i={i}, j={j}"
                    )));
                }
            }
        }
    }
    let rank = bracket_image_rank(c, d1, d2);
    if rank < d2 {
        return Err(Error::InvalidModel(format!(
            "structure constants reach only {rank} of {d2} vertical directions (not bracket-generating)"
        )));
    }

    let dim = d1 + d2;
    let fields = (0..d1)
        .map(|i| {
            let mut coeffs = vec![AffineCoeff::default(); dim];
            coeffs[i] = AffineCoeff::constant(1.0);
            for k in 0..d2 {
                let terms: Vec<(usize, f64)> = (0..d1)
                    .filter(|&j| c.get(k, j, i) != 0.0)
                    .map(|j| (j, 0.5 * c.get(k, j, i)))
                    .collect();
                coeffs[d1 + k] = AffineCoeff {
                    constant: 0.0,
                    terms,
                };
            }
            HorizontalField {
                coefficients: coeffs,
            }
        })
        .collect();

    Ok(GroupModel {
        kind: ModelKind::CarnotStep2 { d1, d2 },
        ambient_dim: dim,
        levi_weight: 1.0,
        fields,
        vertical: (d1..dim).collect(),
        brackets: c.clone(),
        descriptor: ModelDescriptor::CarnotStep2 {
            d1,
            d2,
            c: c.clone(),
        },
    })
}

/// `ℝᵈ` with the coordinate frame; its operator is the Dirichlet Laplacian.
pub fn abelian_model(d: usize) -> Result<GroupModel> {
    if d == 0 {
        return Err(Error::InvalidModel("abelian model needs d >= 1".into()));
    }
    let fields = (0..d)
        .map(|j| {
            let mut c = vec![AffineCoeff::default(); d];
            c[j] = AffineCoeff::constant(1.0);
            HorizontalField { coefficients: c }
        })
        .collect();
    Ok(GroupModel {
        kind: ModelKind::Abelian { d },
        ambient_dim: d,
        levi_weight: 1.0,
        fields,
        vertical: Vec::new(),
        brackets: StructureConstants::zeros(d, 0),
        descriptor: ModelDescriptor::Abelian { d },
    })
}

/// Rank of the span of the vectors `(c^k_{ij})_k`, `i < j`.
fn bracket_image_rank(c: &StructureConstants, d1: usize, d2: usize) -> usize {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..d1 {
        for j in (i + 1)..d1 {
            rows.push((0..d2).map(|k| c.get(k, i, j)).collect());
        }
    }
    let scale = rows
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    // Gaussian elimination with partial pivoting on columns.
    let mut rank = 0;
    for col in 0..d2 {
        let pivot = (rank..rows.len()).max_by(|&a, &b| {
            rows[a][col].abs().total_cmp(&rows[b][col].abs())
        });
        let Some(p) = pivot else { break };
        if rows[p][col].abs() <= tol {
            continue;
        }
        rows.swap(rank, p);
        for r in (rank + 1)..rows.len() {
            let f = rows[r][col] / rows[rank][col];
            for cc in col..d2 {
                rows[r][cc] -= f * rows[rank][cc];
            }
        }
        rank += 1;
    }
    rank
}

impl GroupModel {
    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn horizontal_rank(&self) -> usize {
        self.fields.len()
    }

    /// Factor `w` in `−Δ = w Σ_j X_jᵀX_j`.
    pub fn levi_weight(&self) -> f64 {
        self.levi_weight
    }

    pub fn fields(&self) -> &[HorizontalField] {
        &self.fields
    }

    pub fn field(&self, j: usize) -> Result<&HorizontalField> {
        self.fields.get(j).ok_or(Error::FieldIndex {
            index: j,
            rank: self.fields.len(),
        })
    }

    /// Coordinates of the vertical (second layer / Reeb) directions.
    pub fn vertical_coords(&self) -> &[usize] {
        &self.vertical
    }

    /// Horizontal coordinates `x_1..`, in frame order.
    pub fn horizontal_coords(&self) -> Vec<usize> {
        (0..self.ambient_dim)
            .filter(|a| !self.vertical.contains(a))
            .collect()
    }

    pub fn structure_constants(&self) -> &StructureConstants {
        &self.brackets
    }

    /// Replace the prescribed brackets without touching the fields. Used to
    /// exercise [`bracket_residual`] against inconsistent data.
    pub fn with_structure_constants(mut self, c: StructureConstants) -> Self {
        self.brackets = c;
        self
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    /// Heisenberg `n`, or `d1/2` for Carnot models (the CR dimension the
    /// horizontal rank corresponds to).
    pub fn cr_dimension(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Heisenberg { n } => Some(n),
            _ if self.horizontal_rank() % 2 == 0 => Some(self.horizontal_rank() / 2),
            _ => None,
        }
    }

    /// Affine coordinate function `x_a`.
    pub fn coordinate(a: usize) -> AffineCoeff {
        AffineCoeff::linear(a, 1.0)
    }

    /// Analytic commutator `[X_i, X_j]` at `point`, as coefficients of `∂_a`.
    pub fn commutator_at(&self, i: usize, j: usize, point: &[f64]) -> Vec<f64> {
        let (xi, xj) = (&self.fields[i], &self.fields[j]);
        (0..self.ambient_dim)
            .map(|a| xi.apply_affine(&xj.coefficients[a], point) - xj.apply_affine(&xi.coefficients[a], point))
            .collect()
    }

    /// Commutator prescribed by the structure constants.
    pub fn prescribed_commutator(&self, i: usize, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.ambient_dim];
        for (k, &a) in self.vertical.iter().enumerate() {
            if k < self.brackets.layers() && i < self.brackets.rank() && j < self.brackets.rank() {
                v[a] = self.brackets.get(k, i, j);
            }
        }
        v
    }
}

/// Largest discrepancy, over interior nodes of `grid` and pairs of horizontal
/// fields, between the analytic commutator and the prescribed one.
pub fn bracket_residual(model: &GroupModel, grid: &crate::grid::GridDomain) -> Result<f64> {
    if grid.dim() != model.ambient_dim() {
        return Err(Error::LengthMismatch {
            expected: model.ambient_dim(),
            actual: grid.dim(),
        });
    }
    let r = model.horizontal_rank();
    let mut worst = 0.0_f64;
    let mut point = vec![0.0; grid.dim()];
    for q in 0..grid.num_unknowns() {
        grid.unknown_point(q, &mut point);
        for i in 0..r {
            for j in (i + 1)..r {
                let got = model.commutator_at(i, j, &point);
                let want = model.prescribed_commutator(i, j);
                for (g, w) in got.iter().zip(&want) {
                    worst = worst.max((g - w).abs());
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn unit_box(dim: usize, h: f64) -> crate::grid::GridDomain {
        build_grid(&vec![(0.0, 1.0); dim], &vec![h; dim], None).unwrap()
    }

    #[test]
    fn heisenberg_frame_matches_definition() {
        let m = heisenberg_model(1).unwrap();
        assert_eq!(m.ambient_dim(), 3);
        assert_eq!(m.horizontal_rank(), 2);
        assert_eq!(m.levi_weight(), 0.25);
        let p = [0.3, 0.7, 0.1];
        let x = &m.fields()[0];
        let y = &m.fields()[1];
        assert_eq!(x.coefficients[0].eval(&p), 1.0);
        assert_eq!(x.coefficients[1].eval(&p), 0.0);
        assert_eq!(x.coefficients[2].eval(&p), 2.0 * 0.7);
        assert_eq!(y.coefficients[1].eval(&p), 1.0);
        assert_eq!(y.coefficients[2].eval(&p), -2.0 * 0.3);

        let m2 = heisenberg_model(2).unwrap();
        assert_eq!(m2.ambient_dim(), 5);
        assert_eq!(m2.horizontal_rank(), 4);
        assert!(heisenberg_model(0).is_err());
    }

    #[test]
    fn heisenberg_brackets() {
        let m = heisenberg_model(2).unwrap();
        let p = [0.1, -0.4, 0.9, 0.2, 3.0];
        for i in 0..4 {
            for j in 0..4 {
                let c = m.commutator_at(i, j, &p);
                let expect_t = match (i, j) {
                    (0, 2) | (1, 3) => -4.0,
                    (2, 0) | (3, 1) => 4.0,
                    _ => 0.0,
                };
                assert_eq!(c[4], expect_t, "[{i},{j}]");
                assert!(c[..4].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn frames_are_skew_adjoint_and_stencil_clean() {
        let models = [
            heisenberg_model(1).unwrap(),
            heisenberg_model(3).unwrap(),
            carnot_step2_model(3, 3, &StructureConstants::levi_civita()).unwrap(),
            abelian_model(4).unwrap(),
        ];
        for m in &models {
            for f in m.fields() {
                assert_eq!(f.divergence(), 0.0);
                assert!(f.is_translation_invariant_along_itself());
            }
        }
    }

    #[test]
    fn carnot_with_heisenberg_constants_reproduces_frame() {
        let mut c = StructureConstants::zeros(2, 1);
        c.0[0][0][1] = -4.0;
        c.0[0][1][0] = 4.0;
        let car = carnot_step2_model(2, 1, &c).unwrap();
        let heis = heisenberg_model(1).unwrap();
        assert_eq!(car.fields(), heis.fields());
        assert_eq!(car.levi_weight(), 1.0);
    }

    #[test]
    fn carnot_free_step_two() {
        let m = carnot_step2_model(3, 3, &StructureConstants::levi_civita()).unwrap();
        assert_eq!(m.ambient_dim(), 6);
        assert_eq!(m.horizontal_rank(), 3);
        // X_j x_i = δ_ij
        let p = [0.2, -0.3, 0.5, 0.1, 0.2, 0.3];
        for (j, f) in m.fields().iter().enumerate() {
            for i in 0..3 {
                let v = f.apply_affine(&GroupModel::coordinate(i), &p);
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn carnot_rejects_bad_constants() {
        let mut c = StructureConstants::levi_civita();
        c.0[0][1][2] = 2.0;
        assert!(carnot_step2_model(3, 3, &c).is_err());

        let mut c = StructureConstants::zeros(2, 2);
        c.0[0][0][1] = 1.0;
        c.0[0][1][0] = -1.0;
        let err = carnot_step2_model(2, 2, &c).unwrap_err();
        assert!(err.to_string().contains("bracket-generating"));

        assert!(carnot_step2_model(1, 1, &StructureConstants::zeros(1, 1)).is_err());
    }

    #[test]
    fn abelian_models() {
        assert_eq!(abelian_model(2).unwrap().horizontal_rank(), 2);
        assert_eq!(abelian_model(1).unwrap().ambient_dim(), 1);
        assert!(abelian_model(0).is_err());
    }

    #[test]
    fn bracket_residual_zero_for_correct_models() {
        let g3 = unit_box(3, 0.25);
        assert_eq!(bracket_residual(&heisenberg_model(1).unwrap(), &g3).unwrap(), 0.0);
        let g2 = unit_box(2, 0.25);
        assert_eq!(bracket_residual(&abelian_model(2).unwrap(), &g2).unwrap(), 0.0);
        let g6 = unit_box(6, 0.5);
        let car = carnot_step2_model(3, 3, &StructureConstants::levi_civita()).unwrap();
        assert_eq!(bracket_residual(&car, &g6).unwrap(), 0.0);
    }

    #[test]
    fn bracket_residual_detects_corruption() {
        let g3 = unit_box(3, 0.25);
        let m = heisenberg_model(1).unwrap();
        let mut c = m.structure_constants().clone();
        c.0[0][0][1] = -3.5;
        let bad = m.with_structure_constants(c);
        assert!(bracket_residual(&bad, &g3).unwrap() > 0.4);
    }

    #[test]
    fn descriptor_json_round_trip() {
        let d: ModelDescriptor = serde_json::from_str(r#"{"kind":"heisenberg","n":2}"#).unwrap();
        assert_eq!(d.build().unwrap().ambient_dim(), 5);
        let car = ModelDescriptor::CarnotStep2 {
            d1: 3,
            d2: 3,
            c: StructureConstants::levi_civita(),
        };
        let s = serde_json::to_string(&car).unwrap();
        let back: ModelDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, car);
        assert!(serde_json::from_str::<ModelDescriptor>(r#"{"kind":"abelian","d":0}"#)
            .unwrap()
            .build()
            .is_err());
    }
}
