//! Difference operators for horizontal fields and assembly of `−Δ + V`.
//!
//! Two first-order discretizations of a field `X = Σ_a c^a ∂_a` are provided.
//!
//! * [`first_order_operator`] is the centered difference, a square skew
//!   matrix on the unknowns. It is used for pointwise derivatives of sampled
//!   maps. Its square is *not* used for the operator: `SᵀS` of a centered
//!   difference decouples odd and even lattice sites and carries spurious
//!   near-zero modes.
//! * [`one_sided_operator`] is the forward difference along the field,
//!   `(F u)(p) = Σ_a c^a(p) (u(p + h_a e_a) − u(p)) / h_a`, with one row for
//!   every lattice node whose stencil touches an unknown. Since `c^a` does not
//!   depend on any coordinate the field moves along, `FᵀF` is a consistent
//!   second-order approximation of `−X²`, and `Σ_r (F u)_r²` is the discrete
//!   `∫|X u|²`.
//!
//! The assembled matrix is `w Σ_j F_jᵀF_j + diag(V)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridDescriptor, GridDomain};
use crate::group_models::{GroupModel, HorizontalField, ModelDescriptor};
use crate::sparse::CsrMatrix;

/// Centered difference of field `field_index`; exactly skew-symmetric.
pub fn first_order_operator(model: &GroupModel, field_index: usize, grid: &GridDomain) -> Result<CsrMatrix> {
    check_dims(model, grid)?;
    let field = model.field(field_index)?;
    let n = grid.num_unknowns();
    let dirs: Vec<usize> = field.directions().collect();
    let mut point = vec![0.0; grid.dim()];
    let mut t = Vec::with_capacity(2 * dirs.len() * n);
    for q in 0..n {
        let l = grid.lattice_of(q);
        grid.lattice_point(l, &mut point);
        for &a in &dirs {
            let c = field.coefficients[a].eval(&point);
            if c == 0.0 {
                continue;
            }
            let w = c / (2.0 * grid.spacings()[a]);
            if let Some(nb) = grid.step(l, a, true).and_then(|m| grid.unknown_at(m)) {
                t.push((q, nb, w));
            }
            if let Some(nb) = grid.step(l, a, false).and_then(|m| grid.unknown_at(m)) {
                t.push((q, nb, -w));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, t))
}

/// Forward difference along a field; rows are lattice anchors.
#[derive(Debug, Clone)]
pub struct OneSidedOperator {
    pub matrix: CsrMatrix,
    /// Lattice node of every row.
    pub anchors: Vec<usize>,
}

fn anchor_row(field: &HorizontalField, dirs: &[usize], grid: &GridDomain, l: usize, point: &mut [f64]) -> Vec<(usize, f64)> {
    grid.lattice_point(l, point);
    let mut entries = Vec::with_capacity(dirs.len() + 1);
    let mut diag = 0.0;
    for &a in dirs {
        let c = field.coefficients[a].eval(point) / grid.spacings()[a];
        if c == 0.0 {
            continue;
        }
        diag -= c;
        if let Some(q) = grid.step(l, a, true).and_then(|m| grid.unknown_at(m)) {
            entries.push((q, c));
        }
    }
    if diag != 0.0 {
        if let Some(q) = grid.unknown_at(l) {
            entries.push((q, diag));
        }
    }
    entries.sort_by_key(|e| e.0);
    entries
}

fn anchor_rows(field: &HorizontalField, grid: &GridDomain) -> Vec<(usize, Vec<(usize, f64)>)> {
    let dirs: Vec<usize> = field.directions().collect();
    (0..grid.lattice_len())
        .into_par_iter()
        .map_init(
            || vec![0.0; grid.dim()],
            |point, l| (l, anchor_row(field, &dirs, grid, l, point)),
        )
        .filter(|(_, e)| !e.is_empty())
        .collect()
}

pub fn one_sided_operator(model: &GroupModel, field_index: usize, grid: &GridDomain) -> Result<OneSidedOperator> {
    check_dims(model, grid)?;
    let rows = anchor_rows(model.field(field_index)?, grid);
    let mut t = Vec::new();
    let mut anchors = Vec::with_capacity(rows.len());
    for (r, (l, entries)) in rows.into_iter().enumerate() {
        anchors.push(l);
        t.extend(entries.into_iter().map(|(c, v)| (r, c, v)));
    }
    let matrix = CsrMatrix::from_triplets(anchors.len(), grid.num_unknowns(), t);
    Ok(OneSidedOperator { matrix, anchors })
}

/// Potential `V` on the unknowns.
#[derive(Clone, Copy)]
pub enum Potential<'a> {
    Zero,
    Constant(f64),
    Nodes(&'a [f64]),
    Function(&'a dyn Fn(&[f64]) -> f64),
}

impl Potential<'_> {
    pub fn sample(&self, grid: &GridDomain) -> Result<Vec<f64>> {
        let v = match *self {
            Self::Zero => vec![0.0; grid.num_unknowns()],
            Self::Constant(c) => vec![c; grid.num_unknowns()],
            Self::Nodes(v) => {
                if v.len() != grid.num_unknowns() {
                    return Err(Error::LengthMismatch {
                        expected: grid.num_unknowns(),
                        actual: v.len(),
                    });
                }
                v.to_vec()
            }
            Self::Function(f) => grid.sample(f),
        };
        if let Some(node) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinitePotential { node });
        }
        Ok(v)
    }
}

/// Sparse symmetric matrix of `−Δ_b + V` (or `−Δ_H + V`) on the unknowns.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub matrix: CsrMatrix,
    pub potential: Vec<f64>,
    pub potential_min: f64,
    pub cell_volume: f64,
    pub model: Option<ModelDescriptor>,
    pub grid: Option<GridDescriptor>,
}

impl AssembledOperator {
    /// Wrap an arbitrary symmetric matrix (test doubles, external operators).
    pub fn from_matrix(matrix: CsrMatrix, cell_volume: f64) -> Self {
        let n = matrix.nrows();
        Self {
            matrix,
            potential: vec![0.0; n],
            potential_min: 0.0,
            cell_volume,
            model: None,
            grid: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn has_zero_potential(&self) -> bool {
        self.potential.iter().all(|v| *v == 0.0)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }
}

/// `w Σ_j F_jᵀF_j + diag(V)`. Each product `F_ra F_rb` is added to both
/// `(a, b)` and `(b, a)` in the same order, so the result is bitwise symmetric.
pub fn assemble(model: &GroupModel, grid: &GridDomain, potential: Potential<'_>) -> Result<AssembledOperator> {
    check_dims(model, grid)?;
    let v = potential.sample(grid)?;
    let n = grid.num_unknowns();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for field in model.fields() {
        let rows = anchor_rows(field, grid);
        let products: Vec<(usize, usize, f64)> = rows
            .par_iter()
            .flat_map_iter(|(_, e)| {
                e.iter()
                    .flat_map(move |&(a, fa)| e.iter().map(move |&(b, fb)| (a, b, fa * fb)))
            })
            .collect();
        triplets.extend(products);
    }
    let mut matrix = CsrMatrix::from_triplets(n, n, triplets);
    let w = model.levi_weight();
    matrix.values_mut().iter_mut().for_each(|x| *x *= w);
    if v.iter().any(|x| *x != 0.0) {
        matrix = matrix.add_diagonal(&v);
    }
    let potential_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AssembledOperator {
        matrix,
        potential: v,
        potential_min,
        cell_volume: grid.cell_volume(),
        model: Some(model.descriptor().clone()),
        grid: grid.descriptor().cloned(),
    })
}

/// Frame components `√w F_j u` of the horizontal gradient, one vector per
/// field over that field's anchor rows.
#[derive(Debug, Clone)]
pub struct HorizontalGradient {
    pub components: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<usize>>,
    pub cell_volume: f64,
}

impl HorizontalGradient {
    /// `Σ_j ∫ |component_j|²`.
    pub fn energy(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            * self.cell_volume
    }

    /// Component `j` at lattice node `l`, if `l` anchors a row.
    pub fn at_lattice(&self, j: usize, l: usize) -> Option<f64> {
        self.anchors[j]
            .binary_search(&l)
            .ok()
            .map(|r| self.components[j][r])
    }
}

pub fn horizontal_gradient(model: &GroupModel, grid: &GridDomain, u: &[f64]) -> Result<HorizontalGradient> {
    check_dims(model, grid)?;
    if u.len() != grid.num_unknowns() {
        return Err(Error::LengthMismatch {
            expected: grid.num_unknowns(),
            actual: u.len(),
        });
    }
    let scale = model.levi_weight().sqrt();
    let mut components = Vec::with_capacity(model.horizontal_rank());
    let mut anchors = Vec::with_capacity(model.horizontal_rank());
    for j in 0..model.horizontal_rank() {
        let op = one_sided_operator(model, j, grid)?;
        let mut c = op.matrix.mul_vec(u);
        c.iter_mut().for_each(|x| *x *= scale);
        components.push(c);
        anchors.push(op.anchors);
    }
    Ok(HorizontalGradient {
        components,
        anchors,
        cell_volume: grid.cell_volume(),
    })
}

fn check_dims(model: &GroupModel, grid: &GridDomain) -> Result<()> {
    if model.ambient_dim() != grid.dim() {
        return Err(Error::LengthMismatch {
            expected: model.ambient_dim(),
            actual: grid.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::group_models::{abelian_model, carnot_step2_model, heisenberg_model, StructureConstants};

    fn boxed(dim: usize, h: &[f64]) -> GridDomain {
        build_grid(&vec![(0.0, 1.0); dim], h, None).unwrap()
    }

    #[test]
    fn centered_abelian_is_half_tridiagonal() {
        let m = abelian_model(1).unwrap();
        let g = build_grid(&[(0.0, 4.0)], &[1.0], None).unwrap();
        let s = first_order_operator(&m, 0, &g).unwrap();
        let d = s.to_dense();
        assert_eq!(d.nrows(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = match j as i64 - i as i64 {
                    1 => 0.5,
                    -1 => -0.5,
                    _ => 0.0,
                };
                assert_eq!(d[(i, j)], want);
            }
        }
        assert!(first_order_operator(&m, 1, &g).is_err());
    }

    #[test]
    fn centered_heisenberg_row() {
        let m = heisenberg_model(1).unwrap();
        let h = [0.25, 0.25, 0.125];
        let g = boxed(3, &h);
        let s = first_order_operator(&m, 0, &g).unwrap();
        // node (0.5, 0.5, 0.5)
        let mut p = [0.0; 3];
        let q = (0..g.num_unknowns())
            .find(|&q| {
                g.unknown_point(q, &mut p);
                p == [0.5, 0.5, 0.5]
            })
            .unwrap();
        let row: Vec<(usize, f64)> = s.row(q).collect();
        assert_eq!(row.len(), 4);
        let mut coeffs: Vec<f64> = row.iter().map(|r| r.1).collect();
        coeffs.sort_by(f64::total_cmp);
        assert_eq!(coeffs, vec![-4.0, -2.0, 2.0, 4.0]); // 1/(2h_x) = 2, 2y/(2h_t) = 4
    }

    #[test]
    fn centered_operators_are_exactly_skew() {
        let car = carnot_step2_model(3, 3, &StructureConstants::levi_civita()).unwrap();
        let cases = [
            (heisenberg_model(1).unwrap(), boxed(3, &[0.125, 0.25, 0.0625])),
            (heisenberg_model(2).unwrap(), boxed(5, &[0.25; 5])),
            (car, boxed(6, &[0.25; 6])),
            (abelian_model(2).unwrap(), boxed(2, &[0.1, 0.2])),
        ];
        for (m, g) in &cases {
            for j in 0..m.horizontal_rank() {
                let s = first_order_operator(m, j, g).unwrap();
                assert_eq!(s.skew_defect(), 0.0);
            }
        }
    }

    #[test]
    fn one_sided_abelian_gives_standard_laplacian() {
        let m = abelian_model(1).unwrap();
        let g = build_grid(&[(0.0, 1.0)], &[0.25], None).unwrap();
        let a = assemble(&m, &g, Potential::Zero).unwrap();
        let d = a.matrix.to_dense();
        assert_eq!(d[(0, 0)], 32.0);
        assert_eq!(d[(0, 1)], -16.0);
        assert_eq!(d[(0, 2)], 0.0);
        let f = one_sided_operator(&m, 0, &g).unwrap();
        assert_eq!(f.matrix.nrows(), 4);
    }

    #[test]
    fn assembly_is_bitwise_symmetric() {
        let m = heisenberg_model(1).unwrap();
        let g = boxed(3, &[0.125, 0.125, 0.0625]);
        let v = |p: &[f64]| 3.0 * p[0] * p[1] + p[2].sin();
        let a = assemble(&m, &g, Potential::Function(&v)).unwrap();
        assert!(a.matrix.is_symmetric_exact());
        assert!(a.matrix.nnz() > g.num_unknowns());
    }

    #[test]
    fn carnot_heisenberg_constants_give_four_times_heisenberg() {
        let mut c = StructureConstants::zeros(2, 1);
        c.0[0][0][1] = -4.0;
        c.0[0][1][0] = 4.0;
        let car = carnot_step2_model(2, 1, &c).unwrap();
        let heis = heisenberg_model(1).unwrap();
        let g = boxed(3, &[0.125, 0.125, 0.0625]);
        let ac = assemble(&car, &g, Potential::Zero).unwrap();
        let ah = assemble(&heis, &g, Potential::Zero).unwrap();
        assert_eq!(ac.matrix.nnz(), ah.matrix.nnz());
        for r in 0..g.num_unknowns() {
            for ((c1, v1), (c2, v2)) in ac.matrix.row(r).zip(ah.matrix.row(r)) {
                assert_eq!(c1, c2);
                assert_eq!(v1, 4.0 * v2);
            }
        }
    }

    #[test]
    fn constant_potential_shifts_diagonal() {
        let m = heisenberg_model(1).unwrap();
        let g = boxed(3, &[0.25, 0.25, 0.125]);
        let a0 = assemble(&m, &g, Potential::Zero).unwrap();
        let a1 = assemble(&m, &g, Potential::Constant(2.5)).unwrap();
        for i in 0..g.num_unknowns() {
            assert_eq!(a1.matrix.get(i, i), a0.matrix.get(i, i) + 2.5);
        }
        assert_eq!(a1.potential_min, 2.5);
        let bad = vec![f64::NAN; g.num_unknowns()];
        assert!(matches!(
            assemble(&m, &g, Potential::Nodes(&bad)),
            Err(Error::NonFinitePotential { node: 0 })
        ));
    }

    #[test]
    fn gradient_energy_matches_quadratic_form() {
        let m = heisenberg_model(1).unwrap();
        let g = boxed(3, &[0.125, 0.125, 0.0625]);
        let a = assemble(&m, &g, Potential::Zero).unwrap();
        let u = g.sample(|p| (3.0 * p[0]).sin() * p[1] * (1.0 - p[2]) + p[2] * p[2]);
        let grad = horizontal_gradient(&m, &g, &u).unwrap();
        let au = a.apply(&u);
        let form: f64 = u.iter().zip(&au).map(|(x, y)| x * y).sum::<f64>() * g.cell_volume();
        assert!((grad.energy() - form).abs() <= 1e-12 * form.abs());

        let zero = horizontal_gradient(&m, &g, &vec![0.0; g.num_unknowns()]).unwrap();
        assert!(zero.components.iter().flatten().all(|x| *x == 0.0));
        assert!(horizontal_gradient(&m, &g, &[1.0]).is_err());
    }

    #[test]
    fn gradient_of_linear_function_is_its_slope() {
        let m = abelian_model(2).unwrap();
        let g = boxed(2, &[0.125, 0.125]);
        let u = g.sample(|p| 3.0 * p[0] - 2.0 * p[1] + 1.0);
        let grad = horizontal_gradient(&m, &g, &u).unwrap();
        let trusted = g.trusted_mask();
        for q in (0..g.num_unknowns()).filter(|&q| trusted[q]) {
            let l = g.lattice_of(q);
            assert!((grad.at_lattice(0, l).unwrap() - 3.0).abs() < 1e-12);
            assert!((grad.at_lattice(1, l).unwrap() + 2.0).abs() < 1e-12);
        }
    }
}
