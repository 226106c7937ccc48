//! Dirichlet lattices over coordinate boxes.
//!
//! The lattice has nodes `lower_a + i·h_a`, `i = 0..=M_a`, with `M_a·h_a` equal
//! to the box extent. A node is an unknown iff it lies strictly inside the box
//! and satisfies the optional indicator; every other lattice node carries the
//! homogeneous Dirichlet value zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_models::GroupModel;

const NONE: usize = usize::MAX;

/// Subdomain selector for the JSON job file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Indicator {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Indicator {
    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Self::Box { lower, upper } => p
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (a, b))| *a < *x && *x < *b),
            Self::Ball { center, radius } => {
                let r2: f64 = p.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                r2 < radius * radius
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Ball { center, .. } => center.len(),
        }
    }
}

/// Mesh widths: one per coordinate, or a single horizontal width `h` with
/// vertical coordinates defaulting to `h/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spacing {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDescriptor {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub h: Spacing,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator: Option<Indicator>,
}

impl GridDescriptor {
    pub fn spacings_for(&self, model: &GroupModel) -> Result<Vec<f64>> {
        let dim = model.ambient_dim();
        match &self.h {
            Spacing::PerAxis(v) if v.len() == dim => Ok(v.clone()),
            Spacing::PerAxis(v) => Err(Error::InvalidGrid(format!(
                "h has {} entries, model has {dim} coordinates",
                v.len()
            ))),
            Spacing::Uniform(h) => Ok((0..dim)
                .map(|a| {
                    if model.vertical_coords().contains(&a) {
                        0.5 * h
                    } else {
                        *h
                    }
                })
                .collect()),
        }
    }

    /// Copy with every mesh width divided by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        let h = match &self.h {
            Spacing::Uniform(h) => Spacing::Uniform(h / factor),
            Spacing::PerAxis(v) => Spacing::PerAxis(v.iter().map(|h| h / factor).collect()),
        };
        Self {
            bounds: self.bounds.clone(),
            h,
            indicator: self.indicator.clone(),
        }
    }

    pub fn build(&self, model: &GroupModel) -> Result<GridDomain> {
        if self.bounds.len() != model.ambient_dim() {
            return Err(Error::InvalidGrid(format!(
                "box has {} axes, model has {} coordinates",
                self.bounds.len(),
                model.ambient_dim()
            )));
        }
        let spacings = self.spacings_for(model)?;
        let bounds: Vec<(f64, f64)> = self.bounds.iter().map(|[a, b]| (*a, *b)).collect();
        let mut grid = match &self.indicator {
            Some(ind) => {
                if ind.dim() != bounds.len() {
                    return Err(Error::InvalidGrid("indicator dimension mismatch".into()));
                }
                build_grid(&bounds, &spacings, Some(&|p: &[f64]| ind.contains(p)))?
            }
            None => build_grid(&bounds, &spacings, None)?,
        };
        grid.descriptor = Some(self.clone());
        Ok(grid)
    }
}

#[derive(Debug, Clone)]
pub struct GridDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    spacings: Vec<f64>,
    /// `M_a`: lattice indices run over `0..=M_a`.
    steps: Vec<usize>,
    strides: Vec<usize>,
    interior: Vec<bool>,
    lattice_to_unknown: Vec<usize>,
    unknown_to_lattice: Vec<usize>,
    cell_volume: f64,
    descriptor: Option<GridDescriptor>,
}

/// Build a Dirichlet lattice on `bounds` with the given spacings. Each extent
/// must be an integer multiple (≥ 2) of its spacing.
pub fn build_grid(
    bounds: &[(f64, f64)],
    spacings: &[f64],
    indicator: Option<&dyn Fn(&[f64]) -> bool>,
) -> Result<GridDomain> {
    let dim = bounds.len();
    if dim == 0 || spacings.len() != dim {
        return Err(Error::InvalidGrid(format!(
            "{dim} box axes but {} spacings",
            spacings.len()
        )));
    }
    let mut steps = Vec::with_capacity(dim);
    for (a, (&(lo, hi), &h)) in bounds.iter().zip(spacings).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("axis {a}: degenerate box [{lo}, {hi}]")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("axis {a}: spacing must be positive")));
        }
        if h >= hi - lo {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: spacing {h} is not smaller than the extent {}",
                hi - lo
            )));
        }
        let ratio = (hi - lo) / h;
        let m = ratio.round();
        if (ratio - m).abs() > 1e-9 * ratio {
            return Err(Error::InvalidGrid(format!(
                "axis {a}: extent {} is not a multiple of spacing {h}",
                hi - lo
            )));
        }
        steps.push(m as usize);
    }

    let mut strides = vec![1usize; dim];
    for a in (0..dim.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * (steps[a + 1] + 1);
    }
    let lattice_len = strides[0] * (steps[0] + 1);

    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    let mut interior = vec![false; lattice_len];
    let mut lattice_to_unknown = vec![NONE; lattice_len];
    let mut unknown_to_lattice = Vec::new();
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    for l in 0..lattice_len {
        let mut rem = l;
        for a in 0..dim {
            idx[a] = rem / strides[a];
            rem %= strides[a];
        }
        let strictly_inside = idx.iter().zip(&steps).all(|(&i, &m)| i > 0 && i < m);
        if !strictly_inside {
            continue;
        }
        for a in 0..dim {
            point[a] = lower[a] + idx[a] as f64 * spacings[a];
        }
        if indicator.map_or(true, |f| f(&point)) {
            interior[l] = true;
            lattice_to_unknown[l] = unknown_to_lattice.len();
            unknown_to_lattice.push(l);
        }
    }
    if unknown_to_lattice.is_empty() {
        return Err(Error::InvalidGrid("domain has no interior nodes".into()));
    }

    Ok(GridDomain {
        lower,
        upper,
        spacings: spacings.to_vec(),
        steps,
        strides,
        interior,
        lattice_to_unknown,
        unknown_to_lattice,
        cell_volume: spacings.iter().product(),
        descriptor: None,
    })
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.spacings.len()
    }

    /// Number of unknowns `N`.
    pub fn num_unknowns(&self) -> usize {
        self.unknown_to_lattice.len()
    }

    pub fn lattice_len(&self) -> usize {
        self.interior.len()
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn descriptor(&self) -> Option<&GridDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn is_interior(&self, lattice: usize) -> bool {
        self.interior[lattice]
    }

    pub fn unknown_at(&self, lattice: usize) -> Option<usize> {
        match self.lattice_to_unknown[lattice] {
            NONE => None,
            q => Some(q),
        }
    }

    pub fn lattice_of(&self, unknown: usize) -> usize {
        self.unknown_to_lattice[unknown]
    }

    /// Lattice index along `axis`.
    pub fn axis_index(&self, lattice: usize, axis: usize) -> usize {
        (lattice / self.strides[axis]) % (self.steps[axis] + 1)
    }

    /// Neighbour one step along `axis` (`forward` or backward), if it is a
    /// lattice node.
    pub fn step(&self, lattice: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = self.axis_index(lattice, axis);
        if forward {
            (i < self.steps[axis]).then(|| lattice + self.strides[axis])
        } else {
            (i > 0).then(|| lattice - self.strides[axis])
        }
    }

    pub fn lattice_point(&self, lattice: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.lower[a] + self.axis_index(lattice, a) as f64 * self.spacings[a];
        }
    }

    pub fn unknown_point(&self, unknown: usize, out: &mut [f64]) {
        self.lattice_point(self.unknown_to_lattice[unknown], out)
    }

    /// Sample `f` at every unknown.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        (0..self.num_unknowns())
            .map(|q| {
                self.unknown_point(q, &mut p);
                f(&p)
            })
            .collect()
    }

    /// Unknowns whose whole `3^d` lattice neighbourhood consists of unknowns.
    /// Difference stencils of sampled (non-vanishing) data are exact there.
    pub fn trusted_mask(&self) -> Vec<bool> {
        let dim = self.dim();
        let total = 3usize.pow(dim as u32);
        (0..self.num_unknowns())
            .map(|q| {
                let l = self.unknown_to_lattice[q];
                (0..total).all(|code| {
                    let mut c = code;
                    let mut node = l;
                    for a in 0..dim {
                        let off = c % 3;
                        c /= 3;
                        let moved = match off {
                            0 => Some(node),
                            1 => self.step(node, a, true),
                            _ => self.step(node, a, false),
                        };
                        match moved {
                            Some(m) => node = m,
                            None => return false,
                        }
                    }
                    self.interior[node]
                })
            })
            .collect()
    }
}

/// Riemann sum `Σ values · cell_volume`.
pub fn integrate(grid: &GridDomain, values: &[f64]) -> Result<f64> {
    if values.len() != grid.num_unknowns() {
        return Err(Error::LengthMismatch {
            expected: grid.num_unknowns(),
            actual: values.len(),
        });
    }
    Ok(values.iter().sum::<f64>() * grid.cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_models::heisenberg_model;

    #[test]
    fn counts_interior_nodes() {
        let g = build_grid(&[(0.0, 1.0); 2], &[0.5, 0.5], None).unwrap();
        assert_eq!(g.num_unknowns(), 1);
        let g = build_grid(&[(0.0, 1.0); 3], &[0.25; 3], None).unwrap();
        assert_eq!(g.num_unknowns(), 27);
        assert_eq!(g.cell_volume(), 1.0 / 64.0);
    }

    #[test]
    fn rejects_bad_grids() {
        let zero_ball = Indicator::Ball {
            center: vec![0.5, 0.5],
            radius: 0.0,
        };
        let f = |p: &[f64]| zero_ball.contains(p);
        assert!(build_grid(&[(0.0, 1.0); 2], &[0.25; 2], Some(&f)).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[1.0], None).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[2.0], None).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[0.3], None).is_err());
        assert!(build_grid(&[(1.0, 1.0)], &[0.1], None).is_err());
        assert!(build_grid(&[(0.0, 1.0)], &[-0.1], None).is_err());
    }

    #[test]
    fn index_map_is_bijective_and_points_inside() {
        let ball = Indicator::Ball {
            center: vec![0.5, 0.5, 0.5],
            radius: 0.4,
        };
        let f = |p: &[f64]| ball.contains(p);
        let g = build_grid(&[(0.0, 1.0); 3], &[0.1, 0.1, 0.05], Some(&f)).unwrap();
        let mut p = [0.0; 3];
        for q in 0..g.num_unknowns() {
            assert_eq!(g.unknown_at(g.lattice_of(q)), Some(q));
            g.unknown_point(q, &mut p);
            assert!(p.iter().all(|x| *x > 0.0 && *x < 1.0));
            assert!(ball.contains(&p));
        }
        let count = (0..g.lattice_len()).filter(|&l| g.is_interior(l)).count();
        assert_eq!(count, g.num_unknowns());
    }

    #[test]
    fn integrate_sums_cells() {
        let g = build_grid(&[(0.0, 1.0); 2], &[0.25; 2], None).unwrap();
        let ones = vec![1.0; g.num_unknowns()];
        assert_eq!(integrate(&g, &ones).unwrap(), 9.0 / 16.0);
        assert_eq!(integrate(&g, &vec![0.0; 9]).unwrap(), 0.0);
        assert!(integrate(&g, &[1.0]).is_err());
    }

    #[test]
    fn trusted_nodes_stay_one_stencil_inside() {
        let g = build_grid(&[(0.0, 1.0); 2], &[0.125; 2], None).unwrap();
        let t = g.trusted_mask();
        assert_eq!(t.iter().filter(|b| **b).count(), 5 * 5);
    }

    #[test]
    fn descriptor_defaults_vertical_spacing() {
        let m = heisenberg_model(1).unwrap();
        let d: GridDescriptor =
            serde_json::from_str(r#"{"box": [[0,1],[0,1],[0,1]], "h": 0.25}"#).unwrap();
        assert_eq!(d.spacings_for(&m).unwrap(), vec![0.25, 0.25, 0.125]);
        let g = d.build(&m).unwrap();
        assert_eq!(g.num_unknowns(), 3 * 3 * 7);
        assert_eq!(d.refined(2.0).spacings_for(&m).unwrap(), vec![0.125, 0.125, 0.0625]);

        let d: GridDescriptor = serde_json::from_str(
            r#"{"box": [[-1,1],[-1,1],[-1,1]], "h": [0.25,0.25,0.25],
                "indicator": {"type": "ball", "center": [0,0,0], "radius": 0.8}}"#,
        )
        .unwrap();
        let g = d.build(&m).unwrap();
        assert!(g.num_unknowns() < 7 * 7 * 7);
    }
}
