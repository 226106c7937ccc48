//! Smallest eigenpairs of assembled operators.
//!
//! The iterative solver is Chebyshev-filtered subspace iteration: a block of
//! `k + guard` vectors is repeatedly passed through a scaled Chebyshev
//! polynomial that damps the interval `[cut, λ_max]`, re-orthonormalized and
//! Rayleigh–Ritz projected. Only matrix-vector products with `A` are needed.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::AssembledOperator;
use crate::error::{Error, Result};
use crate::grid::GridDescriptor;
use crate::group_models::ModelDescriptor;
use crate::sparse::CsrMatrix;

pub const DENSE_CAP: usize = 3000;

const MAX_DEGREE: usize = 80;
const MIN_DEGREE: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumMeta {
    pub solver: String,
    pub iterations: usize,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub dim: usize,
    pub cell_volume: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    #[serde(default)]
    pub residuals: Vec<f64>,
    #[serde(default)]
    pub meta: SpectrumMeta,
    #[serde(default = "yes")]
    pub converged: bool,
    /// `T_i = ∫ V u_i²`, present when the potential is not identically zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_moments: Option<Vec<f64>>,
    /// Columns normalized so that `Σ u² · cell_volume = 1`.
    #[serde(skip)]
    pub eigenvectors: Option<Vec<Vec<f64>>>,
}

fn yes() -> bool {
    true
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvector(&self, i: usize) -> Option<&[f64]> {
        self.eigenvectors.as_ref()?.get(i).map(Vec::as_slice)
    }

    /// Index ranges of eigenvalues closer than `1e-9 · λ_max` to a neighbour.
    pub fn clusters(&self) -> Vec<Range<usize>> {
        let scale = self.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        clusters(&self.eigenvalues, 1e-9 * scale)
    }

    /// `max |G − I|` for the Gram matrix in the discrete inner product.
    pub fn gram_deviation(&self) -> Option<f64> {
        let vecs = self.eigenvectors.as_ref()?;
        let w = self.meta.cell_volume;
        let mut worst = 0.0_f64;
        for i in 0..vecs.len() {
            for j in 0..=i {
                let g: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum::<f64>() * w;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        Some(worst)
    }
}

pub fn clusters(sorted: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] - sorted[i - 1] > tol {
            if i - start > 1 {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra block vectors beyond `k`; defaults to `max(8, k/2)`.
    pub guard: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            seed: 0x5eed,
            guard: None,
        }
    }
}

/// `‖Au − λu‖ / ‖u‖`.
pub fn residual(a: &AssembledOperator, lambda: f64, u: &[f64]) -> Result<f64> {
    if u.len() != a.dim() {
        return Err(Error::LengthMismatch {
            expected: a.dim(),
            actual: u.len(),
        });
    }
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let au = a.matrix.mul_vec(u);
    let r = au
        .iter()
        .zip(u)
        .map(|(y, x)| (y - lambda * x).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(r / norm)
}

fn block_apply(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut y = DMatrix::zeros(n, x.ncols());
    y.as_mut_slice()
        .par_chunks_mut(n)
        .zip(x.as_slice().par_chunks(n))
        .for_each(|(yc, xc)| a.mul_vec_into(xc, yc));
    y
}

/// Degree-`m` scaled Chebyshev filter damping `[cut, upper]`, normalized at `low`.
fn chebyshev_filter(a: &CsrMatrix, x: DMatrix<f64>, m: usize, low: f64, cut: f64, upper: f64) -> DMatrix<f64> {
    let e = (upper - cut) / 2.0;
    let c = (upper + cut) / 2.0;
    let mut sigma = e / (low - c);
    let tau = 2.0 / sigma;
    let mut prev = x;
    let mut y = block_apply(a, &prev);
    let s = sigma / e;
    y.as_mut_slice()
        .par_iter_mut()
        .zip(prev.as_slice().par_iter())
        .for_each(|(yi, xi)| *yi = (*yi - c * xi) * s);
    for _ in 1..m {
        let sigma_new = 1.0 / (tau - sigma);
        let mut next = block_apply(a, &y);
        let s1 = 2.0 * sigma_new / e;
        let s2 = sigma * sigma_new;
        next.as_mut_slice()
            .par_iter_mut()
            .zip(y.as_slice().par_iter().zip(prev.as_slice().par_iter()))
            .for_each(|(ni, (yi, xi))| *ni = (*ni - c * yi) * s1 - s2 * xi);
        prev = y;
        y = next;
        sigma = sigma_new;
    }
    y
}

struct Ritz {
    x: DMatrix<f64>,
    theta: Vec<f64>,
    res: Vec<f64>,
}

fn rayleigh_ritz(a: &CsrMatrix, basis: DMatrix<f64>) -> Ritz {
    let q = basis.qr().q();
    let aq = block_apply(a, &q);
    let mut h = q.transpose() * &aq;
    let ht = h.transpose();
    h = (h + ht) * 0.5;
    let (theta, v) = sorted_eigen(h);
    let x = &q * &v;
    let ax = &aq * &v;
    let res = (0..x.ncols())
        .map(|j| (ax.column(j) - x.column(j) * theta[j]).norm())
        .collect();
    Ritz { x, theta, res }
}

/// Eigen-decomposition of a symmetric dense matrix, eigenvalues ascending.
pub fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

fn normalize_columns(x: &DMatrix<f64>, k: usize, cell_volume: f64) -> Vec<Vec<f64>> {
    let scale = 1.0 / cell_volume.sqrt();
    (0..k)
        .map(|j| {
            let col = x.column(j);
            let norm = col.norm();
            let mut pivot = 0;
            for (i, v) in col.iter().enumerate() {
                if v.abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| v * sign * scale / norm).collect()
        })
        .collect()
}

fn meta_for(a: &AssembledOperator, solver: &str, iterations: usize, tol: f64, seed: Option<u64>) -> SpectrumMeta {
    SpectrumMeta {
        solver: solver.to_string(),
        iterations,
        tolerance: tol,
        seed,
        dim: a.dim(),
        cell_volume: a.cell_volume,
        potential_min: a.potential_min.is_finite().then_some(a.potential_min),
        model: a.model.clone(),
        grid: a.grid.clone(),
    }
}

fn with_moments(a: &AssembledOperator, mut s: Spectrum) -> Spectrum {
    if !a.has_zero_potential() {
        s.potential_moments = crate::inequalities::potential_moments(&a.potential, &s).ok();
    }
    s
}

/// The `k` smallest eigenpairs, residuals `≤ opts.tol`.
pub fn smallest_eigenpairs(a: &AssembledOperator, k: usize, opts: &SolverOptions) -> Result<Spectrum> {
    let n = a.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidRequest(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidRequest(format!("tolerance {} must be positive", opts.tol)));
    }
    let guard = opts.guard.unwrap_or_else(|| (k / 2).max(8));
    let b = (k + guard).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = DMatrix::from_fn(n, b, |_, _| rng.gen_range(-0.5..0.5));

    let upper = {
        let g = a.matrix.gershgorin_upper();
        g + 1e-12 * g.abs().max(1.0)
    };
    let mut ritz = rayleigh_ritz(&a.matrix, start);
    let mut iterations = 0;
    let done = |r: &Ritz| r.res[..k].iter().all(|v| *v <= opts.tol);
    while !done(&ritz) && iterations < opts.max_iter {
        iterations += 1;
        let low = ritz.theta[0];
        let mut cut = ritz.theta[b - 1];
        if upper - cut <= 1e-12 * upper.abs().max(1.0) {
            if upper <= low {
                break;
            }
            cut = 0.5 * (ritz.theta[k - 1] + upper);
        }
        let e = (upper - cut) / 2.0;
        let c = (upper + cut) / 2.0;
        let t = ((ritz.theta[k - 1] - c) / e).abs().max(1.0 + 1e-12);
        let rho = t + (t * t - 1.0).sqrt();
        let degree = ((1e6_f64).ln() / rho.ln()).ceil() as usize;
        let degree = degree.clamp(MIN_DEGREE, MAX_DEGREE);
        log::debug!("iteration {iterations}: cut {cut:.6e}, degree {degree}, worst residual {:.3e}", ritz.res[..k].iter().fold(0.0_f64, |m, v| m.max(*v)));
        let filtered = chebyshev_filter(&a.matrix, ritz.x, degree, low, cut, upper);
        ritz = rayleigh_ritz(&a.matrix, filtered);
    }
    let converged = done(&ritz);
    let spectrum = Spectrum {
        eigenvalues: ritz.theta[..k].to_vec(),
        residuals: ritz.res[..k].to_vec(),
        meta: meta_for(a, "chebyshev-subspace", iterations, opts.tol, Some(opts.seed)),
        converged,
        potential_moments: None,
        eigenvectors: Some(normalize_columns(&ritz.x, k, a.cell_volume)),
    };
    let spectrum = with_moments(a, spectrum);
    if converged {
        Ok(spectrum)
    } else {
        let count = spectrum.residuals.iter().take_while(|r| **r <= opts.tol).count();
        Err(Error::NotConverged {
            iterations,
            converged: count,
            requested: k,
            partial: Box::new(spectrum),
        })
    }
}

/// All eigenpairs by dense symmetric decomposition (oracle, `N ≤ DENSE_CAP`).
pub fn dense_spectrum(a: &AssembledOperator) -> Result<Spectrum> {
    dense_spectrum_capped(a, DENSE_CAP)
}

pub fn dense_spectrum_capped(a: &AssembledOperator, cap: usize) -> Result<Spectrum> {
    let n = a.dim();
    if n > cap {
        return Err(Error::DenseCap { dim: n, cap });
    }
    let (theta, v) = sorted_eigen(a.matrix.to_dense());
    let vectors = normalize_columns(&v, n, a.cell_volume);
    let residuals = theta
        .iter()
        .zip(&vectors)
        .map(|(l, u)| residual(a, *l, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(with_moments(
        a,
        Spectrum {
            eigenvalues: theta,
            residuals,
            meta: meta_for(a, "dense", 1, 0.0, None),
            converged: true,
            potential_moments: None,
            eigenvectors: Some(vectors),
        },
    ))
}
