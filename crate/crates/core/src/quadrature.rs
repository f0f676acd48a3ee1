//! Optimization-based quadrature weights.
//!
//! For each interior center `x_i` the weights `ω_ij` over its neighborhood solve
//!
//! ```text
//! min  Σ_j ω_ij² γ_δ(x_i, x_j)   subject to   Σ_j q_α(x_j - x_i) ω_ij = ∫_{B_δ} q_α   for all α
//! ```
//!
//! where `q_α = p_α γ_δ C_α` runs over a polynomial basis times the kernel and,
//! for peridynamics, the entries of the unit bond tensor. The closed-form
//! minimizer is `ω = W⁻¹Bᵀ(BW⁻¹Bᵀ)⁻¹g` with `W = diag(2γ_δ)`; the Gram matrix
//! is factored with diagonal pivoting so redundant constraints drop out.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::pointcloud::{Neighborhood, Point2, PointCloud};

/// Pivots below this fraction of the largest pivot mark redundant constraints.
pub const PIVOT_THRESHOLD: f64 = 1e-12;
/// Acceptance bound on `|Bω - g|_∞ / (1 + |g|_∞)`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Neighbors closer than this fraction of `δ` are rejected as coincident.
pub const MIN_SEPARATION: f64 = 1e-14;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReproducingMode {
    /// `q = p γ`; the constant factor `C = 2` cancels from both sides.
    DiffusionScalar,
    /// `q = p γ (z ⊗ z)_{ab} / |z|²` for the three independent tensor entries.
    PeridynamicTensor,
}

/// Independent entries of the symmetric unit-bond tensor `z ⊗ z / |z|²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorEntry {
    XX,
    XY,
    YY,
}

impl TensorEntry {
    pub const ALL: [TensorEntry; 3] = [TensorEntry::XX, TensorEntry::XY, TensorEntry::YY];

    /// Exponents `(c, e)` of `z1^c z2^e` in the numerator over `|z|²`.
    pub fn exponents(self) -> (u32, u32) {
        match self {
            TensorEntry::XX => (2, 0),
            TensorEntry::XY => (1, 1),
            TensorEntry::YY => (0, 2),
        }
    }

    fn eval_unit(self, ux: f64, uy: f64) -> f64 {
        match self {
            TensorEntry::XX => ux * ux,
            TensorEntry::XY => ux * uy,
            TensorEntry::YY => uy * uy,
        }
    }
}

/// One constraint function: a monomial `(z1/δ)^px (z2/δ)^py`, optionally times
/// a tensor entry. The kernel factor is implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisFunction {
    pub px: u32,
    pub py: u32,
    pub tensor: Option<TensorEntry>,
}

impl BasisFunction {
    pub fn degree(&self) -> u32 {
        self.px + self.py
    }

    /// Value at the scaled offset `zs = z/δ` with unit direction `(ux, uy)`,
    /// excluding the kernel factor.
    fn eval_scaled(&self, zs: Point2, ux: f64, uy: f64) -> f64 {
        let p = zs.x.powi(self.px as i32) * zs.y.powi(self.py as i32);
        match self.tensor {
            Some(t) => p * t.eval_unit(ux, uy),
            None => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproducingSpace {
    pub order: u32,
    pub s: f64,
    pub mode: ReproducingMode,
    pub basis: Vec<BasisFunction>,
}

impl ReproducingSpace {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Dimension of the span of the basis as functions on the punctured disk.
    ///
    /// In tensor mode `p·(e_xx + e_yy) = p` and `z2² e_xx = z1 z2 e_xy = z1² e_yy`,
    /// so the span is `{Q / |z|² : Q ∈ P_{n+2}, Q has no terms of degree < 2}`.
    pub fn functional_rank(&self) -> usize {
        let n = self.order as usize;
        match self.mode {
            ReproducingMode::DiffusionScalar => (n + 1) * (n + 2) / 2,
            ReproducingMode::PeridynamicTensor => (n + 3) * (n + 4) / 2 - 3,
        }
    }

    /// Values of every basis function at offset `z`, without the kernel factor.
    pub fn eval(&self, z: Point2, delta: f64) -> Vec<f64> {
        let r = z.norm();
        let zs = z * (1.0 / delta);
        let (ux, uy) = (z.x / r, z.y / r);
        self.basis.iter().map(|b| b.eval_scaled(zs, ux, uy)).collect()
    }
}

/// Graded-lexicographic monomial exponents up to total degree `n`:
/// `1, z1, z2, z1², z1 z2, z2², ...`.
pub fn monomial_exponents(n: u32) -> Vec<(u32, u32)> {
    (0..=n)
        .flat_map(|k| (0..=k).map(move |j| (k - j, j)))
        .collect()
}

pub fn build_basis(n: u32, spec: &KernelSpec, mode: ReproducingMode) -> Result<ReproducingSpace> {
    if spec.d != 2 {
        return Err(Error::InadmissibleBasis(format!(
            "only two-dimensional kernels are supported, got d={}",
            spec.d
        )));
    }
    let bound = spec.d as f64 + spec.s - 3.0;
    if !(n as f64 > bound) {
        return Err(Error::InadmissibleBasis(format!(
            "order n={n} must exceed d + s - 3 = {bound}"
        )));
    }
    // lowest radial power is r^{1-s} from the constant monomial
    if spec.s >= 2.0 {
        return Err(Error::InadmissibleBasis(format!(
            "constant constraint has a divergent ball integral for s={}",
            spec.s
        )));
    }
    let monomials = monomial_exponents(n);
    let basis = match mode {
        ReproducingMode::DiffusionScalar => monomials
            .into_iter()
            .map(|(px, py)| BasisFunction { px, py, tensor: None })
            .collect(),
        ReproducingMode::PeridynamicTensor => monomials
            .into_iter()
            .flat_map(|(px, py)| {
                TensorEntry::ALL.into_iter().map(move |t| BasisFunction {
                    px,
                    py,
                    tensor: Some(t),
                })
            })
            .collect(),
    };
    Ok(ReproducingSpace {
        order: n,
        s: spec.s,
        mode,
        basis,
    })
}

/// `∫_0^{2π} cos^a φ sin^b φ dφ`.
pub fn angular_moment(a: u32, b: u32) -> f64 {
    if a % 2 == 1 || b % 2 == 1 {
        return 0.0;
    }
    // 2π (a-1)!! (b-1)!! / (a+b)!!
    let mut value = 2.0 * PI;
    let mut num = 1.0;
    let mut k = a as i64 - 1;
    while k > 1 {
        num *= k as f64;
        k -= 2;
    }
    k = b as i64 - 1;
    while k > 1 {
        num *= k as f64;
        k -= 2;
    }
    let mut den = 1.0;
    k = (a + b) as i64;
    while k > 1 {
        den *= k as f64;
        k -= 2;
    }
    value *= num / den;
    value
}

/// Exact integrals `g_α = ∫_{B_δ} q_α` over the horizon ball.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub g: Vec<f64>,
}

/// Closed-form polar integration of every basis function times the kernel.
pub fn moment_integrals(space: &ReproducingSpace, spec: &KernelSpec) -> MomentVector {
    // ∫ (z/δ)^{(a,b)} e(z) γ dz = D0 δ^{-2} Θ / (a + b + 2 - s)
    let scale = spec.d0 / (spec.delta * spec.delta);
    let g = space
        .basis
        .iter()
        .map(|b| {
            let (c, e) = b.tensor.map_or((0, 0), TensorEntry::exponents);
            let theta = angular_moment(b.px + c, b.py + e);
            if theta == 0.0 {
                0.0
            } else {
                scale * theta / (b.degree() as f64 + 2.0 - spec.s)
            }
        })
        .collect();
    MomentVector { g }
}

/// Quadrature weights for one center.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFamily {
    pub center_index: usize,
    /// One weight per neighbor, in neighbor-list order.
    pub weights: Vec<f64>,
    /// `Σ_j q_α(z_j) ω_j - g_α` per constraint.
    pub residuals: Vec<f64>,
    /// Multipliers `μ` with `ω = W⁻¹Bᵀμ`.
    pub multipliers: Vec<f64>,
    /// Number of constraints retained by the pivoted factorization.
    pub rank: usize,
}

impl WeightFamily {
    /// `|Bω - g|_∞ / (1 + |g|_∞)`.
    pub fn relative_residual(&self, moments: &MomentVector) -> f64 {
        let gmax = moments.g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rmax = self.residuals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rmax / (1.0 + gmax)
    }
}

/// Symmetric positive semidefinite factorization `P G Pᵀ ≈ L Lᵀ` truncated at
/// the first pivot below `PIVOT_THRESHOLD` times the largest one.
struct PivotedCholesky {
    n: usize,
    perm: Vec<usize>,
    /// Column-major lower factor, `n × rank` used.
    l: Vec<f64>,
    rank: usize,
}

impl PivotedCholesky {
    fn factor(gram: &[f64], n: usize) -> Self {
        let mut a = gram.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = vec![0.0; n * n];
        let max_pivot = (0..n).map(|i| a[i * n + i]).fold(0.0f64, f64::max);
        let mut rank = 0;
        for k in 0..n {
            // pick the largest remaining diagonal
            let (piv, &val) = (k..n)
                .map(|i| (i, &a[perm[i] * n + perm[i]]))
                .max_by(|x, y| x.1.total_cmp(y.1))
                .unwrap();
            if !(val > PIVOT_THRESHOLD * max_pivot) {
                break;
            }
            perm.swap(k, piv);
            for c in 0..k {
                l.swap(c * n + k, c * n + piv);
            }
            let pk = perm[k];
            let root = val.sqrt();
            l[k * n + k] = root;
            for i in k + 1..n {
                let pi = perm[i];
                l[k * n + i] = a[pi * n + pk] / root;
            }
            for i in k + 1..n {
                let pi = perm[i];
                let lik = l[k * n + i];
                for j in k + 1..=i {
                    let pj = perm[j];
                    let v = a[pi * n + pj] - lik * l[k * n + j];
                    a[pi * n + pj] = v;
                    a[pj * n + pi] = v;
                }
            }
            rank = k + 1;
        }
        Self { n, perm, l, rank }
    }

    /// Solve on the retained pivots; multipliers of dropped pivots are zero.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let r = self.rank;
        let mut y: Vec<f64> = (0..r).map(|k| rhs[self.perm[k]]).collect();
        for k in 0..r {
            y[k] /= self.l[k * n + k];
            let yk = y[k];
            for i in k + 1..r {
                y[i] -= self.l[k * n + i] * yk;
            }
        }
        for k in (0..r).rev() {
            let mut v = y[k];
            for i in k + 1..r {
                v -= self.l[k * n + i] * y[i];
            }
            y[k] = v / self.l[k * n + k];
        }
        let mut out = vec![0.0; n];
        for k in 0..r {
            out[self.perm[k]] = y[k];
        }
        out
    }
}

/// Weights for one interior center.
pub fn solve_weights(
    center: usize,
    nbhd: &Neighborhood,
    cloud: &PointCloud,
    space: &ReproducingSpace,
    spec: &KernelSpec,
) -> Result<WeightFamily> {
    let moments = moment_integrals(space, spec);
    solve_with_moments(center, nbhd, cloud, space, spec, &moments)
}

fn solve_with_moments(
    center: usize,
    nbhd: &Neighborhood,
    cloud: &PointCloud,
    space: &ReproducingSpace,
    spec: &KernelSpec,
    moments: &MomentVector,
) -> Result<WeightFamily> {
    let m = space.len();
    let big_m = nbhd.len();
    let needed = space.functional_rank();
    if big_m < needed {
        return Err(Error::Underdetermined {
            center,
            neighbors: big_m,
            required: needed,
        });
    }
    let xi = cloud.points[center];
    let delta = spec.delta;

    // Work with γ̂ = γ / prefactor = r^{-s}; rescaling the kernel leaves the minimizer unchanged.
    let prefactor = spec.prefactor();
    let mut basis_vals = vec![0.0; m * big_m]; // p_α e_α at each neighbor, row-major α
    let mut gamma_hat = vec![0.0; big_m];
    for (j, &nj) in nbhd.neighbor_indices.iter().enumerate() {
        let z = cloud.points[nj] - xi;
        let r = z.norm();
        if !(r >= MIN_SEPARATION * delta) {
            return Err(Error::DegenerateNeighbor {
                center,
                neighbor: nj,
                distance: r,
            });
        }
        gamma_hat[j] = if spec.s == 0.0 { 1.0 } else { r.powf(-spec.s) };
        for (a, v) in space.eval(z, delta).into_iter().enumerate() {
            basis_vals[a * big_m + j] = v;
        }
    }

    // Ã = B̂ W^{-1/2} with unit rows; Ã_αj = p_α e_α sqrt(γ̂_j / 2) / n_α
    let sqrt_half_gamma: Vec<f64> = gamma_hat.iter().map(|g| (0.5 * g).sqrt()).collect();
    let mut a_tilde = vec![0.0; m * big_m];
    let mut row_norm = vec![0.0; m];
    for a in 0..m {
        let row = &mut a_tilde[a * big_m..(a + 1) * big_m];
        for j in 0..big_m {
            row[j] = basis_vals[a * big_m + j] * sqrt_half_gamma[j];
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row_norm[a] = if norm > 0.0 { norm } else { 1.0 };
        let inv = 1.0 / row_norm[a];
        row.iter_mut().for_each(|v| *v *= inv);
    }
    let g_scaled: Vec<f64> = (0..m).map(|a| moments.g[a] / prefactor / row_norm[a]).collect();

    let mut gram = vec![0.0; m * m];
    for a in 0..m {
        let ra = &a_tilde[a * big_m..(a + 1) * big_m];
        for b in 0..=a {
            let rb = &a_tilde[b * big_m..(b + 1) * big_m];
            let v: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            gram[a * m + b] = v;
            gram[b * m + a] = v;
        }
    }
    let chol = PivotedCholesky::factor(&gram, m);
    if chol.rank == 0 {
        return Err(Error::SingularSystem(format!("point {center}: constraint Gram matrix is zero")));
    }

    let apply_t = |lambda: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; big_m];
        for a in 0..m {
            if lambda[a] != 0.0 {
                let row = &a_tilde[a * big_m..(a + 1) * big_m];
                for j in 0..big_m {
                    v[j] += lambda[a] * row[j];
                }
            }
        }
        v
    };
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|a| {
                a_tilde[a * big_m..(a + 1) * big_m]
                    .iter()
                    .zip(v)
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect()
    };

    let mut lambda = chol.solve(&g_scaled);
    let mut v = apply_t(&lambda);
    for _ in 0..REFINEMENT_STEPS {
        let av = apply(&v);
        let r: Vec<f64> = g_scaled.iter().zip(&av).map(|(g, x)| g - x).collect();
        let rmax = r.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if rmax == 0.0 {
            break;
        }
        let dl = chol.solve(&r);
        lambda.iter_mut().zip(&dl).for_each(|(l, d)| *l += d);
        v = apply_t(&lambda);
    }

    // ω_j = v_j / sqrt(2 γ̂_j) = Σ_α μ_α p_α e_α / 2 with μ_α = λ_α / n_α.
    let multipliers_hat: Vec<f64> = lambda.iter().zip(&row_norm).map(|(l, n)| l / n).collect();
    let weights: Vec<f64> = (0..big_m)
        .map(|j| {
            let mut w = 0.0;
            for a in 0..m {
                w += multipliers_hat[a] * basis_vals[a * big_m + j];
            }
            0.5 * w
        })
        .collect();

    // Residuals with the true kernel.
    let residuals: Vec<f64> = (0..m)
        .map(|a| {
            let mut acc = 0.0;
            for j in 0..big_m {
                acc += basis_vals[a * big_m + j] * gamma_hat[j] * weights[j];
            }
            acc * prefactor - moments.g[a]
        })
        .collect();
    // μ for the unscaled problem: W⁻¹Bᵀμ with W = 2γ and B = p e γ gives the same ω.
    let multipliers = multipliers_hat;

    let family = WeightFamily {
        center_index: center,
        weights,
        residuals,
        multipliers,
        rank: chol.rank,
    };
    let rel = family.relative_residual(moments);
    if !(rel <= RESIDUAL_TOLERANCE) {
        return Err(Error::ConstraintResidual {
            center,
            residual: rel,
        });
    }
    Ok(family)
}

/// Weights for every neighborhood (one per interior point), computed in parallel.
pub fn generate_all_weights(
    cloud: &PointCloud,
    nbhds: &[Neighborhood],
    space: &ReproducingSpace,
    spec: &KernelSpec,
) -> Result<Vec<WeightFamily>> {
    let moments = moment_integrals(space, spec);
    nbhds
        .par_iter()
        .map(|nb| solve_with_moments(nb.center_index, nb, cloud, space, spec, &moments))
        .collect()
}

/// `B` (one row per basis function, one column per neighbor) and `W` diagonal,
/// both with the true kernel. Exposed for oracles and diagnostics.
pub fn constraint_system(
    center: usize,
    nbhd: &Neighborhood,
    cloud: &PointCloud,
    space: &ReproducingSpace,
    spec: &KernelSpec,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let xi = cloud.points[center];
    let mut b = vec![vec![0.0; nbhd.len()]; space.len()];
    let mut w = vec![0.0; nbhd.len()];
    for (j, &nj) in nbhd.neighbor_indices.iter().enumerate() {
        let z = cloud.points[nj] - xi;
        let gamma = spec.eval_radius(z.norm())?;
        w[j] = 2.0 * gamma;
        for (a, v) in space.eval(z, spec.delta).into_iter().enumerate() {
            b[a][j] = v * gamma;
        }
    }
    Ok((b, w))
}
