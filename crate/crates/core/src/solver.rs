//! Constrained linear systems, static solves and backward-Euler stepping.
//!
//! Layer points keep identity rows carrying their prescribed value; interior
//! rows carry `m u_i − (L u)_i` with `m` the inertia scaling (0 when static).

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::operators::{NonlocalOperator, OperatorKind};
use crate::fracture::BondStateField;
use crate::pointcloud::{Point2, PointCloud, Region};

/// Relative residual gate applied to every solve.
pub const SOLVE_RESIDUAL_GATE: f64 = 1e-8;

const LU_REFINEMENT_STEPS: usize = 3;

/// Compressed sparse row matrix used for residuals and the iterative backend.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut col = Vec::with_capacity(entries.len());
        let mut val: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, col, val }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.val[k] * x[self.col[k]]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.col[k] == r)
                    .map_or(0.0, |k| self.val[k])
            })
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[r][self.col[k]] += self.val[k];
            }
        }
        m
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trip: Vec<Triplet<usize, usize, f64>> = (0..self.n)
            .flat_map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, k)))
            .map(|(r, k)| Triplet::new(r, self.col[k], self.val[k]))
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| Error::SingularSystem(format!("sparse matrix creation failed: {e:?}")))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Linear solver backend.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum LinearSolverKind {
    /// Sparse LU with partial pivoting, reused until the matrix changes.
    #[default]
    DirectLu,
    /// Jacobi-preconditioned BiCGSTAB.
    BiCgStab { tolerance: f64, max_iterations: usize },
}


enum Factor {
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Jacobi(Vec<f64>),
}

fn bicgstab(
    a: &CsrMatrix,
    inv_diag: &[f64],
    b: &[f64],
    x0: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    let n = a.n;
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let precond = |v: &[f64]| v.iter().zip(inv_diag).map(|(a, d)| a * d).collect::<Vec<f64>>();
    let mut x = x0;
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut r_hat = r.clone();
    let bound = tolerance * (1.0 + inf_norm(b));
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut restarts = 0;
    for it in 0..max_iterations {
        if inf_norm(&r) <= bound {
            return Ok(x);
        }
        let mut rho_new = dot(&r_hat, &r);
        if rho_new.abs() <= 1e-30 * dot(&r, &r) || omega == 0.0 {
            // Shadow residual lost; restart from the current residual.
            restarts += 1;
            if restarts > 20 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: inf_norm(&r),
                });
            }
            r_hat = r.clone();
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            rho_new = dot(&r_hat, &r);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let y = precond(&p);
        v = a.matvec(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if inf_norm(&s) <= bound {
            for k in 0..n {
                x[k] += alpha * y[k];
            }
            return Ok(x);
        }
        let z = precond(&s);
        let t = a.matvec(&z);
        omega = dot(&t, &s) / dot(&t, &t);
        for k in 0..n {
            x[k] += alpha * y[k] + omega * z[k];
            r[k] = s[k] - omega * t[k];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iterations,
        residual: inf_norm(&r),
    })
}

/// `(m I − L) u = f` on interior rows, `u = u_D` on layer rows.
pub struct ConstrainedSystem {
    operator: NonlocalOperator,
    mass_scaling: f64,
    constrained: Vec<bool>,
    backend: LinearSolverKind,
    matrix: Option<CsrMatrix>,
    factor: Option<Factor>,
    factorizations: usize,
}

impl std::fmt::Debug for ConstrainedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedSystem")
            .field("kind", &self.operator.kind)
            .field("mass_scaling", &self.mass_scaling)
            .field("backend", &self.backend)
            .field("factorizations", &self.factorizations)
            .finish()
    }
}

impl ConstrainedSystem {
    /// Every layer point of `cloud` becomes a constrained point; every interior
    /// point must own an operator row.
    pub fn new(operator: NonlocalOperator, cloud: &PointCloud, mass_scaling: f64) -> Result<Self> {
        if operator.n_points() != cloud.len() {
            return Err(Error::ShapeMismatch {
                expected: cloud.len(),
                actual: operator.n_points(),
            });
        }
        if !(mass_scaling >= 0.0 && mass_scaling.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass scaling must be finite and >= 0, got {mass_scaling}")));
        }
        let constrained: Vec<bool> = cloud.region.iter().map(|r| *r == Region::DirichletLayer).collect();
        if let Some(i) = (0..cloud.len()).find(|&i| !constrained[i] && operator.row_of(i).is_none()) {
            return Err(Error::MissingWeights(i));
        }
        Ok(Self {
            operator,
            mass_scaling,
            constrained,
            backend: LinearSolverKind::default(),
            matrix: None,
            factor: None,
            factorizations: 0,
        })
    }

    pub fn with_backend(mut self, backend: LinearSolverKind) -> Self {
        self.backend = backend;
        self.factor = None;
        self
    }

    pub fn operator(&self) -> &NonlocalOperator {
        &self.operator
    }

    pub fn mass_scaling(&self) -> f64 {
        self.mass_scaling
    }

    pub fn is_constrained(&self, point: usize) -> bool {
        self.constrained[point]
    }

    /// Number of matrix factorizations (or preconditioner setups) performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn n_dofs(&self) -> usize {
        self.operator.n_dofs()
    }

    /// Update bond states; the cached factorization is dropped only if a state changed.
    pub fn set_bond_states(&mut self, theta: &BondStateField) -> Result<()> {
        let before = self.operator.active_bonds();
        self.operator.set_bond_states(theta)?;
        if self.operator.active_bonds() != before {
            self.matrix = None;
            self.factor = None;
        }
        Ok(())
    }

    /// The full constrained matrix.
    pub fn matrix(&mut self) -> &CsrMatrix {
        if self.matrix.is_none() {
            let comp = self.operator.kind.components();
            let n = self.n_dofs();
            let mut entries: Vec<(usize, usize, f64)> =
                self.operator.triplets().into_iter().map(|(r, c, v)| (r, c, -v)).collect();
            for (p, &fixed) in self.constrained.iter().enumerate() {
                for c in 0..comp {
                    let d = comp * p + c;
                    let diag = if fixed { 1.0 } else { self.mass_scaling };
                    if diag != 0.0 || fixed {
                        entries.push((d, d, diag));
                    }
                }
            }
            self.matrix = Some(CsrMatrix::from_triplets(n, entries));
        }
        self.matrix.as_ref().unwrap()
    }

    fn ensure_factor(&mut self) -> Result<()> {
        if self.factor.is_some() {
            return Ok(());
        }
        let backend = self.backend;
        let a = self.matrix();
        let factor = match backend {
            LinearSolverKind::DirectLu => {
                let lu = a
                    .to_faer()?
                    .sp_lu()
                    .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
                Factor::Lu(lu)
            }
            LinearSolverKind::BiCgStab { .. } => {
                let diag = a.diagonal();
                if let Some(k) = diag.iter().position(|d| *d == 0.0) {
                    return Err(Error::SingularSystem(format!("zero diagonal at dof {k}")));
                }
                Factor::Jacobi(diag.iter().map(|d| 1.0 / d).collect())
            }
        };
        self.factor = Some(factor);
        self.factorizations += 1;
        Ok(())
    }

    /// Solve with interleaved dof vectors. `rhs` is read on interior dofs,
    /// `boundary` on constrained dofs; `guess` seeds the iterative backend.
    pub fn solve_flat(&mut self, rhs: &[f64], boundary: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.n_dofs();
        for v in [rhs, boundary] {
            if v.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
        }
        let comp = self.operator.kind.components();
        let b: Vec<f64> = (0..n)
            .map(|d| if self.constrained[d / comp] { boundary[d] } else { rhs[d] })
            .collect();
        self.ensure_factor()?;
        let mut x = match (&self.factor, self.backend) {
            (Some(Factor::Lu(lu)), _) => {
                let mut col = faer::Col::<f64>::from_fn(n, |k| b[k]);
                lu.solve_in_place(col.as_mat_mut());
                let mut x: Vec<f64> = (0..n).map(|k| col[k]).collect();
                // Iterative refinement with the layer values pinned. Roundoff on
                // layer dofs is amplified by couplings of size ~δ⁻² in the interior rows.
                let target = 0.01 * SOLVE_RESIDUAL_GATE * (1.0 + inf_norm(&b));
                let a = self.matrix.as_ref().expect("assembled before factoring");
                for _ in 0..LU_REFINEMENT_STEPS {
                    for d in 0..n {
                        if self.constrained[d / comp] {
                            x[d] = boundary[d];
                        }
                    }
                    let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(a, b)| b - a).collect();
                    if inf_norm(&r) <= target {
                        break;
                    }
                    let mut col = faer::Col::<f64>::from_fn(n, |k| r[k]);
                    lu.solve_in_place(col.as_mat_mut());
                    x.iter_mut().enumerate().for_each(|(k, v)| *v += col[k]);
                }
                x
            }
            (Some(Factor::Jacobi(inv)), LinearSolverKind::BiCgStab { tolerance, max_iterations }) => {
                let mut x0 = guess.map_or_else(|| b.clone(), |g| g.to_vec());
                for d in 0..n {
                    if self.constrained[d / comp] {
                        x0[d] = boundary[d];
                    }
                }
                let inv = inv.clone();
                bicgstab(self.matrix(), &inv, &b, x0, tolerance, max_iterations)?
            }
            _ => unreachable!("factor matches backend"),
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("solution has non-finite entries".into()));
        }
        for d in 0..n {
            if self.constrained[d / comp] {
                x[d] = boundary[d];
            }
        }
        let ax = self.matrix().matvec(&x);
        let residual = inf_norm(&ax.iter().zip(&b).map(|(a, b)| a - b).collect::<Vec<_>>());
        let bound = SOLVE_RESIDUAL_GATE * (1.0 + inf_norm(&b));
        if !(residual <= bound) {
            return Err(Error::SolveResidual { residual, bound });
        }
        Ok(x)
    }
}

/// Static solve `−L u = f`, `u = u_D` on the layer. Fields are interleaved dofs.
pub fn solve_static(system: &mut ConstrainedSystem, f: &[f64], boundary: &[f64]) -> Result<Vec<f64>> {
    if system.mass_scaling != 0.0 {
        return Err(Error::InvalidParameter("static solve needs zero mass scaling".into()));
    }
    system.solve_flat(f, boundary, None)
}

/// Evaluate a per-point closure into an interleaved dof vector.
pub fn sample_field<const C: usize>(cloud: &PointCloud, f: impl Fn(Point2) -> [f64; C]) -> Vec<f64> {
    cloud.points.iter().flat_map(|&p| f(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeIntegratorState {
    pub t: f64,
    pub step: usize,
    pub u_curr: Vec<f64>,
    /// Previous displacement; unused by diffusion.
    pub u_prev: Vec<f64>,
}

impl TimeIntegratorState {
    pub fn new(u0: Vec<f64>, u_prev: Vec<f64>) -> Result<Self> {
        if u0.len() != u_prev.len() {
            return Err(Error::ShapeMismatch {
                expected: u0.len(),
                actual: u_prev.len(),
            });
        }
        Ok(Self {
            t: 0.0,
            step: 0,
            u_curr: u0,
            u_prev,
        })
    }
}

fn check_step(system: &ConstrainedSystem, kind: OperatorKind, dt: f64, rho: f64, power: i32) -> Result<()> {
    if system.operator.kind != kind {
        return Err(Error::InvalidParameter(format!("{kind:?} step on a {:?} system", system.operator.kind)));
    }
    if !(dt > 0.0 && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and rho > 0, got dt={dt} rho={rho}")));
    }
    let expected = rho / dt.powi(power);
    if ((system.mass_scaling - expected) / expected).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "system mass scaling {} does not match rho/dt^{power} = {expected}",
            system.mass_scaling
        )));
    }
    Ok(())
}

/// One backward-Euler diffusion step; `f` and `u_d` are evaluated at `(m+1)Δt`.
pub fn step_diffusion(
    state: &TimeIntegratorState,
    system: &mut ConstrainedSystem,
    cloud: &PointCloud,
    f: impl Fn(Point2, f64) -> f64,
    u_d: impl Fn(Point2, f64) -> f64,
    dt: f64,
    rho: f64,
) -> Result<TimeIntegratorState> {
    check_step(system, OperatorKind::Diffusion, dt, rho, 1)?;
    let t = (state.step + 1) as f64 * dt;
    let m = system.mass_scaling;
    let rhs: Vec<f64> = cloud
        .points
        .iter()
        .zip(&state.u_curr)
        .map(|(&p, &u)| f(p, t) + m * u)
        .collect();
    let boundary: Vec<f64> = cloud.points.iter().map(|&p| u_d(p, t)).collect();
    let u = system
        .solve_flat(&rhs, &boundary, Some(&state.u_curr))
        .map_err(|e| e.context(format!("diffusion step {}", state.step + 1)))?;
    Ok(TimeIntegratorState {
        t,
        step: state.step + 1,
        u_prev: state.u_curr.clone(),
        u_curr: u,
    })
}

/// One backward-Euler peridynamic step with the system's current bond states.
pub fn step_peridynamic(
    state: &TimeIntegratorState,
    system: &mut ConstrainedSystem,
    cloud: &PointCloud,
    f: impl Fn(Point2, f64) -> [f64; 2],
    u_d: impl Fn(Point2, f64) -> [f64; 2],
    dt: f64,
    rho: f64,
) -> Result<TimeIntegratorState> {
    check_step(system, OperatorKind::Peridynamic, dt, rho, 2)?;
    let t = (state.step + 1) as f64 * dt;
    let m = system.mass_scaling;
    let load = sample_field(cloud, |p| f(p, t));
    let rhs: Vec<f64> = load
        .iter()
        .zip(state.u_curr.iter().zip(&state.u_prev))
        .map(|(f, (c, p))| f + m * (2.0 * c - p))
        .collect();
    let boundary = sample_field(cloud, |p| u_d(p, t));
    let guess: Vec<f64> = state.u_curr.iter().zip(&state.u_prev).map(|(c, p)| 2.0 * c - p).collect();
    let u = system
        .solve_flat(&rhs, &boundary, Some(&guess))
        .map_err(|e| e.context(format!("peridynamic step {}", state.step + 1)))?;
    Ok(TimeIntegratorState {
        t,
        step: state.step + 1,
        u_prev: state.u_curr.clone(),
        u_curr: u,
    })
}

/// Rayleigh wave speed from the shear speed, `c_R ≈ c_s (0.862 + 1.14ν)/(1 + ν)`.
pub fn rayleigh_speed(young: f64, poisson: f64, rho: f64) -> f64 {
    let mu = young / (2.0 * (1.0 + poisson));
    (mu / rho).sqrt() * (0.862 + 1.14 * poisson) / (1.0 + poisson)
}

/// `C_CFL = c_R Δt / h`. Diagnostic only.
pub fn cfl_number(young: f64, poisson: f64, rho: f64, dt: f64, h: f64) -> f64 {
    rayleigh_speed(young, poisson, rho) * dt / h
}

/// Write `step t id x y u [v] [damage]` rows for every point.
pub fn write_snapshot<W: Write>(
    mut out: W,
    step: usize,
    t: f64,
    cloud: &PointCloud,
    components: usize,
    u: &[f64],
    damage: Option<&[f64]>,
) -> Result<()> {
    if u.len() != components * cloud.len() {
        return Err(Error::ShapeMismatch {
            expected: components * cloud.len(),
            actual: u.len(),
        });
    }
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{step} {t:e} {i} {} {}", p.x, p.y)?;
        for c in 0..components {
            write!(out, " {:e}", u[components * i + c])?;
        }
        if let Some(d) = damage {
            write!(out, " {}", d[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
