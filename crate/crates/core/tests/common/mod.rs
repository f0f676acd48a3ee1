//! Shared fixtures, oracles and property checks for the integration tests.
#![allow(dead_code)]

use meshfree_nonlocal::fracture::{damage, update_bond_states, BondStateField};
use meshfree_nonlocal::kernel::{KernelSpec, TwoPointCoefficient};
use meshfree_nonlocal::operators::{
    assemble_diffusion, assemble_peridynamic, NonlocalOperator, ScalarField, VectorField2, PD_CONSTANT_2D,
};
use meshfree_nonlocal::pointcloud::{
    build_neighborhoods, build_uniform_grid, perturb_grid, Neighborhood, PerturbationSpec, Point2, PointCloud, Rect,
    Region,
};
use meshfree_nonlocal::quadrature::{build_basis, generate_all_weights, ReproducingMode, ReproducingSpace, WeightFamily};
use meshfree_nonlocal::solver::{ConstrainedSystem, LinearSolverKind};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Setup {
    pub cloud: PointCloud,
    pub nbhds: Vec<Neighborhood>,
    pub weights: Vec<WeightFamily>,
    pub spec: KernelSpec,
    pub space: ReproducingSpace,
}

pub fn setup_on(
    domain: Rect,
    h: f64,
    ratio: f64,
    s: f64,
    order: u32,
    mode: ReproducingMode,
    perturbation: Option<PerturbationSpec>,
) -> Setup {
    let delta = ratio * h;
    let grid = build_uniform_grid(domain, h, delta).unwrap();
    let cloud = match perturbation {
        Some(p) => perturb_grid(&grid, p).unwrap(),
        None => grid,
    };
    let spec = KernelSpec::new(delta, s).unwrap();
    let space = build_basis(order, &spec, mode).unwrap();
    let nbhds = build_neighborhoods(&cloud, delta).unwrap();
    let weights = generate_all_weights(&cloud, &nbhds, &space, &spec).unwrap();
    Setup {
        cloud,
        nbhds,
        weights,
        spec,
        space,
    }
}

pub fn setup(
    h: f64,
    ratio: f64,
    s: f64,
    order: u32,
    mode: ReproducingMode,
    perturbation: Option<PerturbationSpec>,
) -> Setup {
    setup_on(Rect::unit_square(), h, ratio, s, order, mode, perturbation)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|k| {
            let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let jf = j as f64;
                    (p0, p1) = (p1, ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf);
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn gauss_panel<F: Fn(f64) -> Vec<f64>>(f: &F, a: f64, b: f64, rule: &[(f64, f64)]) -> Vec<f64> {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc: Vec<f64> = Vec::new();
    for &(x, w) in rule {
        let v = f(c + r * x);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        acc.iter_mut().zip(v).for_each(|(s, v)| *s += r * w * v);
    }
    acc
}

/// Vector-valued adaptive Gauss-Legendre rule on `[a, b]`: a panel is split until
/// its two halves agree with it to `tol`.
pub fn adaptive_quadrature<F: Fn(f64) -> Vec<f64>>(f: &F, a: f64, b: f64, tol: f64) -> Vec<f64> {
    let rule = gauss_legendre(12);
    let whole = gauss_panel(f, a, b, &rule);
    refine(f, a, b, whole, tol, &rule, 30)
}

fn refine<F: Fn(f64) -> Vec<f64>>(
    f: &F,
    a: f64,
    b: f64,
    whole: Vec<f64>,
    tol: f64,
    rule: &[(f64, f64)],
    depth: u32,
) -> Vec<f64> {
    let m = 0.5 * (a + b);
    let left = gauss_panel(f, a, m, rule);
    let right = gauss_panel(f, m, b, rule);
    let err = left
        .iter()
        .zip(&right)
        .zip(&whole)
        .map(|((l, r), w)| (l + r - w).abs())
        .fold(0.0, f64::max);
    if depth == 0 || err <= tol {
        return left.iter().zip(&right).map(|(l, r)| l + r).collect();
    }
    let mut out = refine(f, a, m, left, 0.5 * tol, rule, depth - 1);
    let r = refine(f, m, b, right, 0.5 * tol, rule, depth - 1);
    out.iter_mut().zip(r).for_each(|(x, y)| *x += y);
    out
}

/// `∫_{B_δ(0)} f(z) dz` in polar coordinates; `f` is evaluated at `z ≠ 0`.
pub fn polar_integral<F: Fn(Point2) -> Vec<f64>>(f: &F, delta: f64, tol: f64) -> Vec<f64> {
    let inner = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let g = |r: f64| {
            // r γ(r) stays bounded for s ≤ 1; sample just off the origin.
            let r = r.max(1e-14 * delta);
            f(Point2::new(r * c, r * s)).into_iter().map(|v| v * r).collect()
        };
        adaptive_quadrature(&g, 0.0, delta, tol)
    };
    adaptive_quadrature(&inner, 0.0, 2.0 * std::f64::consts::PI, tol)
}

/// `max_i |(L u)_i| / (max_i Σ_j |c_ij| · |u|_∞)`.
fn relative_action(op: &NonlocalOperator, action: &[f64], u_scale: f64) -> f64 {
    let row_scale = (0..op.n_rows())
        .map(|r| op.row_bonds(r).map(|(_, c, _, _)| c.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    action.iter().fold(0.0f64, |m, v| m.max(v.abs())) / (row_scale * u_scale)
}

/// Smooth, symmetric and positive everywhere, including the collar.
pub fn heterogeneous_coefficient(seed: u64) -> TwoPointCoefficient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (rng.gen_range(0.5..2.0), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
    TwoPointCoefficient::from_fn(move |x: Point2, y: Point2| a * (b * (x.x + y.x) + c * (x.y * y.y)).exp())
}

/// Constants (diffusion) and rigid motions (peridynamics) are annihilated to `1e-12`
/// relative to the row scale.
pub fn check_annihilation(ratio: f64, order: u32, perturbation: f64, seed: u64) -> Result<(), String> {
    let pert = (perturbation > 0.0).then_some(PerturbationSpec {
        ratio: perturbation,
        seed,
    });
    let coef = heterogeneous_coefficient(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);

    let d = setup(1.0 / 10.0, ratio, 0.0, order, ReproducingMode::DiffusionScalar, pert);
    let op = assemble_diffusion(&d.cloud, &d.nbhds, &d.weights, &coef, &d.spec).map_err(|e| e.to_string())?;
    let c: f64 = rng.gen_range(-10.0..10.0);
    let out = op.apply_scalar(&ScalarField(vec![c; d.cloud.len()])).map_err(|e| e.to_string())?;
    let rel = relative_action(&op, &out.0, c.abs().max(1e-300));
    if rel > 1e-12 {
        return Err(format!("diffusion constant residual {rel:e}"));
    }

    let p = setup(1.0 / 10.0, ratio, 1.0, order, ReproducingMode::PeridynamicTensor, pert);
    let op = assemble_peridynamic(&p.cloud, &p.nbhds, &p.weights, &coef, &p.spec, None).map_err(|e| e.to_string())?;
    let (tx, ty, w): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let u = VectorField2(p.cloud.points.iter().map(|q| [tx - w * q.y, ty + w * q.x]).collect());
    let scale = u.0.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let out = op.apply_vector(&u).map_err(|e| e.to_string())?.to_flat();
    let rel = relative_action(&op, &out, scale);
    if rel > 1e-12 {
        return Err(format!("peridynamic rigid-motion residual {rel:e}"));
    }
    Ok(())
}

/// Random load trajectory: broken bonds never heal and damage never decreases.
pub fn check_irreversibility(seed: u64, steps: usize) -> Result<(), String> {
    let h = 0.125;
    let delta = 3.0 * h;
    let cloud = build_uniform_grid(Rect::unit_square(), h, delta).unwrap();
    let nbhds = build_neighborhoods(&cloud, delta).unwrap();
    let mut theta = BondStateField::new(cloud.len(), &nbhds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = 0.02;
    let reverse: std::collections::HashMap<(usize, usize), usize> =
        theta.bonds().map(|(b, i, j)| ((i, j), b)).collect();
    let mut prev_states = theta.states().to_vec();
    let mut prev_broken_at = theta.broken_at().to_vec();
    let mut prev_damage = damage(&theta).map_err(|e| e.to_string())?.d;
    for step in 1..=steps {
        // Amplitudes go up and down so that many bonds relax below s0 again.
        let amp = rng.gen_range(0.0..2.0 * s0 * h);
        let u = VectorField2(
            (0..cloud.len())
                .map(|_| [rng.gen_range(-amp..=amp), rng.gen_range(-amp..=amp)])
                .collect(),
        );
        let newly = update_bond_states(&mut theta, &u, &cloud, |_, _| s0, step).map_err(|e| e.to_string())?;
        let states = theta.states();
        let mut changed = 0;
        for b in 0..states.len() {
            if !prev_states[b] && states[b] {
                return Err(format!("bond {b} healed at step {step}"));
            }
            if prev_broken_at[b].is_some() && prev_broken_at[b] != theta.broken_at()[b] {
                return Err(format!("bond {b} changed its break step at step {step}"));
            }
            if prev_states[b] && !states[b] {
                changed += 1;
                if theta.broken_at()[b] != Some(step) {
                    return Err(format!("bond {b} broke without recording step {step}"));
                }
            }
        }
        if changed != newly {
            return Err(format!("reported {newly} newly broken, observed {changed}"));
        }
        for (b, i, j) in theta.bonds() {
            if let Some(&rb) = reverse.get(&(j, i)) {
                if states[rb] != states[b] {
                    return Err(format!("bond ({i},{j}) and its reverse disagree"));
                }
            }
        }
        let d = damage(&theta).map_err(|e| e.to_string())?.d;
        if let Some(k) = (0..d.len()).find(|&k| d[k] < prev_damage[k]) {
            return Err(format!("damage decreased at row {k}, step {step}"));
        }
        prev_states = states.to_vec();
        prev_broken_at = theta.broken_at().to_vec();
        prev_damage = d;
    }
    Ok(())
}

/// Dense system built directly from weights and the kernel, solved by LU.
fn dense_oracle(
    d: &Setup,
    coef: &TwoPointCoefficient,
    peridynamic: bool,
    mass: f64,
    rhs: &[f64],
    boundary: &[f64],
) -> DVector<f64> {
    let comp = if peridynamic { 2 } else { 1 };
    let n = comp * d.cloud.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..d.cloud.len() {
        if d.cloud.region[i] == Region::DirichletLayer {
            for c in 0..comp {
                a[(comp * i + c, comp * i + c)] = 1.0;
                b[comp * i + c] = boundary[comp * i + c];
            }
        } else {
            for c in 0..comp {
                a[(comp * i + c, comp * i + c)] += mass;
                b[comp * i + c] = rhs[comp * i + c];
            }
        }
    }
    for (nb, w) in d.nbhds.iter().zip(&d.weights) {
        let i = nb.center_index;
        let xi = d.cloud.points[i];
        for (&j, &omega) in nb.neighbor_indices.iter().zip(&w.weights) {
            let xj = d.cloud.points[j];
            let z = xj - xi;
            let r = z.norm();
            let gamma = d.spec.eval_radius(r).unwrap();
            let k = coef.eval(xi, xj).unwrap();
            if peridynamic {
                let e = [z.x / r, z.y / r];
                let c = PD_CONSTANT_2D * k * gamma * omega;
                for p in 0..2 {
                    for q in 0..2 {
                        // -L: -c e e^T (u_j - u_i)
                        a[(2 * i + p, 2 * j + q)] -= c * e[p] * e[q];
                        a[(2 * i + p, 2 * i + q)] += c * e[p] * e[q];
                    }
                }
            } else {
                let c = 2.0 * k * gamma * omega;
                a[(i, j)] -= c;
                a[(i, i)] += c;
            }
        }
    }
    a.lu().solve(&b).expect("oracle matrix is nonsingular")
}

/// Library solve agrees with the dense LU oracle to `1e-9` relative.
pub fn check_dense_solve(n: usize, ratio: f64, peridynamic: bool, mass: f64, seed: u64) -> Result<(), String> {
    let h = 1.0 / n as f64;
    let (s, order, mode) = if peridynamic {
        (1.0, 2, ReproducingMode::PeridynamicTensor)
    } else {
        (0.0, 2, ReproducingMode::DiffusionScalar)
    };
    let d = setup(h, ratio, s, order, mode, None);
    if d.cloud.len() > 15 * 15 {
        return Err(format!("grid has {} points, more than 15x15", d.cloud.len()));
    }
    let coef = heterogeneous_coefficient(seed);
    let op = if peridynamic {
        assemble_peridynamic(&d.cloud, &d.nbhds, &d.weights, &coef, &d.spec, None)
    } else {
        assemble_diffusion(&d.cloud, &d.nbhds, &d.weights, &coef, &d.spec)
    }
    .map_err(|e| e.to_string())?;
    let comp = if peridynamic { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rhs: Vec<f64> = (0..comp * d.cloud.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let boundary: Vec<f64> = (0..comp * d.cloud.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let expected = dense_oracle(&d, &coef, peridynamic, mass, &rhs, &boundary);
    let scale = expected.amax().max(1e-300);
    for backend in [
        LinearSolverKind::DirectLu,
        LinearSolverKind::BiCgStab {
            tolerance: 1e-13,
            max_iterations: 5000,
        },
    ] {
        let mut system = ConstrainedSystem::new(op.clone(), &d.cloud, mass)
            .map_err(|e| e.to_string())?
            .with_backend(backend);
        let u = system.solve_flat(&rhs, &boundary, None).map_err(|e| e.to_string())?;
        let err = u.iter().zip(expected.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        if err > 1e-9 {
            return Err(format!("{backend:?}: relative deviation {err:e} from dense oracle"));
        }
    }
    Ok(())
}

/// `∫_{B_δ} γ_δ(|z|) |z|² dz = 2` by radial quadrature with the substitution `r = δ t²`.
pub fn check_kernel_normalization(delta: f64, s: f64) -> Result<(), String> {
    let spec = KernelSpec::new(delta, s).map_err(|e| e.to_string())?;
    let f = |t: f64| {
        if t == 0.0 {
            return vec![0.0];
        }
        let r = delta * t * t;
        // 2π γ(r) r³ dr/dt
        vec![2.0 * std::f64::consts::PI * spec.eval_radius(r).unwrap() * r.powi(3) * 2.0 * delta * t]
    };
    let value = adaptive_quadrature(&f, 0.0, 1.0, 1e-12)[0];
    let err = (value - 2.0).abs() / 2.0;
    if err > 1e-6 {
        return Err(format!("delta={delta} s={s}: second moment {value} (relative error {err:e})"));
    }
    Ok(())
}

/// Closed-form moment vector against adaptive polar quadrature, `1e-9` relative to the
/// largest moment.
pub fn check_moment_oracle(order: u32, s: f64, mode: ReproducingMode, delta: f64) -> Result<(), String> {
    use meshfree_nonlocal::quadrature::moment_integrals;
    let spec = KernelSpec::new(delta, s).map_err(|e| e.to_string())?;
    let space = build_basis(order, &spec, mode).map_err(|e| e.to_string())?;
    let exact = moment_integrals(&space, &spec).g;
    let f = |z: Point2| {
        let gamma = spec.eval_radius(z.norm()).unwrap();
        space.eval(z, delta).into_iter().map(|v| v * gamma).collect::<Vec<f64>>()
    };
    let gmax = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let numeric = polar_integral(&f, delta, 1e-13 * gmax);
    for (k, (a, b)) in exact.iter().zip(&numeric).enumerate() {
        let err = (a - b).abs() / a.abs().max(gmax);
        if err > 1e-9 {
            return Err(format!(
                "n={order} s={s} {mode:?}: moment {k} closed form {a:e} vs quadrature {b:e}"
            ));
        }
    }
    Ok(())
}
