//! Manufactured solutions, error norms and convergence studies.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::{bulk_modulus_from_young, harmonic_mean_coefficient, KernelSpec, TwoPointCoefficient};
use crate::operators::{assemble_diffusion, assemble_peridynamic, NonlocalOperator, ScalarField, VectorField2};
use crate::pointcloud::{build_neighborhoods, build_uniform_grid, perturb_grid, PerturbationSpec, Point2, PointCloud, Rect, Region};
use crate::quadrature::{build_basis, generate_all_weights, ReproducingMode};
use crate::solver::{solve_static, ConstrainedSystem};

/// Root-mean-square over the given values.
pub fn l2_norm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("norm of an empty set".into()));
    }
    Ok((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
}

pub fn linf_norm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("norm of an empty set".into()));
    }
    Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Diffusion,
    Peridynamic,
}

impl CaseKind {
    pub fn components(self) -> usize {
        match self {
            CaseKind::Diffusion => 1,
            CaseKind::Peridynamic => 2,
        }
    }

    pub fn mode(self) -> ReproducingMode {
        match self {
            CaseKind::Diffusion => ReproducingMode::DiffusionScalar,
            CaseKind::Peridynamic => ReproducingMode::PeridynamicTensor,
        }
    }
}

/// Point evaluator returning up to two components (scalar cases use the first).
pub type PointFn = Arc<dyn Fn(Point2) -> [f64; 2] + Send + Sync>;
/// Evaluator that may depend on the horizon.
pub type HorizonFn = Arc<dyn Fn(Point2, f64) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub kind: CaseKind,
    /// Kernel singularity order.
    pub s: f64,
    /// Nonlocal two-point coefficient (A for diffusion, κ for peridynamics).
    pub coefficient: TwoPointCoefficient,
    /// Exact solution, also used as boundary data on the layer.
    pub solution: PointFn,
    /// Continuous operator applied to the exact solution.
    pub action: HorizonFn,
    pub load: HorizonFn,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("s", &self.s)
            .finish()
    }
}

/// Nonlocal diffusion of `x⁶ + y⁶` with `A = 5 + x₁ + y₁`, constant kernel, `Ω = [0,1]²`.
pub fn case_example1() -> ManufacturedCase {
    let action = |p: Point2, d: f64| {
        let (x, y) = (p.x, p.y);
        let d2 = d * d;
        let d4 = d2 * d2;
        let even = 1.25 * d4 + 15.0 * d2 * (x * x + y * y) + 30.0 * (x.powi(4) + y.powi(4));
        let odd = 3.75 * d4 * x + 20.0 * d2 * x.powi(3) + 12.0 * x.powi(5);
        (5.0 + 2.0 * x) * even + odd
    };
    ManufacturedCase {
        name: "example1",
        kind: CaseKind::Diffusion,
        s: 0.0,
        coefficient: TwoPointCoefficient::from_fn(|x: Point2, y: Point2| 5.0 + x.x + y.x),
        solution: Arc::new(|p: Point2| [p.x.powi(6) + p.y.powi(6), 0.0]),
        action: Arc::new(move |p, d| [action(p, d), 0.0]),
        load: Arc::new(move |p, d| [-action(p, d), 0.0]),
    }
}

/// Local limit `cos x cos y` with `a = 2 + sin x sin y` and the harmonic-mean coefficient.
pub fn case_example2() -> ManufacturedCase {
    ManufacturedCase {
        name: "example2",
        kind: CaseKind::Diffusion,
        s: 0.0,
        coefficient: harmonic_mean_coefficient(|p: Point2| 2.0 + p.x.sin() * p.y.sin()),
        solution: Arc::new(|p: Point2| [p.x.cos() * p.y.cos(), 0.0]),
        action: Arc::new(|p, _| {
            let (sx, cx, sy, cy) = (p.x.sin(), p.x.cos(), p.y.sin(), p.y.cos());
            [-4.0 * cx * cy - 4.0 * sx * cx * sy * cy, 0.0]
        }),
        load: Arc::new(|p, _| {
            let (sx, cx, sy, cy) = (p.x.sin(), p.x.cos(), p.y.sin(), p.y.cos());
            [4.0 * cx * cy + 4.0 * sx * cx * sy * cy, 0.0]
        }),
    }
}

/// `C₁ = 1/(2(1+ν))` at `ν = 1/4`.
pub const EXAMPLE3_C1: f64 = 0.4;

/// Local Young's modulus of the heterogeneous elasticity case.
pub fn example3_young(p: Point2) -> f64 {
    2.0 + p.x.sin() * p.y.sin()
}

/// Navier action `∇·(E/(2(1+ν)) (2𝐄 + tr𝐄 I))` of `u₀ = (sin x sin y, −cos x cos y)`.
pub fn example3_navier_action(p: Point2) -> [f64; 2] {
    let c1 = EXAMPLE3_C1;
    let (sx, cx, sy, cy) = (p.x.sin(), p.x.cos(), p.y.sin(), p.y.cos());
    let ax = -12.0 * c1 * sx * sy + 4.0 * c1 * (2.0 * p.x).cos() * sy * sy + 2.0 * c1 * (2.0 * p.y).cos() * sx * sx;
    let ay = 12.0 * c1 * cx * cy + 3.0 * c1 * (2.0 * p.x).sin() * (2.0 * p.y).sin();
    [ax, ay]
}

/// Static bond-based elasticity with `E = 2 + sin x sin y`, `ν = 1/4`, `u₀ = (sin x sin y, −cos x cos y)`.
pub fn case_example3() -> ManufacturedCase {
    ManufacturedCase {
        name: "example3",
        kind: CaseKind::Peridynamic,
        s: 1.0,
        coefficient: harmonic_mean_coefficient(|p: Point2| bulk_modulus_from_young(example3_young(p))),
        solution: Arc::new(|p: Point2| [p.x.sin() * p.y.sin(), -p.x.cos() * p.y.cos()]),
        action: Arc::new(|p, _| example3_navier_action(p)),
        load: Arc::new(|p, _| {
            let a = example3_navier_action(p);
            [-a[0], -a[1]]
        }),
    }
}

/// Case by CLI index: 0 and 1 are the diffusion examples, 2 the elasticity one.
pub fn case_by_index(index: usize) -> Result<ManufacturedCase> {
    match index {
        0 => Ok(case_example1()),
        1 => Ok(case_example2()),
        2 => Ok(case_example3()),
        _ => Err(Error::InvalidParameter(format!("unknown case index {index}"))),
    }
}

/// Time-dependent diffusion with exact solution `e^{-t} cos x cos y` and density `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayingDiffusionCase {
    pub rho: f64,
}

impl DecayingDiffusionCase {
    pub fn coefficient(&self) -> TwoPointCoefficient {
        case_example2().coefficient
    }

    pub fn solution(&self, p: Point2, t: f64) -> f64 {
        (-t).exp() * p.x.cos() * p.y.cos()
    }

    /// `ρ ∂ₜu − ∇·(a∇u)`.
    pub fn load(&self, p: Point2, t: f64) -> f64 {
        let (sx, cx, sy, cy) = (p.x.sin(), p.x.cos(), p.y.sin(), p.y.cos());
        (-t).exp() * (4.0 * cx * cy + 4.0 * sx * cx * sy * cy - self.rho * cx * cy)
    }
}

/// Discretization of one resolution: cloud, operator and timing of each stage.
pub struct Discretization {
    pub cloud: PointCloud,
    pub operator: NonlocalOperator,
    pub weights_seconds: f64,
    pub assembly_seconds: f64,
}

pub fn discretize(
    case: &ManufacturedCase,
    h: f64,
    delta: f64,
    order: u32,
    perturbation: Option<PerturbationSpec>,
) -> Result<Discretization> {
    let grid = build_uniform_grid(Rect::unit_square(), h, delta)?;
    let cloud = match perturbation {
        Some(p) => perturb_grid(&grid, p)?,
        None => grid,
    };
    let spec = KernelSpec::new(delta, case.s)?;
    let space = build_basis(order, &spec, case.kind.mode())?;
    let start = Instant::now();
    let nbhds = build_neighborhoods(&cloud, delta)?;
    let weights = generate_all_weights(&cloud, &nbhds, &space, &spec)?;
    let weights_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let operator = match case.kind {
        CaseKind::Diffusion => assemble_diffusion(&cloud, &nbhds, &weights, &case.coefficient, &spec)?,
        CaseKind::Peridynamic => assemble_peridynamic(&cloud, &nbhds, &weights, &case.coefficient, &spec, None)?,
    };
    Ok(Discretization {
        cloud,
        operator,
        weights_seconds,
        assembly_seconds: start.elapsed().as_secs_f64(),
    })
}

fn sample(cloud: &PointCloud, comp: usize, f: impl Fn(Point2) -> [f64; 2]) -> Vec<f64> {
    cloud.points.iter().flat_map(|&p| f(p).into_iter().take(comp)).collect()
}

/// Per-point `|𝓛[u](x_i) − (𝓛_h u)_i|`, the Euclidean norm for vector cases, over interior points.
pub fn truncation_error(case: &ManufacturedCase, disc: &Discretization, delta: f64) -> Result<Vec<f64>> {
    let comp = case.kind.components();
    let cloud = &disc.cloud;
    let u = sample(cloud, comp, |p| (case.solution)(p));
    let discrete = match case.kind {
        CaseKind::Diffusion => disc.operator.apply_scalar(&ScalarField(u))?.0,
        CaseKind::Peridynamic => disc.operator.apply_vector(&VectorField2::from_flat(&u))?.to_flat(),
    };
    Ok(disc
        .operator
        .centers()
        .iter()
        .map(|&i| {
            let exact = (case.action)(cloud.points[i], delta);
            (0..comp)
                .map(|c| (exact[c] - discrete[comp * i + c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub delta: f64,
    pub n: u32,
    pub seed: Option<u64>,
    pub l2_sol: f64,
    pub linf_sol: f64,
    pub l2_trunc: f64,
    pub linf_trunc: f64,
}

/// Result of one static solve with its stage timings.
pub struct CaseRun {
    pub row: ConvergenceRow,
    pub solution: Vec<f64>,
    pub cloud: PointCloud,
    pub weights_seconds: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

/// Discretize, solve and measure errors for one resolution.
pub fn run_case(
    case: &ManufacturedCase,
    h: f64,
    delta: f64,
    order: u32,
    perturbation: Option<PerturbationSpec>,
) -> Result<CaseRun> {
    let disc = discretize(case, h, delta, order, perturbation)?;
    let trunc = truncation_error(case, &disc, delta)?;
    let comp = case.kind.components();
    let cloud = disc.cloud;
    let exact = sample(&cloud, comp, |p| (case.solution)(p));
    let load = sample(&cloud, comp, |p| (case.load)(p, delta));
    let start = Instant::now();
    let mut system = ConstrainedSystem::new(disc.operator, &cloud, 0.0)?;
    let u = solve_static(&mut system, &load, &exact)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let err: Vec<f64> = (0..cloud.len())
        .filter(|&i| cloud.region[i] == Region::Interior)
        .map(|i| {
            (0..comp)
                .map(|c| (u[comp * i + c] - exact[comp * i + c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(CaseRun {
        row: ConvergenceRow {
            h,
            delta,
            n: order,
            seed: perturbation.map(|p| p.seed),
            l2_sol: l2_norm(&err)?,
            linf_sol: linf_norm(&err)?,
            l2_trunc: l2_norm(&trunc)?,
            linf_trunc: linf_norm(&trunc)?,
        },
        solution: u,
        cloud,
        weights_seconds: disc.weights_seconds,
        assembly_seconds: disc.assembly_seconds,
        solve_seconds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    /// `δ = ratio · h` for each `h`.
    FixedRatio { ratio: f64, hs: Vec<f64> },
    /// Same `δ` for every `h`.
    FixedDelta { delta: f64, hs: Vec<f64> },
}

impl Regime {
    fn resolutions(&self) -> Vec<(f64, f64)> {
        match self {
            Regime::FixedRatio { ratio, hs } => hs.iter().map(|&h| (h, ratio * h)).collect(),
            Regime::FixedDelta { delta, hs } => hs.iter().map(|&h| (h, *delta)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub ratio: f64,
    pub seeds: Vec<u64>,
}

/// Mean and standard error of each error column at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionSummary {
    pub h: f64,
    pub delta: f64,
    pub mean: [f64; 4],
    pub std_error: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slopes {
    pub l2_sol: f64,
    pub linf_sol: f64,
    pub l2_trunc: f64,
    pub linf_trunc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<ResolutionSummary>,
    pub slopes: Slopes,
}

/// Unweighted least-squares slope of `log y` against `log x`.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("slope fit needs at least two matched samples".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("slope fit needs positive samples".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

fn columns(row: &ConvergenceRow) -> [f64; 4] {
    [row.l2_sol, row.linf_sol, row.l2_trunc, row.linf_trunc]
}

/// Solve every resolution (and seed) and fit slopes against `h` on the means.
pub fn run_convergence_study(
    case: &ManufacturedCase,
    regime: &Regime,
    order: u32,
    perturbation: Option<&Perturbation>,
) -> Result<ConvergenceReport> {
    let res = regime.resolutions();
    if res.len() < 3 {
        return Err(Error::InvalidParameter("a convergence study needs at least three resolutions".into()));
    }
    if res.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::InvalidParameter("grid sizes must be strictly decreasing".into()));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &(h, delta) in &res {
        let specs: Vec<Option<PerturbationSpec>> = match perturbation {
            Some(p) if !p.seeds.is_empty() => p
                .seeds
                .iter()
                .map(|&seed| Some(PerturbationSpec { ratio: p.ratio, seed }))
                .collect(),
            _ => vec![None],
        };
        let mut batch = Vec::new();
        for spec in specs {
            let run = run_case(case, h, delta, order, spec)
                .map_err(|e| e.context(format!("resolution h={h} delta={delta} seed={:?}", spec.map(|s| s.seed))))?;
            batch.push(run.row);
        }
        let k = batch.len() as f64;
        let mut mean = [0.0; 4];
        let mut std_error = [0.0; 4];
        for c in 0..4 {
            mean[c] = batch.iter().map(|r| columns(r)[c]).sum::<f64>() / k;
            if batch.len() > 1 {
                let var = batch.iter().map(|r| (columns(r)[c] - mean[c]).powi(2)).sum::<f64>() / (k - 1.0);
                std_error[c] = (var / k).sqrt();
            }
        }
        summary.push(ResolutionSummary { h, delta, mean, std_error });
        rows.extend(batch);
    }
    let hs: Vec<f64> = summary.iter().map(|s| s.h).collect();
    let slope = |c: usize| fit_log_slope(&hs, &summary.iter().map(|s| s.mean[c]).collect::<Vec<_>>());
    let slopes = Slopes {
        l2_sol: slope(0)?,
        linf_sol: slope(1)?,
        l2_trunc: slope(2)?,
        linf_trunc: slope(3)?,
    };
    Ok(ConvergenceReport { rows, summary, slopes })
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "h,delta,n,seed,l2_sol,linf_sol,l2_trunc,linf_trunc")?;
        for r in &self.rows {
            let seed = r.seed.map_or_else(String::new, |s| s.to_string());
            writeln!(
                out,
                "{:.10e},{:.10e},{},{},{:.10e},{:.10e},{:.10e},{:.10e}",
                r.h, r.delta, r.n, seed, r.l2_sol, r.linf_sol, r.l2_trunc, r.linf_trunc
            )?;
        }
        let s = &self.slopes;
        writeln!(
            out,
            "# slopes l2_sol={:.4} linf_sol={:.4} l2_trunc={:.4} linf_trunc={:.4}",
            s.l2_sol, s.linf_sol, s.l2_trunc, s.linf_trunc
        )?;
        Ok(())
    }
}
