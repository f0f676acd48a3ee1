//! Scenario pipelines, artifact staging and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use meshfree_nonlocal::kalthoff::{run_kalthoff_winkler, KalthoffConfig};
use meshfree_nonlocal::pointcloud::{PerturbationSpec, Region};
use meshfree_nonlocal::solver::{sample_field, step_diffusion, write_snapshot, ConstrainedSystem, TimeIntegratorState};
use meshfree_nonlocal::verify::{
    case_by_index, case_example2, case_example3, discretize, l2_norm, linf_norm, run_case, run_convergence_study,
    CaseRun, ConvergenceRow, DecayingDiffusionCase, Perturbation, Regime,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{render, Resolution, RunConfig, Scenario};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const THREADS_ENV: &str = "NLMF_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{stage}: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: meshfree_nonlocal::Error,
    },
    #[error("{stage}: {source}")]
    Io {
        stage: &'static str,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Numerical { source, .. } if matches!(source.root(), meshfree_nonlocal::Error::Io(_)) => 4,
            RunError::Numerical { .. } => 3,
            RunError::Io { .. } => 4,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError>;
}

impl<T> Stage<T> for meshfree_nonlocal::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Numerical { stage, source })
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Io { stage, source })
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub weights: Option<f64>,
    pub assembly: Option<f64>,
    pub solve: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub nlmf: &'static str,
    pub meshfree_nonlocal: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario: &'static str,
    pub command_line: Vec<String>,
    pub config: RunConfig,
    pub versions: Versions,
    pub stages: StageTimes,
    pub status: RunStatus,
    pub exit_code: i32,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
    pub summary: Value,
}

/// What a scenario produced inside the staging directory.
struct Produced {
    headline: Vec<String>,
    summary: Value,
    artifacts: Vec<&'static str>,
    stages: StageTimes,
}

/// Outcome of a finished run, successful or not.
pub struct RunReport {
    pub manifest: RunManifest,
    pub headline: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.manifest.exit_code
    }
}

fn artifact_names(scenario: &Scenario) -> &'static [&'static str] {
    match scenario {
        Scenario::DiffusionStatic { .. } | Scenario::PeridynamicStatic { .. } => &["errors.txt", "solution.txt"],
        Scenario::DiffusionDynamic { .. } => &["errors.txt", "snapshots.txt"],
        Scenario::KalthoffWinkler { .. } => &["summary.txt", "snapshots.txt"],
        Scenario::ConvergenceStudy { .. } => &["study.csv"],
    }
}

/// Apply the thread-count variable to the global pool, if set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got '{value}'"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be a positive integer, got '{value}'"));
    }
    // A pool that is already built (as in tests) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Run a scenario. Artifacts appear in the output directory only on success;
/// the manifest is written either way.
pub fn run(config: &RunConfig) -> Result<RunReport, RunError> {
    let out = &config.output_dir;
    fs::create_dir_all(out).stage("output directory")?;
    let staging = out.join(format!(".staging-{}", std::process::id()));
    fs::create_dir_all(&staging).stage("output directory")?;

    let start = Instant::now();
    let result = execute(&config.scenario, &staging).and_then(|produced| {
        for name in &produced.artifacts {
            fs::rename(staging.join(name), out.join(name)).stage("publish artifacts")?;
        }
        Ok(produced)
    });
    let _ = fs::remove_dir_all(&staging);

    let mut manifest = RunManifest {
        scenario: config.scenario.name(),
        command_line: render(config),
        config: config.clone(),
        versions: Versions {
            nlmf: env!("CARGO_PKG_VERSION"),
            meshfree_nonlocal: meshfree_nonlocal::VERSION,
        },
        stages: StageTimes::default(),
        status: RunStatus::Ok,
        exit_code: 0,
        error: None,
        artifacts: Vec::new(),
        summary: Value::Null,
    };
    let headline = match result {
        Ok(produced) => {
            manifest.stages = produced.stages;
            manifest.artifacts = produced.artifacts.iter().map(|s| s.to_string()).collect();
            manifest.summary = produced.summary;
            produced.headline
        }
        Err(err) => {
            for name in artifact_names(&config.scenario) {
                let _ = fs::remove_file(out.join(name));
            }
            manifest.status = RunStatus::Failed;
            manifest.exit_code = err.exit_code();
            manifest.error = Some(err.to_string());
            Vec::new()
        }
    };
    manifest.stages.total = start.elapsed().as_secs_f64();
    write_manifest(&out.join(MANIFEST_NAME), &manifest).stage("manifest")?;
    Ok(RunReport { manifest, headline })
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    writeln!(w)?;
    w.flush()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    File::create(dir.join(name)).map(BufWriter::new).stage("write artifacts")
}

fn execute(scenario: &Scenario, dir: &Path) -> Result<Produced, RunError> {
    match scenario {
        Scenario::DiffusionStatic { grid, case_index } => {
            let case = case_by_index(*case_index).stage("setup")?;
            let run = run_case(&case, spacing(grid.n), horizon(grid), grid.poly_order, None).stage("static pipeline")?;
            static_outputs(dir, &run, &*case.solution)
        }
        Scenario::PeridynamicStatic {
            grid,
            perturbation,
            seed,
        } => {
            let case = case_example3();
            let spec = (*perturbation > 0.0).then_some(PerturbationSpec {
                ratio: *perturbation,
                seed: *seed,
            });
            let run = run_case(&case, spacing(grid.n), horizon(grid), grid.poly_order, spec).stage("static pipeline")?;
            static_outputs(dir, &run, &*case.solution)
        }
        Scenario::DiffusionDynamic {
            grid,
            dt,
            steps,
            snapshot_every,
        } => diffusion_dynamic(dir, grid, *dt, *steps, *snapshot_every),
        Scenario::KalthoffWinkler {
            grid,
            dt,
            steps,
            impact_speed,
            snapshot_every,
        } => kalthoff(dir, grid, *dt, *steps, *impact_speed, *snapshot_every),
        Scenario::ConvergenceStudy {
            case_index,
            dh_ratio,
            poly_order,
            sizes,
            fixed_delta,
            perturbation,
            seeds,
        } => {
            let case = case_by_index(*case_index).stage("setup")?;
            let hs: Vec<f64> = sizes.iter().map(|&n| spacing(n)).collect();
            let regime = match fixed_delta {
                Some(delta) => Regime::FixedDelta { delta: *delta, hs },
                None => Regime::FixedRatio { ratio: *dh_ratio, hs },
            };
            let perturbation = perturbation.map(|ratio| Perturbation {
                ratio,
                seeds: (0..*seeds as u64).collect(),
            });
            let report = run_convergence_study(&case, &regime, *poly_order, perturbation.as_ref()).stage("study")?;
            let mut w = create(dir, "study.csv")?;
            report.write_csv(&mut w).stage("write artifacts")?;
            w.flush().stage("write artifacts")?;
            let s = report.slopes;
            Ok(Produced {
                headline: vec![format!(
                    "slopes l2_sol={:.4} linf_sol={:.4} l2_trunc={:.4} linf_trunc={:.4}",
                    s.l2_sol, s.linf_sol, s.l2_trunc, s.linf_trunc
                )],
                summary: json!({
                    "slopes": {
                        "l2_sol": s.l2_sol,
                        "linf_sol": s.linf_sol,
                        "l2_trunc": s.l2_trunc,
                        "linf_trunc": s.linf_trunc,
                    },
                    "rows": report.rows.len(),
                }),
                artifacts: vec!["study.csv"],
                stages: StageTimes::default(),
            })
        }
    }
}

fn spacing(n: usize) -> f64 {
    1.0 / n as f64
}

fn horizon(grid: &Resolution) -> f64 {
    grid.dh_ratio * spacing(grid.n)
}

fn error_line(row: &ConvergenceRow) -> String {
    format!(
        "l2_sol={:.6e} linf_sol={:.6e} l2_trunc={:.6e} linf_trunc={:.6e}",
        row.l2_sol, row.linf_sol, row.l2_trunc, row.linf_trunc
    )
}

fn static_outputs(
    dir: &Path,
    run: &CaseRun,
    exact: &dyn Fn(meshfree_nonlocal::pointcloud::Point2) -> [f64; 2],
) -> Result<Produced, RunError> {
    let row = &run.row;
    let mut w = create(dir, "errors.txt")?;
    writeln!(w, "h delta n l2_sol linf_sol l2_trunc linf_trunc").stage("write artifacts")?;
    writeln!(
        w,
        "{:.10e} {:.10e} {} {:.10e} {:.10e} {:.10e} {:.10e}",
        row.h, row.delta, row.n, row.l2_sol, row.linf_sol, row.l2_trunc, row.linf_trunc
    )
    .stage("write artifacts")?;
    w.flush().stage("write artifacts")?;

    let comp = run.solution.len() / run.cloud.len();
    let mut w = create(dir, "solution.txt")?;
    let header = if comp == 1 { "id x y region u exact" } else { "id x y region u v exact_u exact_v" };
    writeln!(w, "{header}").stage("write artifacts")?;
    for (i, p) in run.cloud.points.iter().enumerate() {
        let region = match run.cloud.region[i] {
            Region::Interior => "interior",
            _ => "layer",
        };
        write!(w, "{i} {} {} {region}", p.x, p.y).stage("write artifacts")?;
        for c in 0..comp {
            write!(w, " {}", run.solution[comp * i + c]).stage("write artifacts")?;
        }
        for value in exact(*p).iter().take(comp) {
            write!(w, " {value}").stage("write artifacts")?;
        }
        writeln!(w).stage("write artifacts")?;
    }
    w.flush().stage("write artifacts")?;

    Ok(Produced {
        headline: vec![error_line(row)],
        summary: json!({
            "h": row.h,
            "delta": row.delta,
            "points": run.cloud.len(),
            "l2_sol": row.l2_sol,
            "linf_sol": row.linf_sol,
            "l2_trunc": row.l2_trunc,
            "linf_trunc": row.linf_trunc,
        }),
        artifacts: vec!["errors.txt", "solution.txt"],
        stages: StageTimes {
            weights: Some(run.weights_seconds),
            assembly: Some(run.assembly_seconds),
            solve: Some(run.solve_seconds),
            total: 0.0,
        },
    })
}

fn diffusion_dynamic(
    dir: &Path,
    grid: &Resolution,
    dt: f64,
    steps: usize,
    every: usize,
) -> Result<Produced, RunError> {
    let case = DecayingDiffusionCase { rho: 1.0 };
    let disc = discretize(&case_example2(), spacing(grid.n), horizon(grid), grid.poly_order, None).stage("discretize")?;
    let cloud = disc.cloud;
    let interior: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.region[i] == Region::Interior).collect();
    let mut system = ConstrainedSystem::new(disc.operator, &cloud, case.rho / dt).stage("setup")?;
    let u0 = sample_field(&cloud, |p| [case.solution(p, 0.0)]);
    let mut state = TimeIntegratorState::new(u0.clone(), u0).stage("setup")?;

    let mut snaps = create(dir, "snapshots.txt")?;
    writeln!(snaps, "step t id x y u").stage("write artifacts")?;
    write_snapshot(&mut snaps, 0, 0.0, &cloud, 1, &state.u_curr, None).stage("write artifacts")?;
    let mut errs = create(dir, "errors.txt")?;
    writeln!(errs, "step t l2_sol linf_sol").stage("write artifacts")?;

    let start = Instant::now();
    let (mut l2, mut linf) = (0.0, 0.0);
    for _ in 0..steps {
        state = step_diffusion(
            &state,
            &mut system,
            &cloud,
            |p, t| case.load(p, t),
            |p, t| case.solution(p, t),
            dt,
            case.rho,
        )
        .stage("time stepping")?;
        let err: Vec<f64> = interior
            .iter()
            .map(|&i| (state.u_curr[i] - case.solution(cloud.points[i], state.t)).abs())
            .collect();
        l2 = l2_norm(&err).stage("error norms")?;
        linf = linf_norm(&err).stage("error norms")?;
        if state.step % every == 0 || state.step == steps {
            write_snapshot(&mut snaps, state.step, state.t, &cloud, 1, &state.u_curr, None).stage("write artifacts")?;
            writeln!(errs, "{} {:.10e} {:.10e} {:.10e}", state.step, state.t, l2, linf).stage("write artifacts")?;
        }
    }
    let solve = start.elapsed().as_secs_f64();
    snaps.flush().stage("write artifacts")?;
    errs.flush().stage("write artifacts")?;

    Ok(Produced {
        headline: vec![format!("t={:.6e} l2_sol={l2:.6e} linf_sol={linf:.6e}", state.t)],
        summary: json!({ "t": state.t, "steps": steps, "l2_sol": l2, "linf_sol": linf }),
        artifacts: vec!["errors.txt", "snapshots.txt"],
        stages: StageTimes {
            weights: Some(disc.weights_seconds),
            assembly: Some(disc.assembly_seconds),
            solve: Some(solve),
            total: 0.0,
        },
    })
}

fn kalthoff(
    dir: &Path,
    grid: &Resolution,
    dt: f64,
    steps: usize,
    impact_speed: f64,
    every: usize,
) -> Result<Produced, RunError> {
    let cfg = KalthoffConfig {
        n: grid.n,
        dh_ratio: grid.dh_ratio,
        order: grid.poly_order,
        dt,
        steps,
        impact_speed,
        ..KalthoffConfig::default()
    };
    let mut snaps = create(dir, "snapshots.txt")?;
    writeln!(snaps, "step t id x y u v damage").stage("write artifacts")?;
    let outcome = run_kalthoff_winkler(&cfg, |frame| {
        if frame.step == 1 || frame.step % every == 0 || frame.step == steps {
            let d = frame.damage.to_points(frame.cloud.len());
            write_snapshot(&mut snaps, frame.step, frame.t, frame.cloud, 2, frame.displacement, Some(&d))?;
        }
        Ok(())
    })
    .stage("kalthoff-winkler")?;
    snaps.flush().stage("write artifacts")?;

    let significant = outcome.significant_fragments(0.01);
    let angle = |a: Option<f64>| a.map_or_else(|| "none".to_string(), |v| format!("{v:.2}"));
    let mut lines = vec![
        format!("fragments={}", outcome.fragments()),
        format!("significant_fragments={significant}"),
        format!(
            "fragment_sizes={}",
            outcome.fragment_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        ),
        format!("crack_angle_left={}", angle(outcome.crack_angles[0])),
        format!("crack_angle_right={}", angle(outcome.crack_angles[1])),
        format!("cfl={:.4}", outcome.cfl),
        format!("broken_bonds={}", outcome.broken_bonds),
    ];
    for (side, init) in ["left", "right"].iter().zip(&outcome.initiation) {
        lines.push(match init {
            Some(c) => format!(
                "initiation_{side}=step:{} x:{} y:{} distance:{:.4}",
                c.step, c.point.x, c.point.y, c.distance_to_tip
            ),
            None => format!("initiation_{side}=none"),
        });
    }
    let mut w = create(dir, "summary.txt")?;
    for line in &lines {
        writeln!(w, "{line}").stage("write artifacts")?;
    }
    w.flush().stage("write artifacts")?;

    let init_json = |k: usize| {
        outcome.initiation[k].map(|c| json!({"step": c.step, "x": c.point.x, "y": c.point.y, "distance": c.distance_to_tip}))
    };
    Ok(Produced {
        headline: vec![format!(
            "fragments={} significant_fragments={significant} crack_angle_left={} crack_angle_right={} cfl={:.4}",
            outcome.fragments(),
            angle(outcome.crack_angles[0]),
            angle(outcome.crack_angles[1]),
            outcome.cfl
        )],
        summary: json!({
            "fragments": outcome.fragments(),
            "significant_fragments": significant,
            "crack_angles": outcome.crack_angles,
            "cfl": outcome.cfl,
            "broken_bonds": outcome.broken_bonds,
            "initiation": [init_json(0), init_json(1)],
        }),
        artifacts: vec!["summary.txt", "snapshots.txt"],
        stages: StageTimes {
            weights: Some(outcome.weights_seconds),
            assembly: Some(outcome.assembly_seconds),
            solve: Some(outcome.solve_seconds),
            total: 0.0,
        },
    })
}
