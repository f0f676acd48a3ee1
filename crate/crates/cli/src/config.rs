//! Run configuration: argument parsing, `key=value` files and rendering back to argv.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

pub const DEFAULT_OUTPUT_DIR: &str = "nlmf-out";
pub const DEFAULT_SNAPSHOT_EVERY: usize = 50;
pub const DEFAULT_IMPACT_SPEED: f64 = 3.2;
pub const DEFAULT_STUDY_SIZES: [usize; 3] = [8, 16, 32];
pub const DEFAULT_STUDY_SEEDS: usize = 3;

/// Grid size, horizon ratio and reproducing order shared by the grid scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Resolution {
    /// Points per unit side (per plate height for Kalthoff–Winkler).
    pub n: usize,
    pub dh_ratio: f64,
    pub poly_order: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Scenario {
    DiffusionStatic {
        grid: Resolution,
        case_index: usize,
    },
    DiffusionDynamic {
        grid: Resolution,
        dt: f64,
        steps: usize,
        snapshot_every: usize,
    },
    PeridynamicStatic {
        grid: Resolution,
        perturbation: f64,
        seed: u64,
    },
    KalthoffWinkler {
        grid: Resolution,
        dt: f64,
        steps: usize,
        impact_speed: f64,
        snapshot_every: usize,
    },
    ConvergenceStudy {
        case_index: usize,
        dh_ratio: f64,
        poly_order: u32,
        /// Points per side at each resolution, coarse to fine.
        sizes: Vec<usize>,
        fixed_delta: Option<f64>,
        perturbation: Option<f64>,
        seeds: usize,
    },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::DiffusionStatic { .. } => "nldiff",
            Scenario::DiffusionDynamic { .. } => "nldiff-dyn",
            Scenario::PeridynamicStatic { .. } => "pd-static",
            Scenario::KalthoffWinkler { .. } => "kw",
            Scenario::ConvergenceStudy { .. } => "study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ArgsError {
    /// Help, version or a malformed command line; clap prints and exits.
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
}

fn usage(msg: impl Into<String>) -> ArgsError {
    ArgsError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "nlmf", version, about = "Meshfree nonlocal diffusion and peridynamics solver")]
struct Cli {
    /// `key=value` file; command-line values take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Points per side
    #[arg(value_name = "N")]
    n: Option<usize>,
    /// Horizon over grid spacing
    #[arg(value_name = "DH_RATIO")]
    dh_ratio: Option<f64>,
    /// Reproducing polynomial order
    #[arg(value_name = "POLY_ORDER")]
    poly_order: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Static nonlocal diffusion (case 0: fixed-horizon example, case 1: local-limit example)
    Nldiff {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(value_name = "CASE")]
        case: Option<usize>,
    },
    /// Time-dependent nonlocal diffusion with backward Euler
    NldiffDyn {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(value_name = "DT")]
        dt: Option<f64>,
        #[arg(value_name = "STEPS")]
        steps: Option<usize>,
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Static bond-based peridynamics on a possibly perturbed grid
    PdStatic {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(value_name = "PERTURBATION")]
        perturbation: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Kalthoff–Winkler impact fracture
    Kw {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(value_name = "DT")]
        dt: Option<f64>,
        #[arg(value_name = "STEPS")]
        steps: Option<usize>,
        /// Speed of the impacted edge in cm/ms
        #[arg(long)]
        impact_speed: Option<f64>,
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Convergence study over several resolutions
    Study {
        #[arg(value_name = "CASE")]
        case: Option<usize>,
        #[arg(value_name = "DH_RATIO")]
        dh_ratio: Option<f64>,
        #[arg(value_name = "POLY_ORDER")]
        poly_order: Option<u32>,
        /// Points per side, coarse to fine
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Keep the horizon fixed instead of the ratio
        #[arg(long)]
        fixed_delta: Option<f64>,
        #[arg(long)]
        perturbation: Option<f64>,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

const FILE_KEYS: &[&str] = &[
    "n",
    "dh_ratio",
    "poly_order",
    "case",
    "dt",
    "steps",
    "perturbation",
    "seed",
    "impact_speed",
    "snapshot_every",
    "sizes",
    "fixed_delta",
    "seeds",
    "output_dir",
];

/// Values read from a `key=value` file.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FileValues(BTreeMap<String, String>);

impl FileValues {
    pub fn parse(text: &str) -> Result<Self, ArgsError> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value", lineno + 1)))?;
            let key = key.trim().to_ascii_lowercase();
            if !FILE_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("config line {}: unknown key '{key}'", lineno + 1)));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self, ArgsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ArgsError> {
        self.0
            .get(key)
            .map(|v| v.parse().map_err(|_| usage(format!("config key '{key}': cannot parse '{v}'"))))
            .transpose()
    }

    fn get_list(&self, key: &str) -> Result<Option<Vec<usize>>, ArgsError> {
        self.0
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse().map_err(|_| usage(format!("config key '{key}': cannot parse '{v}'"))))
                    .collect()
            })
            .transpose()
    }
}

/// Command-line value, else file value, else an error naming the missing argument.
fn pick<T: FromStr>(cli: Option<T>, file: &FileValues, key: &str) -> Result<T, ArgsError> {
    match cli {
        Some(v) => Ok(v),
        None => file.get(key)?.ok_or_else(|| usage(format!("missing required value <{}>", key.to_uppercase()))),
    }
}

fn pick_or<T: FromStr>(cli: Option<T>, file: &FileValues, key: &str, default: T) -> Result<T, ArgsError> {
    Ok(match cli {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

fn resolve_grid(g: GridArgs, file: &FileValues) -> Result<Resolution, ArgsError> {
    Ok(Resolution {
        n: pick(g.n, file, "n")?,
        dh_ratio: pick(g.dh_ratio, file, "dh_ratio")?,
        poly_order: pick(g.poly_order, file, "poly_order")?,
    })
}

/// Parse a full argv (program name first) into a validated configuration.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, ArgsError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let file = match &cli.config {
        Some(path) => FileValues::read(path)?,
        None => FileValues::default(),
    };
    let scenario = match cli.command {
        Command::Nldiff { grid, case } => Scenario::DiffusionStatic {
            grid: resolve_grid(grid, &file)?,
            case_index: pick(case, &file, "case")?,
        },
        Command::NldiffDyn {
            grid,
            dt,
            steps,
            snapshot_every,
        } => Scenario::DiffusionDynamic {
            grid: resolve_grid(grid, &file)?,
            dt: pick(dt, &file, "dt")?,
            steps: pick(steps, &file, "steps")?,
            snapshot_every: pick_or(snapshot_every, &file, "snapshot_every", DEFAULT_SNAPSHOT_EVERY)?,
        },
        Command::PdStatic { grid, perturbation, seed } => Scenario::PeridynamicStatic {
            grid: resolve_grid(grid, &file)?,
            perturbation: pick(perturbation, &file, "perturbation")?,
            seed: pick_or(seed, &file, "seed", 0)?,
        },
        Command::Kw {
            grid,
            dt,
            steps,
            impact_speed,
            snapshot_every,
        } => Scenario::KalthoffWinkler {
            grid: resolve_grid(grid, &file)?,
            dt: pick(dt, &file, "dt")?,
            steps: pick(steps, &file, "steps")?,
            impact_speed: pick_or(impact_speed, &file, "impact_speed", DEFAULT_IMPACT_SPEED)?,
            snapshot_every: pick_or(snapshot_every, &file, "snapshot_every", DEFAULT_SNAPSHOT_EVERY)?,
        },
        Command::Study {
            case,
            dh_ratio,
            poly_order,
            sizes,
            fixed_delta,
            perturbation,
            seeds,
        } => {
            let perturbation = perturbation.or(file.get("perturbation")?);
            let default_seeds = if perturbation.is_some() { DEFAULT_STUDY_SEEDS } else { 1 };
            Scenario::ConvergenceStudy {
                case_index: pick(case, &file, "case")?,
                dh_ratio: pick(dh_ratio, &file, "dh_ratio")?,
                poly_order: pick(poly_order, &file, "poly_order")?,
                sizes: match sizes {
                    Some(s) => s,
                    None => file.get_list("sizes")?.unwrap_or_else(|| DEFAULT_STUDY_SIZES.to_vec()),
                },
                fixed_delta: fixed_delta.or(file.get("fixed_delta")?),
                perturbation,
                seeds: pick_or(seeds, &file, "seeds", default_seeds)?,
            }
        }
    };
    let output_dir = match cli.output_dir {
        Some(dir) => dir,
        None => file
            .get::<PathBuf>("output_dir")?
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
    };
    let config = RunConfig { scenario, output_dir };
    validate(&config)?;
    Ok(config)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ArgsError> {
    if ok {
        Ok(())
    } else {
        Err(usage(msg()))
    }
}

fn validate_grid(g: &Resolution) -> Result<(), ArgsError> {
    check(g.n >= 4, || format!("N must be at least 4, got {}", g.n))?;
    check(g.dh_ratio.is_finite() && g.dh_ratio >= 1.0, || {
        format!("dh_ratio must be at least 1, got {}", g.dh_ratio)
    })
}

fn validate_dynamic(dt: f64, steps: usize, every: usize) -> Result<(), ArgsError> {
    check(dt.is_finite() && dt > 0.0, || format!("dt must be positive, got {dt}"))?;
    check(steps >= 1, || "steps must be at least 1".into())?;
    check(every >= 1, || "snapshot_every must be at least 1".into())
}

fn validate_perturbation(r: f64) -> Result<(), ArgsError> {
    check((0.0..1.0).contains(&r), || format!("perturbation must lie in [0, 1), got {r}"))
}

pub fn validate(config: &RunConfig) -> Result<(), ArgsError> {
    match &config.scenario {
        Scenario::DiffusionStatic { grid, case_index } => {
            validate_grid(grid)?;
            check(*case_index <= 1, || format!("nldiff case must be 0 or 1, got {case_index}"))
        }
        Scenario::DiffusionDynamic {
            grid,
            dt,
            steps,
            snapshot_every,
        } => {
            validate_grid(grid)?;
            validate_dynamic(*dt, *steps, *snapshot_every)
        }
        Scenario::PeridynamicStatic { grid, perturbation, .. } => {
            validate_grid(grid)?;
            validate_perturbation(*perturbation)
        }
        Scenario::KalthoffWinkler {
            grid,
            dt,
            steps,
            impact_speed,
            snapshot_every,
        } => {
            validate_grid(grid)?;
            validate_dynamic(*dt, *steps, *snapshot_every)?;
            check(impact_speed.is_finite(), || "impact_speed must be finite".into())
        }
        Scenario::ConvergenceStudy {
            case_index,
            dh_ratio,
            sizes,
            fixed_delta,
            perturbation,
            seeds,
            ..
        } => {
            check(*case_index <= 2, || format!("study case must be 0, 1 or 2, got {case_index}"))?;
            check(dh_ratio.is_finite() && *dh_ratio >= 1.0, || {
                format!("dh_ratio must be at least 1, got {dh_ratio}")
            })?;
            check(sizes.len() >= 3, || "a study needs at least three sizes".into())?;
            check(sizes.iter().all(|&n| n >= 4), || "every size must be at least 4".into())?;
            check(sizes.windows(2).all(|w| w[1] > w[0]), || "sizes must be strictly increasing".into())?;
            if let Some(d) = fixed_delta {
                check(d.is_finite() && *d > 0.0, || format!("fixed_delta must be positive, got {d}"))?;
                let coarsest = 1.0 / sizes[0] as f64;
                check(*d >= coarsest, || format!("fixed_delta {d} is below the coarsest spacing {coarsest}"))?;
            }
            if let Some(r) = perturbation {
                validate_perturbation(*r)?;
            }
            check(*seeds >= 1, || "seeds must be at least 1".into())
        }
    }
}

/// Command line that parses back to `config`, program name excluded.
pub fn render(config: &RunConfig) -> Vec<String> {
    let mut out = vec!["--output-dir".to_string(), config.output_dir.display().to_string()];
    let grid = |out: &mut Vec<String>, g: &Resolution| {
        out.extend([g.n.to_string(), g.dh_ratio.to_string(), g.poly_order.to_string()]);
    };
    out.push(config.scenario.name().to_string());
    match &config.scenario {
        Scenario::DiffusionStatic { grid: g, case_index } => {
            grid(&mut out, g);
            out.push(case_index.to_string());
        }
        Scenario::DiffusionDynamic {
            grid: g,
            dt,
            steps,
            snapshot_every,
        } => {
            grid(&mut out, g);
            out.extend([dt.to_string(), steps.to_string()]);
            out.extend(["--snapshot-every".into(), snapshot_every.to_string()]);
        }
        Scenario::PeridynamicStatic {
            grid: g,
            perturbation,
            seed,
        } => {
            grid(&mut out, g);
            out.push(perturbation.to_string());
            out.extend(["--seed".into(), seed.to_string()]);
        }
        Scenario::KalthoffWinkler {
            grid: g,
            dt,
            steps,
            impact_speed,
            snapshot_every,
        } => {
            grid(&mut out, g);
            out.extend([dt.to_string(), steps.to_string()]);
            out.push(format!("--impact-speed={impact_speed}"));
            out.extend(["--snapshot-every".into(), snapshot_every.to_string()]);
        }
        Scenario::ConvergenceStudy {
            case_index,
            dh_ratio,
            poly_order,
            sizes,
            fixed_delta,
            perturbation,
            seeds,
        } => {
            out.extend([case_index.to_string(), dh_ratio.to_string(), poly_order.to_string()]);
            let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
            out.extend(["--sizes".into(), sizes.join(",")]);
            if let Some(d) = fixed_delta {
                out.extend(["--fixed-delta".into(), d.to_string()]);
            }
            if let Some(r) = perturbation {
                out.extend(["--perturbation".into(), r.to_string()]);
            }
            out.extend(["--seeds".into(), seeds.to_string()]);
        }
    }
    out
}

/// One-line usage summary for error messages.
pub fn usage_text() -> String {
    Cli::command().render_usage().to_string()
}
