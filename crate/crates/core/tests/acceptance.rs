//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` are reported as `FAIL (known)` and do not
//! fail the run unless `ACCEPTANCE_STRICT=1`. The full-resolution fracture run
//! is included by default; set `ACCEPTANCE_SKIP_FULL=1` to leave it out.

mod common;

use common::*;
use meshfree_nonlocal::kalthoff::{run_kalthoff_winkler, KalthoffConfig};
use meshfree_nonlocal::pointcloud::PerturbationSpec;
use meshfree_nonlocal::quadrature::{constraint_system, moment_integrals, ReproducingMode};
use meshfree_nonlocal::verify::{
    case_example1, case_example2, case_example3, run_convergence_study, ConvergenceReport, Perturbation, Regime,
};
use std::process::ExitCode;
use std::time::{Duration, Instant};

const KNOWN_FAILING: &[&str] = &["example1-fixed-delta", "example2", "kw-full-fragments"];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Result<Verdict, String>;

const MODES: [ReproducingMode; 2] = [ReproducingMode::DiffusionScalar, ReproducingMode::PeridynamicTensor];

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn quadrature_exactness() -> Result<Verdict, String> {
    let h = 1.0 / 16.0;
    let mut worst = 0.0f64;
    let mut configs = 0;
    let perturbations = std::iter::once(None).chain(
        [0.2, 0.5]
            .into_iter()
            .flat_map(|ratio| (1..=3).map(move |seed| Some(PerturbationSpec { ratio, seed }))),
    );
    for pert in perturbations {
        for s in [0.0, 1.0] {
            for order in [2, 3] {
                for mode in MODES {
                    let d = setup(h, 3.5, s, order, mode, pert);
                    let g = moment_integrals(&d.space, &d.spec).g;
                    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    for (nb, fam) in d.nbhds.iter().zip(&d.weights) {
                        let (b, _) = constraint_system(nb.center_index, nb, &d.cloud, &d.space, &d.spec)
                            .map_err(|e| e.to_string())?;
                        for (row, ga) in b.iter().zip(&g) {
                            let r: f64 = row.iter().zip(&fam.weights).map(|(x, w)| x * w).sum::<f64>() - ga;
                            worst = worst.max(r.abs() / gmax);
                        }
                    }
                    configs += 1;
                }
            }
        }
    }
    Ok(Verdict::new(
        worst <= 1e-10,
        format!("{configs} configurations, worst relative residual {worst:.2e} (gate 1e-10)"),
    ))
}

fn moment_oracle() -> Result<Verdict, String> {
    let mut count = 0;
    for mode in MODES {
        for s in [0.0, 1.0] {
            for order in 0..=5 {
                // Orders the basis builder rejects for this kernel have no integrals to check.
                if order == 0 && s > 0.0 {
                    continue;
                }
                for delta in [0.1, 1.0] {
                    check_moment_oracle(order, s, mode, delta)?;
                    count += 1;
                }
            }
        }
    }
    Ok(Verdict::new(true, format!("{count} bases match polar quadrature to 1e-9")))
}

fn slopes_text(r: &ConvergenceReport) -> String {
    let s = &r.slopes;
    format!(
        "slopes l2_sol={:.3} linf_sol={:.3} l2_trunc={:.3} linf_trunc={:.3}",
        s.l2_sol, s.linf_sol, s.l2_trunc, s.linf_trunc
    )
}

const HS: [f64; 3] = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];

fn example1_fixed_delta() -> Result<Verdict, String> {
    let regime = Regime::FixedDelta {
        delta: 0.4375,
        hs: HS.to_vec(),
    };
    let r = run_convergence_study(&case_example1(), &regime, 2, None).map_err(|e| e.to_string())?;
    let pass = in_range(r.slopes.l2_sol, 0.8, 1.2) && in_range(r.slopes.linf_sol, 0.8, 1.2);
    Ok(Verdict::new(pass, format!("n=2 {} (solution in [0.8, 1.2])", slopes_text(&r))))
}

fn example1_fixed_ratio() -> Result<Verdict, String> {
    let regime = Regime::FixedRatio {
        ratio: 3.5,
        hs: HS.to_vec(),
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [2u32, 3, 4] {
        let r = run_convergence_study(&case_example1(), &regime, n, None).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let trunc_gate = nf - 1.0 - 0.3;
        pass &= r.slopes.l2_trunc >= trunc_gate && r.slopes.linf_trunc >= trunc_gate;
        let sol_gate = match n {
            2 => Some(nf - 0.3),
            3 => Some(nf - 1.0 - 0.3),
            _ => None,
        };
        if let Some(g) = sol_gate {
            pass &= r.slopes.l2_sol >= g && r.slopes.linf_sol >= g;
        }
        detail.push(format!("n={n} {}", slopes_text(&r)));
    }
    Ok(Verdict::new(pass, detail.join("; ")))
}

fn example2() -> Result<Verdict, String> {
    let regime = Regime::FixedRatio {
        ratio: 3.5,
        hs: vec![1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0],
    };
    let r = run_convergence_study(&case_example2(), &regime, 2, None).map_err(|e| e.to_string())?;
    let s = r.slopes;
    let pass = [s.l2_sol, s.linf_sol, s.l2_trunc, s.linf_trunc]
        .iter()
        .all(|&v| in_range(v, 1.7, 2.3));
    Ok(Verdict::new(pass, format!("n=2 {} (all in [1.7, 2.3])", slopes_text(&r))))
}

fn example3() -> Result<Verdict, String> {
    let regime = Regime::FixedRatio {
        ratio: 3.5,
        hs: HS.to_vec(),
    };
    let uniform = run_convergence_study(&case_example3(), &regime, 3, None).map_err(|e| e.to_string())?;
    let pert = Perturbation {
        ratio: 0.2,
        seeds: vec![1, 2, 3],
    };
    let perturbed = run_convergence_study(&case_example3(), &regime, 3, Some(&pert)).map_err(|e| e.to_string())?;
    let u = uniform.slopes;
    let p = perturbed.slopes;
    let sol_ok = in_range(u.l2_sol, 1.6, 2.4) && in_range(u.linf_sol, 1.6, 2.4);
    let trunc_ok = in_range(p.l2_trunc, 1.7, 2.3) && in_range(p.linf_trunc, 1.7, 2.3);
    let worst_se = perturbed
        .summary
        .iter()
        .flat_map(|s| [2, 3].map(|c| s.std_error[c] / s.mean[c]))
        .fold(0.0f64, f64::max);
    Ok(Verdict::new(
        sol_ok && trunc_ok && worst_se < 0.2,
        format!(
            "uniform {}; perturbed {}; worst truncation std error / mean {:.3}",
            slopes_text(&uniform),
            slopes_text(&perturbed),
            worst_se
        ),
    ))
}

fn kw_reduced() -> Result<Verdict, String> {
    let cfg = KalthoffConfig {
        n: 32,
        steps: 300,
        ..Default::default()
    };
    let out = run_kalthoff_winkler(&cfg, |_| Ok(())).map_err(|e| e.to_string())?;
    let two_delta = 2.0 * cfg.delta();
    let both = out.initiation.iter().all(Option::is_some);
    let first_ok = out.first_crack.is_some_and(|c| c.distance_to_tip <= two_delta);
    let angles_ok = out.crack_angles.iter().all(|a| a.is_some_and(|a| (a - 68.0).abs() <= 12.0));
    let fmt_angle = |a: Option<f64>| a.map_or("none".to_string(), |a| format!("{a:.1}°"));
    Ok(Verdict::new(
        both && first_ok && angles_ok,
        format!(
            "initiation left={} right={}, first crack {:.3} cm from a tip (limit {two_delta:.3}), angles {} / {} (68 ± 12)",
            out.initiation[0].map_or("none".into(), |c| format!("step {}", c.step)),
            out.initiation[1].map_or("none".into(), |c| format!("step {}", c.step)),
            out.first_crack.map_or(f64::NAN, |c| c.distance_to_tip),
            fmt_angle(out.crack_angles[0]),
            fmt_angle(out.crack_angles[1]),
        ),
    ))
}

fn kw_cfl() -> Result<Verdict, String> {
    let c = KalthoffConfig::default().cfl();
    Ok(Verdict::new((c - 0.4).abs() <= 0.1, format!("C_CFL = {c:.3} (0.4 ± 0.1)")))
}

fn kw_full_fragments() -> Result<Verdict, String> {
    let cfg = KalthoffConfig::default();
    let out = run_kalthoff_winkler(&cfg, |_| Ok(())).map_err(|e| e.to_string())?;
    Ok(Verdict::new(
        out.fragments() == 3,
        format!(
            "{} connected components ({} holding at least 1% of the points), expected 3",
            out.fragments(),
            out.significant_fragments(0.01)
        ),
    ))
}

fn property_suites() -> Result<Verdict, String> {
    let seeds = 0..6u64;
    for seed in seeds.clone() {
        let ratio = 3.0 + 0.15 * seed as f64;
        check_annihilation(ratio, 2 + (seed % 2) as u32, 0.1 * seed as f64, seed)?;
        check_irreversibility(seed, 8)?;
        check_dense_solve(5 + (seed % 4) as usize, 2.5 + 0.2 * seed as f64, seed % 2 == 1, [0.0, 50.0][(seed / 2 % 2) as usize], seed)?;
    }
    for s in [0.0, 0.5, 1.0, 2.0, 3.0] {
        for delta in [0.01, 0.3, 5.0] {
            check_kernel_normalization(delta, s)?;
        }
    }
    Ok(Verdict::new(
        true,
        "annihilation 1e-12, irreversibility and monotone damage, dense oracle 1e-9, kernel normalization 1e-6",
    ))
}

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let skip_full = std::env::var("ACCEPTANCE_SKIP_FULL").is_ok_and(|v| v == "1");
    let criteria: Vec<(&str, Check, Duration)> = vec![
        ("quadrature-exactness", quadrature_exactness, Duration::from_secs(10)),
        ("moment-oracle", moment_oracle, Duration::MAX),
        ("example1-fixed-delta", example1_fixed_delta, Duration::from_secs(120)),
        ("example1-fixed-ratio", example1_fixed_ratio, Duration::from_secs(180)),
        ("example2", example2, Duration::from_secs(120)),
        ("example3", example3, Duration::from_secs(300)),
        ("kw-reduced", kw_reduced, Duration::from_secs(900)),
        ("kw-cfl", kw_cfl, Duration::MAX),
        ("kw-full-fragments", kw_full_fragments, Duration::from_secs(7200)),
        ("property-suites", property_suites, Duration::MAX),
    ];
    let mut unexpected = 0;
    let mut failed = 0;
    for (name, check, limit) in criteria {
        if skip_full && name == "kw-full-fragments" {
            println!("SKIP {name}: ACCEPTANCE_SKIP_FULL=1");
            continue;
        }
        let start = Instant::now();
        let verdict = check().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let elapsed = start.elapsed();
        let on_time = elapsed <= limit;
        let pass = verdict.pass && on_time;
        let timing = if limit == Duration::MAX {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())
        };
        let known = KNOWN_FAILING.contains(&name);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        let late = if on_time { "" } else { " [over time limit]" };
        println!("{tag} {name}: {} [{timing}]{late}", verdict.detail);
        if !pass {
            failed += 1;
            if !known {
                unexpected += 1;
            }
        }
    }
    println!("acceptance: {failed} failing, {unexpected} unexpected");
    if unexpected > 0 || (strict && failed > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
