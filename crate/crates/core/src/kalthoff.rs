//! Kalthoff–Winkler impact on a doubly pre-notched plate.
//!
//! Units are cm, ms and kg. The plate occupies `[0, W] × [0, H]`; both notches
//! run vertically from the top edge (through the top layer) down to their tips.
//! The top layer between the notches moves with `u = (0, −v t)`, the rest of the
//! top layer is fixed, and the other three sides are free surfaces.

use std::f64::consts::PI;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fracture::{
    damage, fragments, grown_damage, initialize_free_surfaces, initialize_prenotch, line_angle_from_vertical,
    update_bond_states, BondStateField, DamageField, Segment2,
};
use crate::kernel::{bulk_modulus_from_young, critical_stretch, FractureEnergyField, KernelSpec, TwoPointCoefficient, PD_POISSON_RATIO_2D};
use crate::operators::assemble_peridynamic;
use crate::pointcloud::{build_grid, build_neighborhoods, Placement, Point2, PointCloud, Rect, Region};
use crate::quadrature::{build_basis, generate_all_weights, ReproducingMode};
use crate::solver::{cfl_number, step_peridynamic, ConstrainedSystem, LinearSolverKind, TimeIntegratorState};

/// Damage level that marks a crack surface.
pub const CRACK_DAMAGE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct KalthoffConfig {
    /// Points across the plate height; the width gets `2N`.
    pub n: usize,
    pub dh_ratio: f64,
    pub order: u32,
    pub dt: f64,
    pub steps: usize,
    pub width: f64,
    pub height: f64,
    pub notch_x: [f64; 2],
    pub notch_length: f64,
    /// Prescribed speed of the top layer between the notches, in cm/ms (3.2 cm/ms = 32 m/s).
    pub impact_speed: f64,
    pub young: f64,
    pub density: f64,
    /// `s0 = coefficient / √δ`.
    pub stretch_coefficient: f64,
    /// Radius around each tip used for the crack-angle fit.
    pub angle_window: f64,
    pub solver: LinearSolverKind,
}

impl Default for KalthoffConfig {
    fn default() -> Self {
        Self {
            n: 64,
            dh_ratio: 3.0,
            order: 3,
            dt: 2e-4,
            steps: 500,
            width: 20.0,
            height: 10.0,
            notch_x: [7.5, 12.5],
            notch_length: 5.0,
            impact_speed: 3.2,
            young: 1910.0,
            density: 8e-3,
            stretch_coefficient: 0.0099,
            angle_window: 4.0,
            solver: LinearSolverKind::BiCgStab {
                tolerance: 1e-11,
                max_iterations: 2000,
            },
        }
    }
}

impl KalthoffConfig {
    pub fn h(&self) -> f64 {
        self.height / self.n as f64
    }

    pub fn delta(&self) -> f64 {
        self.dh_ratio * self.h()
    }

    pub fn tips(&self) -> [Point2; 2] {
        let y = self.height - self.notch_length;
        [Point2::new(self.notch_x[0], y), Point2::new(self.notch_x[1], y)]
    }

    /// Fracture energy reproducing `s0 = coefficient/√δ` through `s0 = √(πG/(3κδ))`.
    pub fn fracture_energy(&self) -> f64 {
        3.0 * bulk_modulus_from_young(self.young) * self.stretch_coefficient.powi(2) / PI
    }

    pub fn cfl(&self) -> f64 {
        cfl_number(self.young, PD_POISSON_RATIO_2D, self.density, self.dt, self.h())
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n >= 4
            && self.dh_ratio >= 1.0
            && self.dt > 0.0
            && self.width > 0.0
            && self.height > 0.0
            && self.notch_length > 0.0
            && self.notch_length < self.height
            && self.young > 0.0
            && self.density > 0.0
            && self.stretch_coefficient > 0.0
            && self.notch_x.iter().all(|x| *x > 0.0 && *x < self.width)
            && self.notch_x[0] < self.notch_x[1];
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Kalthoff-Winkler configuration {self:?}")))
        }
    }
}

/// State handed to the per-step observer.
pub struct KalthoffFrame<'a> {
    pub step: usize,
    pub t: f64,
    pub cloud: &'a PointCloud,
    pub displacement: &'a [f64],
    pub damage: &'a DamageField,
    pub newly_broken: usize,
}

/// First time a point within `2δ` of a tip crossed the crack threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrackInitiation {
    pub step: usize,
    pub point: Point2,
    pub distance_to_tip: f64,
}

#[derive(Debug, Clone)]
pub struct KalthoffOutcome {
    pub cloud: PointCloud,
    pub displacement: Vec<f64>,
    pub damage: DamageField,
    pub grown_damage: DamageField,
    pub fragment_sizes: Vec<usize>,
    /// Per tip.
    pub initiation: [Option<CrackInitiation>; 2],
    /// First step with any point above the threshold and that point's distance to the nearest tip.
    pub first_crack: Option<CrackInitiation>,
    pub crack_angles: [Option<f64>; 2],
    pub cfl: f64,
    pub broken_bonds: usize,
    pub weights_seconds: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

impl KalthoffOutcome {
    pub fn fragments(&self) -> usize {
        self.fragment_sizes.len()
    }

    /// Fragments holding at least `min_fraction` of all points; drops isolated debris.
    pub fn significant_fragments(&self, min_fraction: f64) -> usize {
        let total: usize = self.fragment_sizes.iter().sum();
        self.fragment_sizes
            .iter()
            .filter(|&&s| s as f64 >= min_fraction * total as f64)
            .count()
    }
}

fn nearest_tip(tips: &[Point2; 2], p: Point2) -> (usize, f64) {
    let d0 = p.distance(tips[0]);
    let d1 = p.distance(tips[1]);
    if d0 <= d1 {
        (0, d0)
    } else {
        (1, d1)
    }
}

/// Grown-crack points around a tip, on the side facing away from the other notch.
fn crack_points(cfg: &KalthoffConfig, cloud: &PointCloud, grown: &DamageField, tip: usize) -> Vec<Point2> {
    let tips = cfg.tips();
    let t = tips[tip];
    let outward = if tip == 0 { -1.0 } else { 1.0 };
    grown
        .centers
        .iter()
        .zip(&grown.d)
        .filter(|(_, d)| **d > CRACK_DAMAGE_THRESHOLD)
        .map(|(&i, _)| cloud.points[i])
        .filter(|p| p.distance(t) <= cfg.angle_window && p.y <= t.y + cfg.h() && (p.x - t.x) * outward >= -cfg.h())
        .collect()
}

pub fn run_kalthoff_winkler<F>(cfg: &KalthoffConfig, mut observer: F) -> Result<KalthoffOutcome>
where
    F: FnMut(&KalthoffFrame) -> Result<()>,
{
    cfg.validate()?;
    let (h, delta) = (cfg.h(), cfg.delta());
    let domain = Rect::new(0.0, cfg.width, 0.0, cfg.height)?;
    let cloud = build_grid(domain, h, delta, Placement::CellCentered)?;
    let spec = KernelSpec::new(delta, 1.0)?;
    let space = build_basis(cfg.order, &spec, ReproducingMode::PeridynamicTensor)?;

    let start = Instant::now();
    let nbhds = build_neighborhoods(&cloud, delta)?;
    let weights = generate_all_weights(&cloud, &nbhds, &space, &spec)?;
    let weights_seconds = start.elapsed().as_secs_f64();

    let mut theta = BondStateField::new(cloud.len(), &nbhds);
    let far = 2.0 * delta + h;
    let top = cfg.height + far;
    let sides = [
        Segment2::new(Point2::new(0.0, -far), Point2::new(0.0, cfg.height))?,
        Segment2::new(Point2::new(cfg.width, -far), Point2::new(cfg.width, cfg.height))?,
        Segment2::new(Point2::new(-far, 0.0), Point2::new(cfg.width + far, 0.0))?,
    ];
    initialize_free_surfaces(&mut theta, &sides, &cloud);
    let tips = cfg.tips();
    let notches = [
        Segment2::new(tips[0], Point2::new(tips[0].x, top))?,
        Segment2::new(tips[1], Point2::new(tips[1].x, top))?,
    ];
    initialize_prenotch(&mut theta, &notches, &cloud);

    let kappa = TwoPointCoefficient::constant(bulk_modulus_from_young(cfg.young));
    let energy = FractureEnergyField::constant(cfg.fracture_energy());
    let s0 = critical_stretch(&kappa, &energy, delta, tips[0], tips[1])?;

    let start = Instant::now();
    let op = assemble_peridynamic(&cloud, &nbhds, &weights, &kappa, &spec, Some(&theta))?;
    let assembly_seconds = start.elapsed().as_secs_f64();
    let mut system = ConstrainedSystem::new(op, &cloud, cfg.density / (cfg.dt * cfg.dt))?.with_backend(cfg.solver);

    let (x_lo, x_hi) = (cfg.notch_x[0], cfg.notch_x[1]);
    let (speed, height) = (cfg.impact_speed, cfg.height);
    let boundary = move |p: Point2, t: f64| {
        if p.y > height && p.x > x_lo && p.x < x_hi {
            [0.0, -speed * t]
        } else {
            [0.0, 0.0]
        }
    };

    let n_dofs = 2 * cloud.len();
    let mut state = TimeIntegratorState::new(vec![0.0; n_dofs], vec![0.0; n_dofs])?;
    let mut initiation = [None, None];
    let mut first_crack = None;
    let mut solve_seconds = 0.0;
    let mut current_damage = damage(&theta)?;
    for step in 1..=cfg.steps {
        let u = crate::operators::VectorField2::from_flat(&state.u_curr);
        let newly = update_bond_states(&mut theta, &u, &cloud, |_, _| s0, step)?;
        system.set_bond_states(&theta)?;
        let start = Instant::now();
        state = step_peridynamic(&state, &mut system, &cloud, |_, _| [0.0, 0.0], boundary, cfg.dt, cfg.density)?;
        solve_seconds += start.elapsed().as_secs_f64();
        current_damage = damage(&theta)?;
        let grown = grown_damage(&theta)?;
        for (&i, &d) in grown.centers.iter().zip(&grown.d) {
            if d <= CRACK_DAMAGE_THRESHOLD {
                continue;
            }
            let p = cloud.points[i];
            let (k, dist) = nearest_tip(&tips, p);
            let hit = CrackInitiation {
                step,
                point: p,
                distance_to_tip: dist,
            };
            if first_crack.is_none_or(|c: CrackInitiation| c.step == step && dist < c.distance_to_tip) {
                first_crack = Some(hit);
            }
            if dist <= 2.0 * delta && initiation[k].is_none() {
                initiation[k] = Some(hit);
            }
        }
        observer(&KalthoffFrame {
            step,
            t: state.t,
            cloud: &cloud,
            displacement: &state.u_curr,
            damage: &current_damage,
            newly_broken: newly,
        })?;
    }
    let grown = grown_damage(&theta)?;
    let crack_angles = [0, 1].map(|k| line_angle_from_vertical(&crack_points(cfg, &cloud, &grown, k)));
    let fragment_sizes = fragments(&theta, cloud.len()).iter().map(Vec::len).collect();
    let broken_bonds = (0..theta.total_bonds())
        .filter(|&b| !theta.states()[b] && !theta.is_excluded(b))
        .count();
    debug_assert!(cloud.region.contains(&Region::DirichletLayer));
    Ok(KalthoffOutcome {
        displacement: state.u_curr,
        damage: current_damage,
        grown_damage: grown,
        fragment_sizes,
        initiation,
        first_crack,
        crack_angles,
        cfl: cfg.cfl(),
        broken_bonds,
        cloud,
        weights_seconds,
        assembly_seconds,
        solve_seconds,
    })
}
