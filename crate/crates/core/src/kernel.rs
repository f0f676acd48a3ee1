//! Power-law kernels `γ_δ(r) = D0 / (δ^{d+2-s} r^s)` and two-point material fields.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pointcloud::Point2;

/// Poisson ratio implied by bond-based peridynamics in 2D.
pub const PD_POISSON_RATIO_2D: f64 = 0.25;

/// Surface measure of the unit sphere in `R^d`.
fn unit_sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => {
            // 2 π^{d/2} / Γ(d/2) via the recurrence |S^{d-1}| = 2π/(d-2) |S^{d-3}|
            2.0 * PI / (d as f64 - 2.0) * unit_sphere_area(d - 2)
        }
    }
}

/// Constant `D0` making `∫_{B_1} D0 |z|^{2-s} dz = d`.
pub fn kernel_scaling_constant(s: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let top = d as f64 + 2.0;
    if !(s >= 0.0 && s < top) {
        return Err(Error::InvalidParameter(format!(
            "singularity order s={s} outside [0, {top})"
        )));
    }
    Ok(d as f64 * (top - s) / unit_sphere_area(d))
}

/// Radial kernel interface; only the power-law family is provided.
pub trait RadialKernel: Send + Sync {
    fn horizon(&self) -> f64;
    /// Kernel value at separation `r`; zero outside the horizon.
    fn value(&self, r: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub delta: f64,
    pub s: f64,
    pub d: usize,
    pub d0: f64,
}

impl KernelSpec {
    pub fn new(delta: f64, s: f64) -> Result<Self> {
        Self::with_dimension(delta, s, 2)
    }

    pub fn with_dimension(delta: f64, s: f64, d: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {delta}")));
        }
        let d0 = kernel_scaling_constant(s, d)?;
        Ok(Self { delta, s, d, d0 })
    }

    /// `D0 / δ^{d+2-s}`, the kernel without its `r^{-s}` factor.
    pub fn prefactor(&self) -> f64 {
        self.d0 / self.delta.powf(self.d as f64 + 2.0 - self.s)
    }

    /// Kernel at separation `r` with the support check. `r = 0` is only valid for `s = 0`.
    pub fn eval_radius(&self, r: f64) -> Result<f64> {
        if r > self.delta * (1.0 + crate::pointcloud::RADIUS_TOLERANCE) {
            return Ok(0.0);
        }
        if r == 0.0 {
            if self.s > 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "kernel with s={} is singular at zero separation",
                    self.s
                )));
            }
            return Ok(self.prefactor());
        }
        Ok(self.prefactor() / r.powf(self.s))
    }
}

impl RadialKernel for KernelSpec {
    fn horizon(&self) -> f64 {
        self.delta
    }

    fn value(&self, r: f64) -> f64 {
        self.eval_radius(r).unwrap_or(f64::INFINITY)
    }
}

/// `γ_δ(|xj - xi|)`.
pub fn kernel_eval(spec: &KernelSpec, xi: Point2, xj: Point2) -> Result<f64> {
    spec.eval_radius(xi.distance(xj))
}

type PairFn = dyn Fn(Point2, Point2) -> f64 + Send + Sync;
type PointFn = dyn Fn(Point2) -> f64 + Send + Sync;

/// Symmetric two-point material coefficient (diffusivity `A` or modulus `κ`).
#[derive(Clone)]
pub struct TwoPointCoefficient {
    eval: Arc<PairFn>,
}

impl fmt::Debug for TwoPointCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TwoPointCoefficient(..)")
    }
}

impl TwoPointCoefficient {
    /// Wrap a user evaluator. Symmetry is the caller's responsibility.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(Point2, Point2) -> f64 + Send + Sync + 'static,
    {
        Self { eval: Arc::new(f) }
    }

    pub fn constant(value: f64) -> Self {
        Self::from_fn(move |_, _| value)
    }

    /// Evaluate, rejecting nonpositive or non-finite values.
    pub fn eval(&self, x: Point2, y: Point2) -> Result<f64> {
        let v = (self.eval)(x, y);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "material coefficient {v} at ({}, {})-({}, {}) is not positive",
                x.x, x.y, y.x, y.y
            )));
        }
        Ok(v)
    }

    /// Multiply every value by a constant (e.g. Young's modulus to bulk modulus).
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = Arc::clone(&self.eval);
        Self::from_fn(move |x, y| factor * inner(x, y))
    }
}

/// `A(x, y) = 2 (1/a(x) + 1/a(y))^{-1}`.
pub fn harmonic_mean_coefficient<F>(local: F) -> TwoPointCoefficient
where
    F: Fn(Point2) -> f64 + Send + Sync + 'static,
{
    TwoPointCoefficient::from_fn(move |x, y| {
        let (ax, ay) = (local(x), local(y));
        if ax <= 0.0 || ay <= 0.0 {
            return f64::NAN;
        }
        2.0 / (1.0 / ax + 1.0 / ay)
    })
}

/// `κ = E / (3 (1 - 2ν))` with the bond-based value `ν = 1/4`.
pub fn bulk_modulus_from_young(e: f64) -> f64 {
    e / (3.0 * (1.0 - 2.0 * PD_POISSON_RATIO_2D))
}

/// Pointwise fracture energy with the arithmetic-mean pairing.
#[derive(Clone)]
pub struct FractureEnergyField {
    pointwise: Arc<PointFn>,
}

impl fmt::Debug for FractureEnergyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FractureEnergyField(..)")
    }
}

impl FractureEnergyField {
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(Point2) -> f64 + Send + Sync + 'static,
    {
        Self { pointwise: Arc::new(f) }
    }

    pub fn constant(value: f64) -> Self {
        Self::from_fn(move |_| value)
    }

    pub fn at(&self, x: Point2) -> f64 {
        (self.pointwise)(x)
    }

    pub fn pair(&self, x: Point2, y: Point2) -> f64 {
        0.5 * (self.at(x) + self.at(y))
    }
}

fn check_positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// 2D critical stretch `s0 = sqrt(π G / (3 κ δ))`.
pub fn critical_stretch(
    kappa: &TwoPointCoefficient,
    energy: &FractureEnergyField,
    delta: f64,
    xi: Point2,
    xj: Point2,
) -> Result<f64> {
    let k = kappa.eval(xi, xj)?;
    let g = check_positive("fracture energy", energy.pair(xi, xj))?;
    let delta = check_positive("horizon", delta)?;
    Ok((PI * g / (3.0 * k * delta)).sqrt())
}

/// 3D critical stretch `s0 = sqrt(5 G / (9 κ δ))`.
pub fn critical_stretch_3d(kappa: f64, energy: f64, delta: f64) -> Result<f64> {
    let k = check_positive("bulk modulus", kappa)?;
    let g = check_positive("fracture energy", energy)?;
    let delta = check_positive("horizon", delta)?;
    Ok((5.0 * g / (9.0 * k * delta)).sqrt())
}
