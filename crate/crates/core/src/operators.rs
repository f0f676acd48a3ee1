//! Discrete nonlocal diffusion and bond-based peridynamic operators.
//!
//! Rows are stored matrix-free as bond lists with one cached coefficient per
//! bond, so fracture can re-mask bonds without touching material fields.
//! Row `i` acts as `Σ_j k_ij (u_j - u_i)` (scalar) or `Σ_j k_ij (e_ij ⊗ e_ij)(u_j - u_i)`
//! (vector), which annihilates constants and rigid translations.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fracture::BondStateField;
use crate::kernel::{KernelSpec, TwoPointCoefficient};
use crate::pointcloud::{neighborhood_slots, Neighborhood, PointCloud};
use crate::quadrature::WeightFamily;

/// Bond-based micromodulus constant recovering linear elasticity in 2D.
pub const PD_CONSTANT_2D: f64 = 24.0 / 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2(pub Vec<[f64; 2]>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl VectorField2 {
    pub fn zeros(n: usize) -> Self {
        Self(vec![[0.0; 2]; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Interleaved `[u0x, u0y, u1x, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Diffusion,
    Peridynamic,
}

impl OperatorKind {
    pub fn components(self) -> usize {
        match self {
            OperatorKind::Diffusion => 1,
            OperatorKind::Peridynamic => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    pub kind: OperatorKind,
    n_points: usize,
    centers: Vec<usize>,
    row_of: Vec<Option<usize>>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    coef: Vec<f64>,
    /// Unit bond direction; unused for diffusion.
    dir: Vec<[f64; 2]>,
    active: Vec<bool>,
}

fn check_weights(nbhds: &[Neighborhood], weights: &[WeightFamily]) -> Result<()> {
    if weights.len() != nbhds.len() {
        let missing = nbhds
            .iter()
            .find(|nb| !weights.iter().any(|w| w.center_index == nb.center_index))
            .map_or(0, |nb| nb.center_index);
        return Err(Error::MissingWeights(missing));
    }
    for (nb, w) in nbhds.iter().zip(weights) {
        if w.center_index != nb.center_index || w.weights.len() != nb.len() {
            return Err(Error::MissingWeights(nb.center_index));
        }
    }
    Ok(())
}

struct RowData {
    coef: Vec<f64>,
    dir: Vec<[f64; 2]>,
}

impl NonlocalOperator {
    fn build(
        kind: OperatorKind,
        cloud: &PointCloud,
        nbhds: &[Neighborhood],
        weights: &[WeightFamily],
        bond_coef: impl Fn(usize, usize, f64) -> Result<f64> + Sync,
    ) -> Result<Self> {
        check_weights(nbhds, weights)?;
        let rows: Vec<RowData> = nbhds
            .par_iter()
            .zip(weights)
            .map(|(nb, w)| {
                let xi = cloud.points[nb.center_index];
                let mut coef = Vec::with_capacity(nb.len());
                let mut dir = Vec::with_capacity(nb.len());
                for (&j, &omega) in nb.neighbor_indices.iter().zip(&w.weights) {
                    let z = cloud.points[j] - xi;
                    let r = z.norm();
                    coef.push(bond_coef(nb.center_index, j, omega)?);
                    dir.push([z.x / r, z.y / r]);
                }
                Ok(RowData { coef, dir })
            })
            .collect::<Result<_>>()?;
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        let mut coef = Vec::new();
        let mut dir = Vec::new();
        for (nb, row) in nbhds.iter().zip(rows) {
            neighbors.extend_from_slice(&nb.neighbor_indices);
            coef.extend(row.coef);
            dir.extend(row.dir);
            offsets.push(neighbors.len());
        }
        let active = vec![true; neighbors.len()];
        Ok(Self {
            kind,
            n_points: cloud.len(),
            centers: nbhds.iter().map(|nb| nb.center_index).collect(),
            row_of: neighborhood_slots(cloud.len(), nbhds),
            offsets,
            neighbors,
            coef,
            dir,
            active,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_dofs(&self) -> usize {
        self.n_points * self.kind.components()
    }

    pub fn n_rows(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    /// Row slot of point `i`, if it is an interior center.
    pub fn row_of(&self, i: usize) -> Option<usize> {
        self.row_of[i]
    }

    /// Number of bonds whose state is currently active.
    pub fn active_bonds(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Copy bond states from a fracture state field built on the same neighborhoods.
    pub fn set_bond_states(&mut self, theta: &BondStateField) -> Result<()> {
        if theta.total_bonds() != self.active.len() || theta.n_rows() != self.n_rows() {
            return Err(Error::ShapeMismatch {
                expected: self.active.len(),
                actual: theta.total_bonds(),
            });
        }
        for (a, t) in self.active.iter_mut().zip(theta.states()) {
            *a = *t;
        }
        Ok(())
    }

    fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.offsets[row]..self.offsets[row + 1]
    }

    /// `(neighbor, coefficient, unit direction, active)` of each bond in a row.
    pub fn row_bonds(&self, row: usize) -> impl Iterator<Item = (usize, f64, [f64; 2], bool)> + '_ {
        self.row_range(row)
            .map(move |b| (self.neighbors[b], self.coef[b], self.dir[b], self.active[b]))
    }

    /// Scalar action; layer rows are zero.
    pub fn apply_scalar(&self, u: &ScalarField) -> Result<ScalarField> {
        if self.kind != OperatorKind::Diffusion {
            return Err(Error::InvalidParameter("scalar field applied to a vector operator".into()));
        }
        if u.len() != self.n_points {
            return Err(Error::ShapeMismatch {
                expected: self.n_points,
                actual: u.len(),
            });
        }
        let mut out = vec![0.0; self.n_points];
        let rows: Vec<f64> = (0..self.n_rows())
            .into_par_iter()
            .map(|row| {
                let ui = u.0[self.centers[row]];
                self.row_range(row)
                    .filter(|&b| self.active[b])
                    .map(|b| self.coef[b] * (u.0[self.neighbors[b]] - ui))
                    .sum()
            })
            .collect();
        for (row, v) in rows.into_iter().enumerate() {
            out[self.centers[row]] = v;
        }
        Ok(ScalarField(out))
    }

    /// Vector action; layer rows are zero.
    pub fn apply_vector(&self, u: &VectorField2) -> Result<VectorField2> {
        if self.kind != OperatorKind::Peridynamic {
            return Err(Error::InvalidParameter("vector field applied to a scalar operator".into()));
        }
        if u.len() != self.n_points {
            return Err(Error::ShapeMismatch {
                expected: self.n_points,
                actual: u.len(),
            });
        }
        let mut out = vec![[0.0; 2]; self.n_points];
        let rows: Vec<[f64; 2]> = (0..self.n_rows())
            .into_par_iter()
            .map(|row| {
                let ui = u.0[self.centers[row]];
                let mut acc = [0.0; 2];
                for b in self.row_range(row).filter(|&b| self.active[b]) {
                    let uj = u.0[self.neighbors[b]];
                    let e = self.dir[b];
                    let proj = e[0] * (uj[0] - ui[0]) + e[1] * (uj[1] - ui[1]);
                    acc[0] += self.coef[b] * proj * e[0];
                    acc[1] += self.coef[b] * proj * e[1];
                }
                acc
            })
            .collect();
        for (row, v) in rows.into_iter().enumerate() {
            out[self.centers[row]] = v;
        }
        Ok(VectorField2(out))
    }

    /// Nonzero entries `(row dof, col dof, value)` of the interior rows, with the
    /// diagonal accumulated once per row. Vector dofs are interleaved `2i + c`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match self.kind {
            OperatorKind::Diffusion => {
                for row in 0..self.n_rows() {
                    let i = self.centers[row];
                    let mut diag = 0.0;
                    for b in self.row_range(row).filter(|&b| self.active[b]) {
                        out.push((i, self.neighbors[b], self.coef[b]));
                        diag -= self.coef[b];
                    }
                    out.push((i, i, diag));
                }
            }
            OperatorKind::Peridynamic => {
                for row in 0..self.n_rows() {
                    let i = self.centers[row];
                    let mut diag = [[0.0; 2]; 2];
                    for b in self.row_range(row).filter(|&b| self.active[b]) {
                        let j = self.neighbors[b];
                        let e = self.dir[b];
                        for a in 0..2 {
                            for c in 0..2 {
                                let v = self.coef[b] * e[a] * e[c];
                                out.push((2 * i + a, 2 * j + c, v));
                                diag[a][c] -= v;
                            }
                        }
                    }
                    for a in 0..2 {
                        for c in 0..2 {
                            out.push((2 * i + a, 2 * i + c, diag[a][c]));
                        }
                    }
                }
            }
        }
        out
    }

    /// Number of structurally nonzero off-diagonal entries (one per active bond).
    pub fn nonzero_bonds(&self) -> usize {
        self.active_bonds()
    }

    /// Dense matrix of the full operator (layer rows zero). Intended for small checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n_dofs();
        let mut m = vec![vec![0.0; n]; n];
        for (r, c, v) in self.triplets() {
            m[r][c] += v;
        }
        m
    }

    /// Coordinate-format export `i j value` of the interior rows.
    pub fn write_coo<W: Write>(&self, mut out: W) -> Result<()> {
        let mut entries = self.triplets();
        entries.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        for (r, c, v) in merged {
            writeln!(out, "{r} {c} {v}")?;
        }
        Ok(())
    }
}

/// `(L u)_i = 2 Σ_j A(x_i, x_j) γ_δ(|x_i - x_j|) (u_j - u_i) ω_ij`.
pub fn assemble_diffusion(
    cloud: &PointCloud,
    nbhds: &[Neighborhood],
    weights: &[WeightFamily],
    coefficient: &TwoPointCoefficient,
    spec: &KernelSpec,
) -> Result<NonlocalOperator> {
    NonlocalOperator::build(OperatorKind::Diffusion, cloud, nbhds, weights, |i, j, omega| {
        let (xi, xj) = (cloud.points[i], cloud.points[j]);
        let gamma = spec.eval_radius(xi.distance(xj))?;
        Ok(2.0 * coefficient.eval(xi, xj)? * gamma * omega)
    })
}

/// `(L u)_i = c Σ_j θ_ij κ(x_i, x_j) γ_δ (e_ij ⊗ e_ij)(u_j - u_i) ω_ij` with `c = 24/5`.
pub fn assemble_peridynamic(
    cloud: &PointCloud,
    nbhds: &[Neighborhood],
    weights: &[WeightFamily],
    kappa: &TwoPointCoefficient,
    spec: &KernelSpec,
    theta: Option<&BondStateField>,
) -> Result<NonlocalOperator> {
    let mut op = NonlocalOperator::build(OperatorKind::Peridynamic, cloud, nbhds, weights, |i, j, omega| {
        let (xi, xj) = (cloud.points[i], cloud.points[j]);
        let gamma = spec.eval_radius(xi.distance(xj))?;
        Ok(PD_CONSTANT_2D * kappa.eval(xi, xj)? * gamma * omega)
    })?;
    if let Some(theta) = theta {
        op.set_bond_states(theta)?;
    }
    Ok(op)
}
