//! Bond states, pre-notches, irreversible breaking and damage.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::VectorField2;
use crate::pointcloud::{neighborhood_slots, Neighborhood, Point2, PointCloud};

/// Per-bond state, stored in the same flat layout as the operator bond lists.
#[derive(Debug, Clone)]
pub struct BondStateField {
    centers: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    theta: Vec<bool>,
    broken_at: Vec<Option<usize>>,
    /// Bonds that leave the material through a free surface. They are broken
    /// from the start and do not count towards damage.
    excluded: Vec<bool>,
    partner: Vec<Option<usize>>,
}

impl BondStateField {
    pub fn new(n_points: usize, nbhds: &[Neighborhood]) -> Self {
        let slots = neighborhood_slots(n_points, nbhds);
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        for nb in nbhds {
            neighbors.extend_from_slice(&nb.neighbor_indices);
            offsets.push(neighbors.len());
        }
        let centers: Vec<usize> = nbhds.iter().map(|nb| nb.center_index).collect();
        let mut partner = vec![None; neighbors.len()];
        for (row, &i) in centers.iter().enumerate() {
            for b in offsets[row]..offsets[row + 1] {
                let j = neighbors[b];
                if let Some(rj) = slots[j] {
                    let range = offsets[rj]..offsets[rj + 1];
                    if let Ok(k) = neighbors[range.clone()].binary_search(&i) {
                        partner[b] = Some(range.start + k);
                    }
                }
            }
        }
        let total = neighbors.len();
        Self {
            centers,
            offsets,
            neighbors,
            theta: vec![true; total],
            broken_at: vec![None; total],
            excluded: vec![false; total],
            partner,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.centers.len()
    }

    pub fn total_bonds(&self) -> usize {
        self.theta.len()
    }

    pub fn states(&self) -> &[bool] {
        &self.theta
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn broken_at(&self) -> &[Option<usize>] {
        &self.broken_at
    }

    pub fn is_excluded(&self, bond: usize) -> bool {
        self.excluded[bond]
    }

    pub fn broken_count(&self) -> usize {
        self.theta.iter().filter(|t| !**t).count()
    }

    /// `(center, neighbor)` of a flat bond index.
    pub fn endpoints(&self, bond: usize) -> (usize, usize) {
        let row = self.offsets.partition_point(|&o| o <= bond) - 1;
        (self.centers[row], self.neighbors[bond])
    }

    /// Iterate `(flat index, center, neighbor)`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n_rows()).flat_map(move |row| {
            (self.offsets[row]..self.offsets[row + 1]).map(move |b| (b, self.centers[row], self.neighbors[b]))
        })
    }

    /// Break a bond and its reverse copy. Returns whether the bond was intact.
    pub fn break_bond(&mut self, bond: usize, step: usize) -> bool {
        let fresh = self.theta[bond];
        for b in std::iter::once(bond).chain(self.partner[bond]) {
            if self.theta[b] {
                self.theta[b] = false;
                self.broken_at[b] = Some(step);
            }
        }
        fresh
    }

    fn exclude_bond(&mut self, bond: usize) {
        self.break_bond(bond, 0);
        self.excluded[bond] = true;
        if let Some(p) = self.partner[bond] {
            self.excluded[p] = true;
        }
    }
}

/// A pre-notch or free-surface segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Point2,
    pub b: Point2,
}

fn orient(p: Point2, q: Point2, r: Point2) -> f64 {
    (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)
}

fn on_segment(p: Point2, q: Point2, r: Point2) -> bool {
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

impl Segment2 {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a.distance(b) == 0.0 {
            return Err(Error::InvalidParameter(format!("degenerate segment {a:?} {b:?}")));
        }
        Ok(Self { a, b })
    }

    /// Closed-segment intersection; touching counts.
    pub fn intersects(&self, p: Point2, q: Point2) -> bool {
        let eps = 1e-12 * (self.a.distance(self.b) + p.distance(q));
        let sgn = |v: f64| if v > eps { 1 } else if v < -eps { -1 } else { 0 };
        let d1 = sgn(orient(self.a, self.b, p));
        let d2 = sgn(orient(self.a, self.b, q));
        let d3 = sgn(orient(p, q, self.a));
        let d4 = sgn(orient(p, q, self.b));
        if d1 * d2 < 0 && d3 * d4 < 0 {
            return true;
        }
        (d1 == 0 && on_segment(self.a, self.b, p))
            || (d2 == 0 && on_segment(self.a, self.b, q))
            || (d3 == 0 && on_segment(p, q, self.a))
            || (d4 == 0 && on_segment(p, q, self.b))
    }
}

/// Relative elongation of the deformed bond `(i, j)`.
pub fn bond_stretch(u: &VectorField2, i: usize, j: usize, cloud: &PointCloud) -> Result<f64> {
    let (xi, xj) = (cloud.points[i], cloud.points[j]);
    let r = xi.distance(xj);
    if i == j || r == 0.0 {
        return Err(Error::DegenerateNeighbor {
            center: i,
            neighbor: j,
            distance: r,
        });
    }
    let dx = xj.x - xi.x + u.0[j][0] - u.0[i][0];
    let dy = xj.y - xi.y + u.0[j][1] - u.0[i][1];
    Ok((dx.hypot(dy) - r) / r)
}

/// Break every bond crossing one of the notches (at step 0). Returns the number broken.
pub fn initialize_prenotch(theta: &mut BondStateField, notches: &[Segment2], cloud: &PointCloud) -> usize {
    let hits: Vec<usize> = theta
        .bonds()
        .filter(|&(_, i, j)| notches.iter().any(|s| s.intersects(cloud.points[i], cloud.points[j])))
        .map(|(b, _, _)| b)
        .collect();
    hits.into_iter().filter(|&b| theta.break_bond(b, 0)).count()
}

/// Remove every bond that crosses a free side: it is broken and excluded from damage.
/// A bond only touching the side is kept. Returns the number removed.
pub fn initialize_free_surfaces(theta: &mut BondStateField, sides: &[Segment2], cloud: &PointCloud) -> usize {
    let crosses = |s: &Segment2, p: Point2, q: Point2| {
        let o1 = orient(s.a, s.b, p);
        let o2 = orient(s.a, s.b, q);
        let o3 = orient(p, q, s.a);
        let o4 = orient(p, q, s.b);
        let tol = 1e-12 * s.a.distance(s.b) * p.distance(q);
        o1 * o2 < 0.0 && o1.abs() > tol && o2.abs() > tol && o3 * o4 <= 0.0
    };
    let hits: Vec<usize> = theta
        .bonds()
        .filter(|&(_, i, j)| sides.iter().any(|s| crosses(s, cloud.points[i], cloud.points[j])))
        .map(|(b, _, _)| b)
        .collect();
    let mut n = 0;
    for b in hits {
        if !theta.excluded[b] {
            n += 1;
        }
        theta.exclude_bond(b);
    }
    n
}

/// Break bonds whose stretch under `u` exceeds `s0(i, j)`. Broken bonds stay
/// broken. Returns the number of bonds (directed copies) newly broken.
pub fn update_bond_states<F>(
    theta: &mut BondStateField,
    u: &VectorField2,
    cloud: &PointCloud,
    s0: F,
    step: usize,
) -> Result<usize>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if u.len() != cloud.len() {
        return Err(Error::ShapeMismatch {
            expected: cloud.len(),
            actual: u.len(),
        });
    }
    let candidates: Vec<(usize, usize, usize)> = theta.bonds().filter(|&(b, _, _)| theta.theta[b]).collect();
    let over: Vec<usize> = candidates
        .par_iter()
        .map(|&(b, i, j)| Ok((b, bond_stretch(u, i, j, cloud)? > s0(i, j))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter_map(|(b, hit)| hit.then_some(b))
        .collect();
    let before = theta.broken_count();
    for b in over {
        theta.break_bond(b, step);
    }
    Ok(theta.broken_count() - before)
}

/// Fraction of broken bonds per interior point, over material (non-excluded) bonds.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageField {
    pub centers: Vec<usize>,
    pub d: Vec<f64>,
}

impl DamageField {
    /// Damage spread to all cloud points (zero on the layer).
    pub fn to_points(&self, n_points: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_points];
        for (&i, &d) in self.centers.iter().zip(&self.d) {
            out[i] = d;
        }
        out
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }
}

fn damage_with(theta: &BondStateField, counts: impl Fn(usize) -> bool) -> Result<DamageField> {
    let d = (0..theta.n_rows())
        .map(|row| {
            let range = theta.offsets[row]..theta.offsets[row + 1];
            let material: Vec<usize> = range.filter(|&b| !theta.excluded[b]).collect();
            if material.is_empty() {
                return Err(Error::EmptyNeighborhood { center: theta.centers[row] });
            }
            let broken = material.iter().filter(|&&b| !theta.theta[b] && counts(b)).count();
            Ok(broken as f64 / material.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(DamageField {
        centers: theta.centers.clone(),
        d,
    })
}

/// `d_i = Σ(1 − θ_ij) / Σ 1` over the material bonds of `i`.
pub fn damage(theta: &BondStateField) -> Result<DamageField> {
    damage_with(theta, |_| true)
}

/// Damage counting only bonds broken after the initial state (step > 0), which
/// separates grown cracks from the pre-notch.
pub fn grown_damage(theta: &BondStateField) -> Result<DamageField> {
    damage_with(theta, |b| theta.broken_at[b].is_some_and(|s| s > 0))
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the intact-bond graph that contain at least one
/// interior point. Each component is returned as a sorted list of interior ids.
pub fn fragments(theta: &BondStateField, n_points: usize) -> Vec<Vec<usize>> {
    let mut set = DisjointSet::new(n_points);
    for (b, i, j) in theta.bonds() {
        if theta.theta[b] {
            set.union(i, j);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in &theta.centers {
        groups.entry(set.find(i)).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort_by_key(|g| g[0]);
    out
}

/// Angle in degrees between the principal direction of `points` and the vertical.
pub fn line_angle_from_vertical(points: &[Point2]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Major axis angle measured from the x-axis.
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let from_vertical = 90.0 - phi.to_degrees().abs();
    Some(from_vertical.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{build_neighborhoods, build_uniform_grid, Rect};

    fn setup() -> (PointCloud, Vec<Neighborhood>, BondStateField) {
        let cloud = build_uniform_grid(Rect::unit_square(), 0.125, 0.3).unwrap();
        let nbhds = build_neighborhoods(&cloud, 0.3).unwrap();
        let theta = BondStateField::new(cloud.len(), &nbhds);
        (cloud, nbhds, theta)
    }

    #[test]
    fn partners_are_reverse_bonds() {
        let (_, _, theta) = setup();
        for (b, i, j) in theta.bonds() {
            if let Some(p) = theta.partner[b] {
                assert_eq!(theta.endpoints(p), (j, i));
            }
        }
    }

    #[test]
    fn stretch_examples() {
        let (cloud, nbhds, _) = setup();
        let i = nbhds[20].center_index;
        let j = nbhds[20].neighbor_indices[0];
        let zero = VectorField2::zeros(cloud.len());
        assert_eq!(bond_stretch(&zero, i, j, &cloud).unwrap(), 0.0);
        let shift = VectorField2(vec![[0.3, -2.0]; cloud.len()]);
        assert!(bond_stretch(&shift, i, j, &cloud).unwrap().abs() < 1e-12);
        let eps = 0.01;
        let strain = VectorField2(cloud.points.iter().map(|p| [eps * p.x, 0.0]).collect());
        let k = cloud
            .points
            .iter()
            .position(|p| (p.y - cloud.points[i].y).abs() < 1e-12 && (p.x - cloud.points[i].x - 0.125).abs() < 1e-12)
            .unwrap();
        assert!((bond_stretch(&strain, i, k, &cloud).unwrap() - eps).abs() < 1e-12);
        assert!(bond_stretch(&zero, i, i, &cloud).is_err());
    }

    #[test]
    fn segment_intersection_cases() {
        let s = Segment2::new(Point2::new(0.5, -1.0), Point2::new(0.5, 1.0)).unwrap();
        assert!(s.intersects(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)));
        assert!(!s.intersects(Point2::new(0.6, 0.0), Point2::new(1.0, 0.0)));
        assert!(s.intersects(Point2::new(0.5, 0.0), Point2::new(1.0, 0.0)));
        assert!(s.intersects(Point2::new(0.0, 1.0), Point2::new(1.0, 1.0)));
        assert!(!s.intersects(Point2::new(0.0, 1.1), Point2::new(1.0, 1.1)));
        assert!(Segment2::new(Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn prenotch_breaks_only_crossing_bonds() {
        let (cloud, _, mut theta) = setup();
        assert_eq!(initialize_prenotch(&mut theta, &[], &cloud), 0);
        let far = Segment2::new(Point2::new(5.0, 5.0), Point2::new(6.0, 5.0)).unwrap();
        assert_eq!(initialize_prenotch(&mut theta, &[far], &cloud), 0);
        let notch = Segment2::new(Point2::new(0.5625, 0.7), Point2::new(0.5625, 1.2)).unwrap();
        let n = initialize_prenotch(&mut theta, &[notch], &cloud);
        assert!(n > 0);
        for (b, i, j) in theta.bonds() {
            let crossing = notch.intersects(cloud.points[i], cloud.points[j]);
            assert_eq!(!theta.states()[b], crossing);
        }
    }

    #[test]
    fn single_overstretched_bond_breaks_both_copies() {
        let (cloud, nbhds, mut theta) = setup();
        let i = nbhds[30].center_index;
        let j = *nbhds[30]
            .neighbor_indices
            .iter()
            .find(|&&j| nbhds.iter().any(|nb| nb.center_index == j))
            .unwrap();
        let s0 = 0.05;
        // Pull only j, along the bond, so (i, j) reaches 2 s0 and all other bonds of j
        // are far below: use a threshold that only this pair exceeds.
        let mut u = VectorField2::zeros(cloud.len());
        let dir = cloud.points[j] - cloud.points[i];
        let r = dir.norm();
        u.0[j] = [dir.x / r * 2.0 * s0 * r, dir.y / r * 2.0 * s0 * r];
        let threshold = |a: usize, b: usize| if (a, b) == (i, j) || (a, b) == (j, i) { s0 } else { f64::INFINITY };
        let n = update_bond_states(&mut theta, &u, &cloud, threshold, 1).unwrap();
        assert_eq!(n, 2);
        assert_eq!(update_bond_states(&mut theta, &u, &cloud, threshold, 2).unwrap(), 0);
        let zero = VectorField2::zeros(cloud.len());
        assert_eq!(update_bond_states(&mut theta, &zero, &cloud, |_, _| 1e-6, 3).unwrap(), 0);
    }

    #[test]
    fn damage_ratios() {
        let (_, _, mut theta) = setup();
        assert_eq!(damage(&theta).unwrap().max(), 0.0);
        let row = 10;
        let range = theta.offsets[row]..theta.offsets[row + 1];
        let total = range.len();
        for b in range.clone() {
            theta.break_bond(b, 4);
        }
        let d = damage(&theta).unwrap();
        assert_eq!(d.d[row], 1.0);
        assert_eq!(grown_damage(&theta).unwrap().d[row], 1.0);
        assert!(total > 4);
    }

    #[test]
    fn quarter_damage() {
        let (_, _, mut theta) = setup();
        let row = (0..theta.n_rows())
            .find(|&r| theta.offsets[r + 1] - theta.offsets[r] == 20)
            .unwrap();
        for b in theta.offsets[row]..theta.offsets[row] + 5 {
            theta.theta[b] = false;
        }
        assert_eq!(damage(&theta).unwrap().d[row], 0.25);
    }

    #[test]
    fn fragments_split_by_a_full_cut() {
        let (cloud, _, mut theta) = setup();
        assert_eq!(fragments(&theta, cloud.len()).len(), 1);
        let cut = Segment2::new(Point2::new(0.5625, -1.0), Point2::new(0.5625, 2.0)).unwrap();
        initialize_prenotch(&mut theta, &[cut], &cloud);
        assert_eq!(fragments(&theta, cloud.len()).len(), 2);
    }

    #[test]
    fn free_surface_bonds_are_excluded() {
        let (cloud, _, mut theta) = setup();
        let side = Segment2::new(Point2::new(0.0, -1.0), Point2::new(0.0, 2.0)).unwrap();
        assert!(initialize_free_surfaces(&mut theta, &[side], &cloud) > 0);
        for (b, i, j) in theta.bonds() {
            let (xi, xj) = (cloud.points[i].x, cloud.points[j].x);
            if xi > 0.0 && xj < 0.0 {
                assert!(theta.is_excluded(b) && !theta.states()[b]);
            }
        }
        assert_eq!(damage(&theta).unwrap().max(), 0.0);
    }

    #[test]
    fn line_angles() {
        let vertical: Vec<Point2> = (0..5).map(|k| Point2::new(1.0, k as f64)).collect();
        assert!(line_angle_from_vertical(&vertical).unwrap() < 1e-9);
        let tilted: Vec<Point2> = (0..5)
            .map(|k| {
                let t = k as f64;
                let a = 68f64.to_radians();
                Point2::new(-t * a.sin(), -t * a.cos())
            })
            .collect();
        assert!((line_angle_from_vertical(&tilted).unwrap() - 68.0).abs() < 1e-9);
    }
}
