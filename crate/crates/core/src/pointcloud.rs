//! Quasi-uniform 2D point clouds, region tagging and fixed-radius neighborhoods.
//!
//! Clouds cover the closed rectangle `Ω` plus a collar of width `δ` around it.
//! Points inside the closed rectangle are [`Region::Interior`]; collar points are
//! [`Region::DirichletLayer`]. Ordering is row-major by lattice index and is
//! preserved by [`perturb_grid`].

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative slack applied to every horizon comparison so lattice points lying
/// exactly on a ball boundary are included regardless of rounding.
pub const RADIUS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Point2) -> f64 {
        (other - self).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite())
            || x1 <= x0
            || y1 <= y0
        {
            return Err(Error::InvalidParameter(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn unit_square() -> Self {
        Self {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Closed containment with an absolute slack `tol`.
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x >= self.x0 - tol && p.x <= self.x1 + tol && p.y >= self.y0 - tol && p.y <= self.y1 + tol
    }

    /// Euclidean distance from `p` to the rectangle (zero inside).
    pub fn distance(&self, p: Point2) -> f64 {
        let dx = (self.x0 - p.x).max(p.x - self.x1).max(0.0);
        let dy = (self.y0 - p.y).max(p.y - self.y1).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Interior,
    DirichletLayer,
}

impl Region {
    pub fn code(self) -> u8 {
        match self {
            Region::Interior => 0,
            Region::DirichletLayer => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Region::Interior),
            1 => Ok(Region::DirichletLayer),
            other => Err(Error::Parse(format!("unknown region code {other}"))),
        }
    }
}

/// Where lattice points sit relative to the rectangle corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Points at `x0 + i h`; the rectangle edges carry points.
    Vertex,
    /// Points at `x0 + (i + 1/2) h`; no point lies on an edge.
    CellCentered,
}

/// Uniform binning of points into square cells for radius queries.
#[derive(Debug, Clone)]
pub struct CellIndex {
    origin: Point2,
    cell: f64,
    bins: HashMap<(i64, i64), Vec<usize>>,
}

impl CellIndex {
    pub fn new(points: &[Point2], cell: f64) -> Self {
        let origin = points.iter().fold(
            Point2::new(f64::INFINITY, f64::INFINITY),
            |acc, p| Point2::new(acc.x.min(p.x), acc.y.min(p.y)),
        );
        let origin = if origin.is_finite() { origin } else { Point2::default() };
        let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (id, &p) in points.iter().enumerate() {
            bins.entry(Self::key(origin, cell, p)).or_default().push(id);
        }
        Self { origin, cell, bins }
    }

    fn key(origin: Point2, cell: f64, p: Point2) -> (i64, i64) {
        (
            ((p.x - origin.x) / cell).floor() as i64,
            ((p.y - origin.y) / cell).floor() as i64,
        )
    }

    /// Ids of all points with `|p - center| <= radius (1 + RADIUS_TOLERANCE)`, sorted.
    pub fn query(&self, points: &[Point2], center: Point2, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy) = Self::key(self.origin, self.cell, center);
        let limit = radius * (1.0 + RADIUS_TOLERANCE);
        let mut found = Vec::new();
        for ky in cy - reach..=cy + reach {
            for kx in cx - reach..=cx + reach {
                if let Some(ids) = self.bins.get(&(kx, ky)) {
                    found.extend(ids.iter().copied().filter(|&j| center.distance(points[j]) <= limit));
                }
            }
        }
        found.sort_unstable();
        found
    }
}

#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Point2>,
    pub region: Vec<Region>,
    /// Fill distance (lattice spacing for the generated grids).
    pub h: f64,
    pub delta: f64,
    pub domain: Rect,
    uniform: bool,
    index: CellIndex,
}

impl PointCloud {
    /// Assemble a cloud from raw parts. Used by the readers and by tests that
    /// need hand-placed points.
    pub fn from_parts(
        points: Vec<Point2>,
        region: Vec<Region>,
        h: f64,
        delta: f64,
        domain: Rect,
    ) -> Result<Self> {
        if points.len() != region.len() {
            return Err(Error::ShapeMismatch {
                expected: points.len(),
                actual: region.len(),
            });
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite point {p:?}")));
        }
        if !(h > 0.0 && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("need h > 0 and delta > 0, got h={h} delta={delta}")));
        }
        let index = CellIndex::new(&points, delta);
        Ok(Self {
            points,
            region,
            h,
            delta,
            domain,
            uniform: false,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.region[i] == Region::Interior).collect()
    }

    pub fn interior_count(&self) -> usize {
        self.region.iter().filter(|&&r| r == Region::Interior).count()
    }

    /// Sorted ids within `radius` of `center`, including any point at `center` itself.
    pub fn query_radius(&self, center: Point2, radius: f64) -> Vec<usize> {
        self.index.query(&self.points, center, radius)
    }

    /// Plain-text table: `# h=<h> delta=<delta>` then `id x y region` per line.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# h={} delta={}", self.h, self.delta)?;
        for (id, (p, r)) in self.points.iter().zip(&self.region).enumerate() {
            writeln!(out, "{id} {} {} {}", p.x, p.y, r.code())?;
        }
        Ok(())
    }

    /// Read a table written by [`PointCloud::write_table`]. The domain is
    /// recovered as the bounding box of the interior points.
    pub fn read_table<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty point table".into()))??;
        let mut h = None;
        let mut delta = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("h=") {
                h = Some(parse_f64(v)?);
            } else if let Some(v) = tok.strip_prefix("delta=") {
                delta = Some(parse_f64(v)?);
            }
        }
        let (h, delta) = match (h, delta) {
            (Some(h), Some(d)) => (h, d),
            _ => return Err(Error::Parse(format!("bad header line: {header}"))),
        };
        let mut points = Vec::new();
        let mut region = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("expected `id x y region`, got: {line}")));
            }
            let id: usize = f[0].parse().map_err(|_| Error::Parse(format!("bad id in: {line}")))?;
            if id != points.len() {
                return Err(Error::Parse(format!("ids must be consecutive, got {id}")));
            }
            points.push(Point2::new(parse_f64(f[1])?, parse_f64(f[2])?));
            let code: u8 = f[3].parse().map_err(|_| Error::Parse(format!("bad region in: {line}")))?;
            region.push(Region::from_code(code)?);
        }
        let mut bb = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (p, r) in points.iter().zip(&region) {
            if *r == Region::Interior {
                bb = (bb.0.min(p.x), bb.1.max(p.x), bb.2.min(p.y), bb.3.max(p.y));
            }
        }
        let domain = Rect::new(bb.0, bb.1, bb.2, bb.3)?;
        Self::from_parts(points, region, h, delta, domain)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

/// Uniform Cartesian grid with vertex placement covering `Ω` and its `δ`-collar.
pub fn build_uniform_grid(domain: Rect, h: f64, delta: f64) -> Result<PointCloud> {
    build_grid(domain, h, delta, Placement::Vertex)
}

/// Uniform grid with the given placement. Points outside `Ω` farther than `δ`
/// from it are dropped; the rest of the collar is tagged [`Region::DirichletLayer`].
pub fn build_grid(domain: Rect, h: f64, delta: f64, placement: Placement) -> Result<PointCloud> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
    }
    if !(delta >= h * (1.0 - RADIUS_TOLERANCE)) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon {delta} must be at least the spacing {h}"
        )));
    }
    let offset = match placement {
        Placement::Vertex => 0.0,
        Placement::CellCentered => 0.5,
    };
    let nx = (domain.width() / h + 1e-9).floor() as i64;
    let ny = (domain.height() / h + 1e-9).floor() as i64;
    let rings = (delta / h - 1e-9).ceil() as i64 + 1;
    let inside_tol = 1e-9 * h;
    let layer_limit = delta * (1.0 + RADIUS_TOLERANCE);

    let mut points = Vec::new();
    let mut region = Vec::new();
    for j in -rings..=ny + rings {
        for i in -rings..=nx + rings {
            let p = Point2::new(
                domain.x0 + (i as f64 + offset) * h,
                domain.y0 + (j as f64 + offset) * h,
            );
            if domain.contains(p, inside_tol) {
                points.push(p);
                region.push(Region::Interior);
            } else if domain.distance(p) <= layer_limit {
                points.push(p);
                region.push(Region::DirichletLayer);
            }
        }
    }
    let mut cloud = PointCloud::from_parts(points, region, h, delta, domain)?;
    cloud.uniform = true;
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub ratio: f64,
    pub seed: u64,
}

/// Move every point by independent offsets drawn from `U[-r h, r h]` per axis.
/// Region tags and ordering are kept.
pub fn perturb_grid(cloud: &PointCloud, spec: PerturbationSpec) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&spec.ratio) {
        return Err(Error::InvalidParameter(format!(
            "perturbation ratio must lie in [0, 1), got {}",
            spec.ratio
        )));
    }
    if !cloud.uniform {
        return Err(Error::InvalidParameter("perturbation requires a uniform grid".into()));
    }
    if spec.ratio == 0.0 {
        return Ok(cloud.clone());
    }
    let amp = spec.ratio * cloud.h;
    let dist = Uniform::new_inclusive(-amp, amp);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points: Vec<Point2> = cloud
        .points
        .iter()
        .map(|p| {
            let dx = dist.sample(&mut rng);
            let dy = dist.sample(&mut rng);
            Point2::new(p.x + dx, p.y + dy)
        })
        .collect();
    PointCloud::from_parts(points, cloud.region.clone(), cloud.h, cloud.delta, cloud.domain)
}

/// Neighbors of one interior center: every other point within the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center_index: usize,
    pub neighbor_indices: Vec<usize>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.neighbor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_indices.is_empty()
    }
}

/// One neighborhood per interior point, in index order.
pub fn build_neighborhoods(cloud: &PointCloud, delta: f64) -> Result<Vec<Neighborhood>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {delta}")));
    }
    let index = if (delta - cloud.delta).abs() <= RADIUS_TOLERANCE * delta {
        None
    } else {
        Some(CellIndex::new(&cloud.points, delta))
    };
    cloud
        .interior_indices()
        .into_iter()
        .map(|i| {
            let center = cloud.points[i];
            let mut ids = match &index {
                Some(idx) => idx.query(&cloud.points, center, delta),
                None => cloud.query_radius(center, delta),
            };
            ids.retain(|&j| j != i);
            if ids.is_empty() {
                return Err(Error::EmptyNeighborhood { center: i });
            }
            Ok(Neighborhood {
                center_index: i,
                neighbor_indices: ids,
            })
        })
        .collect()
}

/// Map from point id to its slot in a neighborhood list (interior points only).
pub fn neighborhood_slots(n_points: usize, nbhds: &[Neighborhood]) -> Vec<Option<usize>> {
    let mut slots = vec![None; n_points];
    for (k, nb) in nbhds.iter().enumerate() {
        slots[nb.center_index] = Some(k);
    }
    slots
}
