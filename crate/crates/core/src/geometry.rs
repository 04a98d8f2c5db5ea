//! Set descriptions and their discretization into cell meshes.
//!
//! A [`Mesh`] is a cell decomposition of a compact set: every atom carries the
//! measure of its cell (length, area, volume or surface area) and the cell's
//! local box shape, which the kernel module uses for the diagonal
//! self-interaction. Solid primitives use near-square cells of a uniform
//! base spacing; [`Grading::EndpointRefined`] adds Chebyshev clustering on
//! intervals and a thin boundary skin layer on balls and annuli, where
//! equilibrium measures concentrate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points are stored in three slots; coordinates beyond the set dimension are zero.
pub type Point = [f64; 3];

pub const MAX_DIM: usize = 3;

/// Thickness of the boundary skin as a fraction of the base spacing.
const SKIN_FRACTION: f64 = 0.2;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Interval {
        a: f64,
        b: f64,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Sphere {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
        /// Mesh the boundary surface instead of the solid.
        #[serde(default)]
        surface: bool,
    },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Interval { .. } => "interval",
            Primitive::Ball { .. } => "ball",
            Primitive::Sphere { .. } => "sphere",
            Primitive::Ellipsoid { .. } => "ellipsoid",
            Primitive::Annulus { .. } => "annulus",
        }
    }

    fn center(&self, dim: usize) -> Point {
        match self {
            Primitive::Interval { a, b } => [0.5 * (a + b), 0.0, 0.0],
            Primitive::Ball { center, .. }
            | Primitive::Sphere { center, .. }
            | Primitive::Ellipsoid { center, .. }
            | Primitive::Annulus { center, .. } => to_point(center, dim),
        }
    }

    fn is_surface(&self) -> bool {
        matches!(
            self,
            Primitive::Sphere { .. } | Primitive::Ellipsoid { surface: true, .. }
        )
    }

    /// Intrinsic dimension of the primitive inside `R^dim`.
    pub fn intrinsic_dim(&self, dim: usize) -> usize {
        if self.is_surface() {
            dim - 1
        } else {
            dim
        }
    }

    /// Radial extent `(r_min, r_max)` about the primitive's center; the
    /// ellipsoid range is a bounding range.
    fn radial_range(&self) -> (f64, f64) {
        match self {
            Primitive::Interval { a, b } => (0.0, 0.5 * (b - a)),
            Primitive::Ball { radius, .. } => (0.0, *radius),
            Primitive::Sphere { radius, .. } => (*radius, *radius),
            Primitive::Ellipsoid {
                semi_axes, surface, ..
            } => {
                let hi = semi_axes.iter().cloned().fold(0.0, f64::max);
                let lo = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                if *surface {
                    (lo, hi)
                } else {
                    (0.0, hi)
                }
            }
            Primitive::Annulus {
                r_inner, r_outer, ..
            } => (*r_inner, *r_outer),
        }
    }

    /// Lebesgue (or surface) measure of the primitive.
    pub fn measure(&self, dim: usize) -> f64 {
        match self {
            Primitive::Interval { a, b } => b - a,
            Primitive::Ball { radius, .. } => unit_ball_volume(dim) * radius.powi(dim as i32),
            Primitive::Sphere { radius, .. } => {
                unit_sphere_area(dim) * radius.powi(dim as i32 - 1)
            }
            Primitive::Ellipsoid {
                semi_axes, surface, ..
            } => {
                let prod: f64 = semi_axes.iter().product();
                if !surface {
                    unit_ball_volume(dim) * prod
                } else if dim == 2 {
                    ellipse_perimeter(semi_axes[0], semi_axes[1])
                } else {
                    // Knud Thomsen's approximation; only used for resolution splitting.
                    let p = 1.6075;
                    let (a, b, c) = (semi_axes[0], semi_axes[1], semi_axes[2]);
                    4.0 * PI
                        * (((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0)
                            .powf(1.0 / p)
                }
            }
            Primitive::Annulus {
                r_inner, r_outer, ..
            } => unit_ball_volume(dim) * (r_outer.powi(dim as i32) - r_inner.powi(dim as i32)),
        }
    }

    /// Largest distance from the origin to a point of the primitive.
    fn max_norm(&self, dim: usize) -> f64 {
        match self {
            Primitive::Interval { a, b } => a.abs().max(b.abs()),
            Primitive::Ellipsoid {
                center, semi_axes, ..
            } => {
                let c = to_point(center, dim);
                norm(&c) + semi_axes.iter().cloned().fold(0.0, f64::max)
            }
            _ => norm(&self.center(dim)) + self.radial_range().1,
        }
    }

    fn scaled(&self, s: f64) -> Primitive {
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * s).collect::<Vec<_>>();
        match self {
            Primitive::Interval { a, b } => Primitive::Interval { a: a * s, b: b * s },
            Primitive::Ball { center, radius } => Primitive::Ball {
                center: sc(center),
                radius: radius * s,
            },
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: sc(center),
                radius: radius * s,
            },
            Primitive::Ellipsoid {
                center,
                semi_axes,
                surface,
            } => Primitive::Ellipsoid {
                center: sc(center),
                semi_axes: sc(semi_axes),
                surface: *surface,
            },
            Primitive::Annulus {
                center,
                r_inner,
                r_outer,
            } => Primitive::Annulus {
                center: sc(center),
                r_inner: r_inner * s,
                r_outer: r_outer * s,
            },
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSet(format!("{}: {msg}", self.name())));
        let check_center = |c: &Vec<f64>| -> Result<()> {
            if c.len() != dim {
                return Err(Error::InvalidSet(format!(
                    "{}: center has {} coordinates, set dimension is {dim}",
                    self.name(),
                    c.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidSet(format!("{}: non-finite center", self.name())));
            }
            Ok(())
        };
        match self {
            Primitive::Interval { a, b } => {
                if dim != 1 {
                    return bad(format!("intervals live in dimension 1, set dimension is {dim}"));
                }
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return bad(format!("need a < b, got [{a}, {b}]"));
                }
            }
            Primitive::Ball { center, radius } => {
                check_center(center)?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
            }
            Primitive::Sphere { center, radius } => {
                check_center(center)?;
                if dim < 2 {
                    return bad("spheres need dimension >= 2".into());
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
            }
            Primitive::Ellipsoid {
                center, semi_axes, ..
            } => {
                check_center(center)?;
                if dim < 2 {
                    return bad("ellipsoids need dimension >= 2; use an interval".into());
                }
                if semi_axes.len() != dim {
                    return bad(format!(
                        "{} semi-axes given, set dimension is {dim}",
                        semi_axes.len()
                    ));
                }
                if semi_axes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return bad("semi-axes must be positive".into());
                }
            }
            Primitive::Annulus {
                center,
                r_inner,
                r_outer,
            } => {
                check_center(center)?;
                if dim < 2 {
                    return bad("annuli need dimension >= 2".into());
                }
                if !(*r_inner > 0.0 && r_inner < r_outer && r_outer.is_finite()) {
                    return bad(format!("need 0 < r_inner < r_outer, got {r_inner}, {r_outer}"));
                }
            }
        }
        Ok(())
    }
}

/// A compact set in `R^dim` given as a finite union of primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSpec {
    pub dim: usize,
    pub parts: Vec<Primitive>,
}

impl SetSpec {
    pub fn new(dim: usize, parts: Vec<Primitive>) -> Result<Self> {
        let spec = Self { dim, parts };
        spec.validate()?;
        Ok(spec)
    }

    /// Closed ball of radius `r` centered at the origin of `R^dim`.
    pub fn centered_ball(dim: usize, r: f64) -> Self {
        let part = if dim == 1 {
            Primitive::Interval { a: -r, b: r }
        } else {
            Primitive::Ball {
                center: vec![0.0; dim],
                radius: r,
            }
        };
        Self {
            dim,
            parts: vec![part],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SetSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("set json: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(Error::InvalidSet(format!(
                "dimension must be in 1..={MAX_DIM}, got {}",
                self.dim
            )));
        }
        if self.parts.is_empty() {
            return Err(Error::InvalidSet("set has no parts".into()));
        }
        for part in &self.parts {
            part.validate(self.dim)?;
        }
        for (i, p) in self.parts.iter().enumerate() {
            for q in &self.parts[i + 1..] {
                if interiors_overlap(p, q, self.dim) {
                    return Err(Error::InvalidSet(format!(
                        "parts {} and {} have overlapping interiors",
                        p.name(),
                        q.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dilation about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            parts: self.parts.iter().map(|p| p.scaled(s)).collect(),
        }
    }

    /// Radius of the smallest origin-centered ball containing the set.
    pub fn circumradius(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.max_norm(self.dim))
            .fold(0.0, f64::max)
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.parts
            .iter()
            .map(|p| p.intrinsic_dim(self.dim))
            .max()
            .unwrap_or(self.dim)
    }
}

fn interiors_overlap(p: &Primitive, q: &Primitive, dim: usize) -> bool {
    const EPS: f64 = 1e-12;
    if let (Primitive::Interval { a: a1, b: b1 }, Primitive::Interval { a: a2, b: b2 }) = (p, q) {
        return a1.max(*a2) < b1.min(*b2) - EPS;
    }
    let c1 = p.center(dim);
    let c2 = q.center(dim);
    let d = dist(&c1, &c2);
    let (lo1, hi1) = p.radial_range();
    let (lo2, hi2) = q.radial_range();
    match (p.is_surface(), q.is_surface()) {
        (true, true) => d < EPS && (lo1 - lo2).abs() < EPS && (hi1 - hi2).abs() < EPS,
        (false, false) => {
            if d < EPS {
                lo1.max(lo2) < hi1.min(hi2) - EPS
            } else {
                d < hi1 + hi2 - EPS
            }
        }
        (true, false) | (false, true) => {
            let ((slo, shi), (lo, hi)) = if p.is_surface() {
                ((lo1, hi1), (lo2, hi2))
            } else {
                ((lo2, hi2), (lo1, hi1))
            };
            // distances from the solid's center to points of the surface
            let near = if d < EPS { slo } else { (d - shi).max(slo - d).max(0.0) };
            let far = d + shi;
            near < hi - EPS && far > lo + EPS
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    #[default]
    EndpointRefined,
}

/// Local box shape of a cell: `widths[..dim]` are the full side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub widths: [f64; 3],
    pub dim: usize,
}

impl Cell {
    fn new(dim: usize, widths: &[f64]) -> Self {
        let mut w = [0.0; 3];
        w[..dim].copy_from_slice(&widths[..dim]);
        Self { widths: w, dim }
    }

    /// An isolated point: no measure and infinite self-energy, so it can
    /// never carry equilibrium mass.
    pub fn point() -> Self {
        Self { widths: [0.0; 3], dim: 0 }
    }

    pub fn is_point(&self) -> bool {
        self.dim == 0
    }

    /// Radius of the segment, disk or ball with the same measure.
    pub fn equivalent_radius(&self) -> f64 {
        let m: f64 = self.widths[..self.dim].iter().product();
        match self.dim {
            0 => 0.0,
            1 => 0.5 * m,
            2 => (m / PI).sqrt(),
            _ => (3.0 * m / (4.0 * PI)).cbrt(),
        }
    }
}

/// Cell discretization of a compact set.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub atoms: Vec<Point>,
    pub weights: Vec<f64>,
    pub cell_radius: Vec<f64>,
    pub cells: Vec<Cell>,
    pub intrinsic_dim: usize,
}

impl Mesh {
    /// Assembles a mesh from raw parts and checks its invariants.
    pub fn from_parts(dim: usize, atoms: Vec<Point>, weights: Vec<f64>, cells: Vec<Cell>) -> Result<Self> {
        let n = atoms.len();
        if n < 2 {
            return Err(Error::InvalidMesh(format!("mesh needs at least 2 atoms, got {n}")));
        }
        if weights.len() != n || cells.len() != n {
            return Err(Error::InvalidMesh("atom, weight and cell counts differ".into()));
        }
        let bad_weight = weights
            .iter()
            .zip(&cells)
            .any(|(w, c)| if c.is_point() { *w != 0.0 } else { !(*w > 0.0) });
        if bad_weight {
            return Err(Error::InvalidMesh(
                "cell weights must be positive (and zero for isolated points)".into(),
            ));
        }
        if cells.iter().all(Cell::is_point) {
            return Err(Error::InvalidMesh("mesh has no cells of positive dimension".into()));
        }
        let nn = nearest_neighbor_distances(&atoms);
        if nn.iter().any(|d| *d <= 0.0) {
            return Err(Error::InvalidMesh("atoms are not pairwise distinct".into()));
        }
        let cell_radius = cells
            .iter()
            .zip(&nn)
            .map(|(c, d)| c.equivalent_radius().min(*d))
            .collect();
        let intrinsic_dim = cells.iter().map(|c| c.dim).max().unwrap_or(dim);
        Ok(Self {
            dim,
            atoms,
            weights,
            cell_radius,
            cells,
            intrinsic_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Smallest dimension of a non-point cell; Riesz exponents must stay
    /// below it.
    pub fn min_cell_dim(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| !c.is_point())
            .map(|c| c.dim)
            .min()
            .unwrap_or(self.intrinsic_dim)
    }

    /// Appends isolated points (zero measure, infinite self-energy).
    pub fn with_isolated_points(&self, points: &[Point]) -> Result<Mesh> {
        let mut atoms = self.atoms.clone();
        let mut weights = self.weights.clone();
        let mut cells = self.cells.clone();
        for p in points {
            atoms.push(*p);
            weights.push(0.0);
            cells.push(Cell::point());
        }
        Mesh::from_parts(self.dim, atoms, weights, cells)
    }

    pub fn circumradius(&self) -> f64 {
        self.atoms.iter().map(norm).fold(0.0, f64::max)
    }

    /// Dilation of the mesh about the origin.
    pub fn scaled(&self, s: f64) -> Mesh {
        let atoms = self
            .atoms
            .iter()
            .map(|a| [a[0] * s, a[1] * s, a[2] * s])
            .collect();
        let cells = self
            .cells
            .iter()
            .map(|c| Cell {
                widths: [c.widths[0] * s, c.widths[1] * s, c.widths[2] * s],
                dim: c.dim,
            })
            .collect();
        Mesh {
            dim: self.dim,
            atoms,
            weights: self
                .weights
                .iter()
                .zip(&self.cells)
                .map(|(w, c)| w * s.powi(c.dim as i32))
                .collect(),
            cell_radius: self.cell_radius.iter().map(|r| r * s).collect(),
            cells,
            intrinsic_dim: self.intrinsic_dim,
        }
    }
}

/// Meshes `spec` with roughly `resolution` atoms in total.
///
/// Intervals get exactly `resolution` atoms (split across parts by length);
/// Fibonacci spheres get exactly their share; solid primitives approximate
/// their share with near-square cells.
pub fn build_mesh(spec: &SetSpec, resolution: usize, grading: Grading) -> Result<Mesh> {
    spec.validate()?;
    if resolution < 2 {
        return Err(Error::InvalidMesh(format!("resolution must be >= 2, got {resolution}")));
    }
    let dim = spec.dim;
    let shares = split_resolution(spec, resolution);
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    for (part, share) in spec.parts.iter().zip(shares) {
        let piece = mesh_primitive(part, dim, share, grading)?;
        atoms.extend(piece.atoms);
        weights.extend(piece.weights);
        cells.extend(piece.cells);
    }
    Mesh::from_parts(dim, atoms, weights, cells)
}

fn split_resolution(spec: &SetSpec, resolution: usize) -> Vec<usize> {
    let k = spec.parts.len();
    let same_dim = spec
        .parts
        .iter()
        .all(|p| p.intrinsic_dim(spec.dim) == spec.parts[0].intrinsic_dim(spec.dim));
    let measures: Vec<f64> = if same_dim {
        spec.parts.iter().map(|p| p.measure(spec.dim)).collect()
    } else {
        vec![1.0; k]
    };
    let total: f64 = measures.iter().sum();
    let mut shares: Vec<usize> = measures
        .iter()
        .map(|m| ((resolution as f64 * m / total).floor() as usize).max(2))
        .collect();
    // hand out the rounding remainder so interval meshes hit `resolution` exactly
    let mut assigned: usize = shares.iter().sum();
    let mut i = 0;
    while assigned < resolution {
        shares[i % k] += 1;
        assigned += 1;
        i += 1;
    }
    shares
}

#[derive(Default)]
struct Piece {
    atoms: Vec<Point>,
    weights: Vec<f64>,
    cells: Vec<Cell>,
}

impl Piece {
    fn push(&mut self, atom: Point, weight: f64, cell: Cell) {
        self.atoms.push(atom);
        self.weights.push(weight);
        self.cells.push(cell);
    }
}

fn mesh_primitive(part: &Primitive, dim: usize, count: usize, grading: Grading) -> Result<Piece> {
    let piece = match part {
        Primitive::Interval { a, b } => mesh_interval(*a, *b, count, grading),
        Primitive::Ball { center, radius } => {
            let c = to_point(center, dim);
            match dim {
                1 => mesh_interval(c[0] - radius, c[0] + radius, count, grading),
                2 => mesh_polar(c, 0.0, *radius, count, grading),
                _ => mesh_spherical(c, 0.0, *radius, count, grading),
            }
        }
        Primitive::Annulus {
            center,
            r_inner,
            r_outer,
        } => {
            let c = to_point(center, dim);
            if dim == 2 {
                mesh_polar(c, *r_inner, *r_outer, count, grading)
            } else {
                mesh_spherical(c, *r_inner, *r_outer, count, grading)
            }
        }
        Primitive::Sphere { center, radius } => {
            let c = to_point(center, dim);
            let axes = [*radius; 3];
            mesh_ellipsoid_surface(c, &axes[..dim], count)
        }
        Primitive::Ellipsoid {
            center,
            semi_axes,
            surface,
        } => {
            let c = to_point(center, dim);
            if *surface {
                mesh_ellipsoid_surface(c, semi_axes, count)
            } else {
                mesh_solid_ellipsoid(c, semi_axes, count, grading)?
            }
        }
    };
    Ok(piece)
}

/// Partition parameters `t_0 = 0 < ... < t_n = 1`.
fn interval_partition(n: usize, grading: Grading) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            match grading {
                Grading::Uniform => t,
                Grading::EndpointRefined => 0.5 * (1.0 - (PI * t).cos()),
            }
        })
        .collect()
}

fn mesh_interval(a: f64, b: f64, n: usize, grading: Grading) -> Piece {
    let len = b - a;
    let t = interval_partition(n, grading);
    let mut piece = Piece::default();
    for k in 0..n {
        // the last edge is pinned to b so widths telescope to b - a
        let lo = a + len * t[k];
        let hi = if k + 1 == n { b } else { a + len * t[k + 1] };
        piece.push([0.5 * (lo + hi), 0.0, 0.0], hi - lo, Cell::new(1, &[hi - lo]));
    }
    piece
}

/// Radial layer edges for a shell `[r_in, r_out]` with base spacing `h`.
fn radial_edges(r_in: f64, r_out: f64, layers: usize, h: f64, grading: Grading) -> Vec<f64> {
    let skin = SKIN_FRACTION * h;
    let (lo, hi) = match grading {
        Grading::Uniform => (r_in, r_out),
        Grading::EndpointRefined => (if r_in > 0.0 { r_in + skin } else { r_in }, r_out - skin),
    };
    let mut edges = Vec::with_capacity(layers + 3);
    if grading == Grading::EndpointRefined && r_in > 0.0 {
        edges.push(r_in);
    }
    for k in 0..=layers {
        edges.push(lo + (hi - lo) * k as f64 / layers as f64);
    }
    if grading == Grading::EndpointRefined {
        edges.push(r_out);
    }
    edges
}

/// Picks the layer count whose mesh size is closest to `count`; skin layers
/// make the size a non-monotone function of the base estimate.
fn closest_layering<F: Fn(usize) -> Piece>(base: usize, count: usize, build: F) -> Piece {
    let mut best: Option<Piece> = None;
    for layers in (base / 2).max(1)..=base + 1 {
        let piece = build(layers);
        let better = best
            .as_ref()
            .is_none_or(|b| piece.atoms.len().abs_diff(count) < b.atoms.len().abs_diff(count));
        if better {
            best = Some(piece);
        }
    }
    best.expect("at least one layering")
}

fn mesh_polar(c: Point, r_in: f64, r_out: f64, count: usize, grading: Grading) -> Piece {
    let width = r_out - r_in;
    let area = PI * (r_out * r_out - r_in * r_in);
    let base = ((count as f64 * width * width / area).sqrt().round() as usize).max(1);
    closest_layering(base, count, |layers| polar_layers(c, r_in, r_out, layers, grading))
}

fn polar_layers(c: Point, r_in: f64, r_out: f64, layers: usize, grading: Grading) -> Piece {
    let h = (r_out - r_in) / layers as f64;
    let edges = radial_edges(r_in, r_out, layers, h, grading);
    let mut piece = Piece::default();
    for (k, e) in edges.windows(2).enumerate() {
        let (r0, r1) = (e[0], e[1]);
        let rm = (0.5 * (r0 * r0 + r1 * r1)).sqrt();
        let m = ((2.0 * PI * rm / h).round() as usize).max(3);
        let cell_area = PI * (r1 * r1 - r0 * r0) / m as f64;
        let dr = r1 - r0;
        let offset = if k % 2 == 1 { 0.5 } else { 0.0 };
        for j in 0..m {
            let phi = 2.0 * PI * (j as f64 + 0.5 + offset) / m as f64;
            piece.push(
                [c[0] + rm * phi.cos(), c[1] + rm * phi.sin(), 0.0],
                cell_area,
                Cell::new(2, &[dr, cell_area / dr]),
            );
        }
    }
    piece
}

fn mesh_spherical(c: Point, r_in: f64, r_out: f64, count: usize, grading: Grading) -> Piece {
    let vol = 4.0 / 3.0 * PI * (r_out.powi(3) - r_in.powi(3));
    let h0 = (vol / count as f64).cbrt();
    let base = (((r_out - r_in) / h0).round() as usize).max(1);
    closest_layering(base, count, |layers| spherical_layers(c, r_in, r_out, layers, grading))
}

fn spherical_layers(c: Point, r_in: f64, r_out: f64, layers: usize, grading: Grading) -> Piece {
    let h = (r_out - r_in) / layers as f64;
    let edges = radial_edges(r_in, r_out, layers, h, grading);
    let mut piece = Piece::default();
    for (k, e) in edges.windows(2).enumerate() {
        let (r0, r1) = (e[0], e[1]);
        let dr = r1 - r0;
        let shell = 4.0 / 3.0 * PI * (r1.powi(3) - r0.powi(3));
        let rm = (0.5 * (r0.powi(3) + r1.powi(3))).cbrt();
        let m = ((shell / (dr * h * h)).round() as usize).max(4);
        let side = (shell / (m as f64 * dr)).sqrt();
        for u in fibonacci_sphere(m, k as f64) {
            piece.push(
                [c[0] + rm * u[0], c[1] + rm * u[1], c[2] + rm * u[2]],
                shell / m as f64,
                Cell::new(3, &[dr, side, side]),
            );
        }
    }
    piece
}

fn mesh_solid_ellipsoid(c: Point, axes: &[f64], count: usize, grading: Grading) -> Result<Piece> {
    let dim = axes.len();
    let unit = if dim == 2 {
        mesh_polar([0.0; 3], 0.0, 1.0, count, grading)
    } else {
        mesh_spherical([0.0; 3], 0.0, 1.0, count, grading)
    };
    let jac: f64 = axes.iter().product();
    let stretch = jac.powf(1.0 / dim as f64);
    let mut piece = Piece::default();
    for ((a, w), cell) in unit.atoms.iter().zip(&unit.weights).zip(&unit.cells) {
        let mut p = [0.0; 3];
        for i in 0..dim {
            p[i] = c[i] + axes[i] * a[i];
        }
        let mut cell = *cell;
        for wdt in cell.widths.iter_mut() {
            *wdt *= stretch;
        }
        piece.push(p, w * jac, cell);
    }
    Ok(piece)
}

/// Surface mesh of an ellipse (`dim = 2`) or ellipsoid (`dim = 3`) by mapping
/// an equal-measure mesh of the unit sphere through the semi-axes.
fn mesh_ellipsoid_surface(c: Point, axes: &[f64], count: usize) -> Piece {
    let mut piece = Piece::default();
    if axes.len() == 2 {
        let (a, b) = (axes[0], axes[1]);
        let dphi = 2.0 * PI / count as f64;
        for j in 0..count {
            let phi = dphi * (j as f64 + 0.5);
            let ds = dphi * (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt();
            piece.push(
                [c[0] + a * phi.cos(), c[1] + b * phi.sin(), 0.0],
                ds,
                Cell::new(1, &[ds]),
            );
        }
    } else {
        let (a, b, cz) = (axes[0], axes[1], axes[2]);
        let dw = 4.0 * PI / count as f64;
        for u in fibonacci_sphere(count, 0.0) {
            let stretch = a * b * cz * (u[0] * u[0] / (a * a) + u[1] * u[1] / (b * b) + u[2] * u[2] / (cz * cz)).sqrt();
            let area = dw * stretch;
            let side = area.sqrt();
            piece.push(
                [c[0] + a * u[0], c[1] + b * u[1], c[2] + cz * u[2]],
                area,
                Cell::new(2, &[side, side]),
            );
        }
    }
    piece
}

/// Fibonacci lattice of `n` unit vectors, rotated about the z-axis by `phase`.
pub fn fibonacci_sphere(n: usize, phase: f64) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = GOLDEN_ANGLE * i as f64 + phase;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Minimum pairwise distance between atoms of the mesh.
pub fn nearest_neighbor_separation(mesh: &Mesh) -> f64 {
    nearest_neighbor_distances(&mesh.atoms)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Distance from every atom to its nearest other atom, by a bidirectional
/// scan over the atoms sorted along the first coordinate.
fn nearest_neighbor_distances(atoms: &[Point]) -> Vec<f64> {
    let n = atoms.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| atoms[i][0].total_cmp(&atoms[j][0]));
    let mut best = vec![f64::INFINITY; n];
    for (pos, &i) in order.iter().enumerate() {
        let xi = atoms[i][0];
        let mut b = f64::INFINITY;
        for &j in &order[pos + 1..] {
            if atoms[j][0] - xi >= b {
                break;
            }
            b = b.min(dist(&atoms[i], &atoms[j]));
        }
        for &j in order[..pos].iter().rev() {
            if xi - atoms[j][0] >= b {
                break;
            }
            b = b.min(dist(&atoms[i], &atoms[j]));
        }
        best[i] = b;
    }
    best
}

pub fn to_point(v: &[f64], dim: usize) -> Point {
    let mut p = [0.0; 3];
    p[..dim].copy_from_slice(&v[..dim]);
    p
}

pub fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn dist(p: &Point, q: &Point) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    norm(&d)
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * PI / n as f64,
    }
}

/// Surface area `|S^{n-1}|` of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    // Ramanujan's second approximation
    let h = ((a - b) / (a + b)).powi(2);
    PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}
