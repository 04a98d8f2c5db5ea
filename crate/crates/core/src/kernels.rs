//! Riesz and logarithmic interaction kernels.
//!
//! Distances are Euclidean in the ambient space `R^m` (`dim_ambient`). A set
//! in `R^n` with `n < m` sits in the slice where the extra coordinates vanish,
//! so on the set itself ambient and intrinsic distances coincide.
//!
//! Diagonal entries of a kernel matrix are cell self-energies: the mean of
//! the kernel over two independent uniform points of one cell.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cell, Mesh, Point};
use crate::quadrature::{graded_toward_start, GaussLegendre};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `1 / |x - y|^p`
    Riesz(f64),
    /// `log(1 / |x - y|)`
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dim_ambient: usize,
}

impl KernelSpec {
    pub fn riesz(p: f64, dim_ambient: usize) -> Result<Self> {
        let spec = Self {
            kind: KernelKind::Riesz(p),
            dim_ambient,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn log(dim_ambient: usize) -> Self {
        Self {
            kind: KernelKind::Log,
            dim_ambient: dim_ambient.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_ambient == 0 {
            return Err(Error::InvalidKernel("ambient dimension must be >= 1".into()));
        }
        if let KernelKind::Riesz(p) = self.kind {
            if !(p > 0.0 && p < self.dim_ambient as f64) {
                return Err(Error::InvalidKernel(format!(
                    "Riesz exponent must satisfy 0 < p < {}, got {p}",
                    self.dim_ambient
                )));
            }
        }
        Ok(())
    }

    /// Riesz exponent, or 0 for the logarithmic kernel.
    pub fn exponent(&self) -> f64 {
        match self.kind {
            KernelKind::Riesz(p) => p,
            KernelKind::Log => 0.0,
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self.kind, KernelKind::Log)
    }

    /// Kernel as a function of distance; `+inf` at zero for both kinds.
    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        if r == 0.0 {
            return f64::INFINITY;
        }
        match self.kind {
            KernelKind::Riesz(p) => {
                if p == 1.0 {
                    r.recip()
                } else {
                    r.powf(-p)
                }
            }
            KernelKind::Log => -r.ln(),
        }
    }

    #[inline]
    pub fn value(&self, x: &Point, y: &Point) -> f64 {
        self.at_distance(crate::geometry::dist(x, y))
    }

    /// Self-energy of an isotropic cell: a segment of half-width
    /// `cell_radius`, a disk or a ball of radius `cell_radius`.
    pub fn self_energy(&self, cell_radius: f64, intrinsic_dim: usize) -> Result<f64> {
        if !(cell_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell radius must be positive, got {cell_radius}"
            )));
        }
        if !(1..=3).contains(&intrinsic_dim) {
            return Err(Error::InvalidArgument(format!(
                "cell dimension must be 1, 2 or 3, got {intrinsic_dim}"
            )));
        }
        self.check_integrable(intrinsic_dim)?;
        if intrinsic_dim == 1 {
            return Ok(self.segment_self_energy(2.0 * cell_radius));
        }
        let c = isotropic_constant(self.kind, intrinsic_dim);
        Ok(match self.kind {
            KernelKind::Riesz(p) => c * cell_radius.powf(-p),
            KernelKind::Log => c - cell_radius.ln(),
        })
    }

    /// Self-energy of a box cell with the given side lengths.
    pub fn cell_self_energy(&self, cell: &Cell) -> Result<f64> {
        if cell.is_point() {
            return Ok(f64::INFINITY);
        }
        self.check_integrable(cell.dim)?;
        let w = cell.widths;
        Ok(match cell.dim {
            1 => self.segment_self_energy(w[0]),
            2 => rectangle_mean(self.kind, w[0], w[1]),
            3 => box_mean(self.kind, w[0], w[1], w[2]),
            d => {
                return Err(Error::InvalidArgument(format!("unsupported cell dimension {d}")));
            }
        })
    }

    fn check_integrable(&self, cell_dim: usize) -> Result<()> {
        if let KernelKind::Riesz(p) = self.kind {
            if p >= cell_dim as f64 {
                return Err(Error::NonIntegrableKernel { p, cell_dim });
            }
        }
        Ok(())
    }

    fn segment_self_energy(&self, h: f64) -> f64 {
        match self.kind {
            KernelKind::Riesz(p) => 2.0 * h.powf(-p) / ((1.0 - p) * (2.0 - p)),
            KernelKind::Log => 1.5 - h.ln(),
        }
    }
}

/// `int_0^L r^k K(r) dr` for the radial factor of a kernel.
#[inline]
fn radial_moment(kind: KernelKind, k: i32, len: f64) -> f64 {
    let e = k as f64 + 1.0;
    match kind {
        KernelKind::Riesz(p) => len.powf(e - p) / (e - p),
        KernelKind::Log => len.powf(e) * (1.0 / (e * e) - len.ln() / e),
    }
}

fn gauss32() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(32))
}

fn gauss64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(64))
}

/// Mean kernel over two uniform points of an `a x b` rectangle.
///
/// The difference vector has density `(a - |s|)(b - |t|) / (ab)^2`; in polar
/// coordinates around the origin the radial integral is closed-form, leaving
/// a smooth angular integral over the two triangles of the quarter rectangle.
fn rectangle_mean(kind: KernelKind, a: f64, b: f64) -> f64 {
    let rule = gauss32();
    let mut total = 0.0;
    for (big_a, big_b) in [(a, b), (b, a)] {
        let top = big_b.atan2(big_a);
        total += rule.integrate(0.0, top, |th| {
            let (s, c) = th.sin_cos();
            let len = big_a / c;
            big_a * big_b * radial_moment(kind, 1, len)
                - (big_a * s + big_b * c) * radial_moment(kind, 2, len)
                + c * s * radial_moment(kind, 3, len)
        });
    }
    4.0 * total / (a * a * b * b)
}

/// Mean kernel over two uniform points of an `a0 x a1 x a2` box, split into
/// the three pyramids with apex at the origin over the far faces.
fn box_mean(kind: KernelKind, a0: f64, a1: f64, a2: f64) -> f64 {
    let rule = gauss32();
    let a = [a0, a1, a2];
    let mut total = 0.0;
    for f in 0..3 {
        let (o0, o1) = match f {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let us = graded_nodes(rule, a[o0], a[f]);
        let vs = graded_nodes(rule, a[o1], a[f]);
        for &(u, wu) in &us {
            for &(v, wv) in &vs {
                let mut d = [0.0; 3];
                d[f] = a[f];
                d[o0] = u;
                d[o1] = v;
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let e = [d[0] / len, d[1] / len, d[2] / len];
                // prod_i (a_i - r e_i) = c0 - c1 r + c2 r^2 - c3 r^3
                let c0 = a[0] * a[1] * a[2];
                let c1 = e[0] * a[1] * a[2] + a[0] * e[1] * a[2] + a[0] * a[1] * e[2];
                let c2 = e[0] * e[1] * a[2] + e[0] * a[1] * e[2] + a[0] * e[1] * e[2];
                let c3 = e[0] * e[1] * e[2];
                let radial = c0 * radial_moment(kind, 2, len) - c1 * radial_moment(kind, 3, len)
                    + c2 * radial_moment(kind, 4, len)
                    - c3 * radial_moment(kind, 5, len);
                total += wu * wv * radial * a[f] / len.powi(3);
            }
        }
    }
    8.0 * total / (a0 * a1 * a2).powi(2)
}

/// Gauss-Legendre nodes on `[0, len]` with panels shrinking geometrically
/// toward 0 until they are finer than `scale`, the apex height of a face.
fn graded_nodes(rule: &GaussLegendre, len: f64, scale: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut hi = len;
    while hi > 0.5 * scale {
        let lo = 0.25 * hi;
        out.extend(rule.mapped(lo, hi));
        hi = lo;
    }
    out.extend(rule.mapped(0.0, hi));
    out
}

/// Distance density of two uniform points in the unit disk (`dim = 2`) or
/// unit ball (`dim = 3`), supported on `[0, 2]`.
pub fn unit_distance_density(dim: usize, s: f64) -> f64 {
    match dim {
        2 => s / PI * (4.0 * (0.5 * s).acos() - s * (4.0 - s * s).max(0.0).sqrt()),
        3 => 3.0 / 16.0 * s * s * (2.0 - s).powi(2) * (s + 4.0),
        _ => panic!("distance density only tabulated for dimensions 2 and 3"),
    }
}

/// `c` such that the unit-radius isotropic cell has self-energy `c` (Riesz)
/// or `c` (log, at radius one).
fn isotropic_constant(kind: KernelKind, dim: usize) -> f64 {
    let rule = gauss64();
    let k = |s: f64| match kind {
        KernelKind::Riesz(p) => s.powf(-p),
        KernelKind::Log => -s.ln(),
    };
    let f = |s: f64| k(s) * unit_distance_density(dim, s);
    graded_toward_start(rule, 0.0, 1.0, 30, 0.2, f)
        + graded_toward_start(rule, 0.0, 1.0, 30, 0.2, |t| f(2.0 - t))
}

/// Dense symmetric kernel matrix of a mesh.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub spec: KernelSpec,
    pub mesh: Arc<Mesh>,
    pub data: Mat<f64>,
}

/// Largest mesh for which a dense matrix is assembled.
pub const MAX_DENSE_ATOMS: usize = 8192;

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.data[(i, i)]).collect()
    }

    /// Atoms that can never carry mass (infinite self-energy).
    pub fn barred(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.data[(i, i)].is_infinite()).collect()
    }

    /// `M w`, skipping zero weights so isolated points stay finite.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(w.len(), n);
        let mut out = vec![0.0; n];
        // the matrix is symmetric, so column j doubles as row j
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let col = self.data.col_as_slice(i);
            *o = col
                .iter()
                .zip(w)
                .filter(|(_, x)| **x != 0.0)
                .map(|(m, x)| m * x)
                .sum();
        });
        out
    }
}

/// Assembles the kernel matrix with cell self-energies on the diagonal.
pub fn kernel_matrix(spec: KernelSpec, mesh: Arc<Mesh>) -> Result<KernelMatrix> {
    spec.validate()?;
    if mesh.dim > spec.dim_ambient {
        return Err(Error::InvalidKernel(format!(
            "mesh lives in R^{} but the kernel's ambient space is R^{}",
            mesh.dim, spec.dim_ambient
        )));
    }
    let n = mesh.len();
    if n > MAX_DENSE_ATOMS {
        return Err(Error::InvalidMesh(format!(
            "{n} atoms exceeds the dense limit of {MAX_DENSE_ATOMS}"
        )));
    }
    let diag = cell_self_energies(&spec, &mesh)?;
    let mut data = Mat::<f64>::zeros(n, n);
    let atoms = &mesh.atoms;
    data.par_col_chunks_mut(1).enumerate().for_each(|(j, mut col)| {
        for i in 0..n {
            col[(i, 0)] = if i == j {
                diag[j]
            } else {
                spec.value(&atoms[i], &atoms[j])
            };
        }
    });
    Ok(KernelMatrix { spec, mesh, data })
}

/// Diagonal self-energies, computed once per distinct cell shape.
pub fn cell_self_energies(spec: &KernelSpec, mesh: &Mesh) -> Result<Vec<f64>> {
    let mut cache: Vec<(Cell, f64)> = Vec::new();
    let mut out = Vec::with_capacity(mesh.len());
    for cell in &mesh.cells {
        let hit = cache.iter().rev().find(|(c, _)| c == cell).map(|(_, v)| *v);
        let v = match hit {
            Some(v) => v,
            None => {
                let v = spec.cell_self_energy(cell)?;
                cache.push((*cell, v));
                if cache.len() > 64 {
                    cache.remove(0);
                }
                v
            }
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, Grading, Primitive, SetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mc_mean<F: FnMut(&mut ChaCha8Rng) -> [f64; 3]>(
        kind: KernelKind,
        samples: usize,
        mut draw: F,
    ) -> f64 {
        let spec = KernelSpec {
            kind,
            dim_ambient: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = 0.0;
        for _ in 0..samples {
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            acc += spec.value(&x, &y);
        }
        acc / samples as f64
    }

    fn disk_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
        let r = rng.random::<f64>().sqrt();
        let t = 2.0 * PI * rng.random::<f64>();
        [r * t.cos(), r * t.sin(), 0.0]
    }

    #[test]
    fn point_values() {
        let k = KernelSpec::riesz(1.0, 3).unwrap();
        assert_eq!(k.value(&[0.0; 3], &[1.0, 0.0, 0.0]), 1.0);
        let l = KernelSpec::log(2);
        assert_eq!(l.value(&[0.0; 3], &[1.0, 0.0, 0.0]), 0.0);
        let k2 = KernelSpec::riesz(2.0, 3).unwrap();
        assert!((k2.at_distance(0.5) - 4.0).abs() < 1e-15);
        assert_eq!(k.at_distance(0.0), f64::INFINITY);
        assert_eq!(l.at_distance(0.0), f64::INFINITY);
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(KernelSpec::riesz(3.0, 3).is_err());
        assert!(KernelSpec::riesz(0.0, 3).is_err());
        let k = KernelSpec::riesz(1.0, 3).unwrap();
        assert!(matches!(
            k.self_energy(0.1, 1),
            Err(Error::NonIntegrableKernel { .. })
        ));
    }

    #[test]
    fn log_segment_self_energy() {
        let l = KernelSpec::log(2);
        // unit-width cell: double integral of log 1/|s-t| over the unit square
        assert!((l.self_energy(0.5, 1).unwrap() - 1.5).abs() < 1e-15);
        let h: f64 = 0.013;
        assert!((l.self_energy(h / 2.0, 1).unwrap() - (1.5 - h.ln())).abs() < 1e-13);
    }

    // Monte-Carlo oracle, 10^6 pairs from the unit disk
    const MC_DISK_RIESZ1: f64 = 1.6943;

    #[test]
    fn disk_constant_matches_monte_carlo() {
        let mc = mc_mean(KernelKind::Riesz(1.0), 1_000_000, disk_point);
        assert!((mc - MC_DISK_RIESZ1).abs() < 2e-3, "mc {mc}");
        let k = KernelSpec::riesz(1.0, 3).unwrap();
        let c = k.self_energy(1.0, 2).unwrap();
        // MC standard error is a few 1e-3 for this heavy-tailed integrand
        assert!((c - mc).abs() < 1e-2, "quadrature {c} vs mc {mc}");
        assert!((c - 16.0 / (3.0 * PI)).abs() < 1e-10);
        let h = 0.37;
        assert!((k.self_energy(h, 2).unwrap() - c / h).abs() < 1e-12);
    }

    #[test]
    fn ball_and_log_disk_constants() {
        let k = KernelSpec::riesz(1.0, 3).unwrap();
        assert!((k.self_energy(1.0, 3).unwrap() - 1.2).abs() < 1e-10);
        let l = KernelSpec::log(2);
        let mc = mc_mean(KernelKind::Log, 400_000, disk_point);
        assert!((l.self_energy(1.0, 2).unwrap() - mc).abs() < 5e-3);
    }

    #[test]
    fn box_means_match_monte_carlo() {
        for kind in [KernelKind::Riesz(1.0), KernelKind::Riesz(0.5), KernelKind::Log] {
            let (a, b) = (0.3, 0.05);
            let mc = mc_mean(kind, 400_000, |r| [a * r.random::<f64>(), b * r.random::<f64>(), 0.0]);
            let q = rectangle_mean(kind, a, b);
            assert!((q - mc).abs() < 0.01 * q.abs().max(1.0), "{kind:?} rect {q} vs {mc}");
            let (a, b, c) = (0.2, 0.2, 0.04);
            let mc = mc_mean(kind, 400_000, |r| {
                [a * r.random::<f64>(), b * r.random::<f64>(), c * r.random::<f64>()]
            });
            let q = box_mean(kind, a, b, c);
            assert!((q - mc).abs() < 0.01 * q.abs().max(1.0), "{kind:?} box {q} vs {mc}");
        }
        // unit cube mean inverse distance
        assert!((box_mean(KernelKind::Riesz(1.0), 1.0, 1.0, 1.0) - 1.882_312_644).abs() < 1e-8);
    }

    #[test]
    fn thin_box_approaches_rectangle() {
        let k = KernelKind::Riesz(1.0);
        let flat = box_mean(k, 0.1, 0.1, 1e-6);
        let rect = rectangle_mean(k, 0.1, 0.1);
        assert!((flat / rect - 1.0).abs() < 1e-4, "{flat} vs {rect}");
    }

    #[test]
    fn two_atom_log_matrix() {
        let cells = vec![Cell { widths: [0.5, 0.0, 0.0], dim: 1 }; 2];
        let mesh = Mesh::from_parts(1, vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![0.5, 0.5], cells).unwrap();
        let m = kernel_matrix(KernelSpec::log(2), Arc::new(mesh)).unwrap();
        assert!((m.get(0, 1) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn matrix_symmetric_and_diagonal_dominates() {
        let spec = SetSpec::new(
            2,
            vec![Primitive::Ball { center: vec![0.1, 0.0], radius: 1.0 }],
        )
        .unwrap();
        let mesh = Arc::new(build_mesh(&spec, 400, Grading::EndpointRefined).unwrap());
        for ks in [KernelSpec::riesz(1.0, 3).unwrap(), KernelSpec::log(2)] {
            let m = kernel_matrix(ks, mesh.clone()).unwrap();
            for i in 0..m.len() {
                let mut nearest = f64::NEG_INFINITY;
                for j in 0..m.len() {
                    assert_eq!(m.get(i, j), m.get(j, i));
                    if i != j {
                        nearest = nearest.max(m.get(i, j));
                    }
                }
                assert!(m.get(i, i) > nearest, "row {i}");
            }
        }
    }

    #[test]
    fn arcsine_weighted_row_sums_are_log2() {
        let spec = SetSpec::centered_ball(1, 1.0);
        let mesh = Arc::new(build_mesh(&spec, 500, Grading::Uniform).unwrap());
        let m = kernel_matrix(KernelSpec::log(2), mesh.clone()).unwrap();
        // arcsine mass of each cell from the closed-form CDF
        let cdf = |x: f64| 0.5 + x.clamp(-1.0, 1.0).asin() / PI;
        let w: Vec<f64> = mesh
            .atoms
            .iter()
            .zip(&mesh.cells)
            .map(|(a, c)| cdf(a[0] + 0.5 * c.widths[0]) - cdf(a[0] - 0.5 * c.widths[0]))
            .collect();
        let u = m.apply(&w);
        for (i, ui) in u.iter().enumerate().take(450).skip(50) {
            assert!((ui / 2f64.ln() - 1.0).abs() < 0.02, "row {i}: {ui}");
        }
    }
}
