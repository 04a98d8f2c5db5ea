//! Potentials of sets in `R^n` viewed inside `R^{n+1}`, the slice-ball
//! integral operator `J`, its radial partner `delta_star`, and the
//! moment-difference formula that ties them together.
//!
//! Points of `R^{n+1}` are written `(x, z)` with `x` in `R^n`; the set lies
//! in the slice `z = 0`. The lifted kernel is the Newtonian one of
//! `R^{n+1}`: `|.|^{-(n-1)}` for `n >= 2` and `log 1/|.|` for `n = 1`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_sphere, norm, unit_sphere_area, Point};
use crate::kernels::{KernelKind, KernelSpec};
use crate::moments::{moment_of, MomentOrder};
use crate::quadrature::{adaptive_simpson, graded_toward_start, GaussLegendre};

/// Equilibrium potential of a solved set, optionally dilated by `scale`.
#[derive(Debug, Clone)]
pub struct LiftedPotential {
    pub source: Arc<EquilibriumResult>,
    pub scale: f64,
    n: usize,
    kernel: KernelSpec,
}

/// The Newtonian kernel of `R^{n+1}`.
pub fn lifted_kernel(n: usize) -> Result<KernelSpec> {
    match n {
        0 => Err(Error::InvalidArgument("dimension must be at least 1".into())),
        1 => Ok(KernelSpec::log(2)),
        _ => KernelSpec::riesz(n as f64 - 1.0, n + 1),
    }
}

/// `a_n`, the constant of the fundamental solution in `R^{n+1}`.
pub fn a_n(n: usize) -> f64 {
    if n == 1 {
        1.0 / (2.0 * PI)
    } else {
        1.0 / ((n as f64 - 1.0) * unit_sphere_area(n + 1))
    }
}

/// `b_n` in `d/dz u = -b_n z int |(x, z) - y|^{-(n+1)} dmu(y)`.
pub fn b_n(n: usize) -> f64 {
    if n == 1 {
        1.0
    } else {
        n as f64 - 1.0
    }
}

impl LiftedPotential {
    pub fn new(source: Arc<EquilibriumResult>) -> Result<Self> {
        Self::scaled(source, 1.0)
    }

    /// Potential of the solved measure pushed forward by `x -> scale x`.
    pub fn scaled(source: Arc<EquilibriumResult>, scale: f64) -> Result<Self> {
        let n = source.measure.mesh.dim;
        let kernel = lifted_kernel(n)?;
        if source.kernel.kind != kernel.kind {
            return Err(Error::InvalidKernel(format!(
                "a set in R^{n} must be solved with {:?} to lift into R^{}",
                kernel.kind,
                n + 1
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            source,
            scale,
            n,
            kernel,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn circumradius(&self) -> f64 {
        self.scale * self.source.measure.mesh.circumradius()
    }

    fn atoms(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        let s = self.scale;
        self.source
            .measure
            .mesh
            .atoms
            .iter()
            .zip(&self.source.measure.w)
            .filter(|(_, w)| **w > 0.0)
            .map(move |(a, w)| ([s * a[0], s * a[1], s * a[2]], *w))
    }

    fn scaled_self_energy(&self, i: usize) -> f64 {
        let e = self.source.self_energy[i];
        match self.kernel.kind {
            KernelKind::Riesz(p) => e * self.scale.powf(-p),
            KernelKind::Log => e - self.scale.ln(),
        }
    }

    /// Lifted point `(x, z)` in ambient coordinates.
    pub fn lift(&self, x: &[f64], z: f64) -> Point {
        let mut p = [0.0; 3];
        p[..self.n].copy_from_slice(&x[..self.n]);
        p[self.n] = z;
        p
    }

    /// Mean of the moments of the measure, dilation included.
    pub fn moment(&self, q: MomentOrder) -> Result<f64> {
        let m = moment_of(&self.source.measure, q)?;
        Ok(match q {
            MomentOrder::Power(q) => self.scale.powf(q) * m,
            MomentOrder::Log => self.scale.ln() + m,
        })
    }
}

/// `u(x, z) = sum_i w_i K((x, z) - (a_i, 0))`; at an atom its cell
/// self-energy stands in for the singular term.
pub fn lifted_potential_value(lp: &LiftedPotential, x: &[f64], z: f64) -> f64 {
    let p = lp.lift(x, z);
    let s = lp.scale;
    let mut u = 0.0;
    for (i, (a, w)) in lp.source.measure.mesh.atoms.iter().zip(&lp.source.measure.w).enumerate() {
        if *w == 0.0 {
            continue;
        }
        let d = ((p[0] - s * a[0]).powi(2) + (p[1] - s * a[1]).powi(2) + (p[2] - s * a[2]).powi(2)).sqrt();
        u += w * if d == 0.0 {
            lp.scaled_self_energy(i)
        } else {
            lp.kernel.at_distance(d)
        };
    }
    u
}

/// `d/dz u(x, z)`, which is negative for `z > 0`.
pub fn lifted_potential_dz(lp: &LiftedPotential, x: &[f64], z: f64) -> f64 {
    let p = lp.lift(x, z);
    let e = (lp.n + 1) as i32;
    let sum: f64 = lp
        .atoms()
        .map(|(a, w)| {
            let d = ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2) + (p[2] - a[2]).powi(2)).sqrt();
            w / d.powi(e)
        })
        .sum();
    -b_n(lp.n) * z * sum
}

/// Mean of `u` over the sphere of radius `r` about the origin of `R^{n+1}`,
/// using an equal-weight lattice of `nodes` points.
pub fn spherical_mean(lp: &LiftedPotential, r: f64, nodes: usize) -> Result<f64> {
    if !(r > 0.0) || nodes == 0 {
        return Err(Error::InvalidArgument("radius and node count must be positive".into()));
    }
    if r <= lp.circumradius() {
        warn!(
            "sphere of radius {r} does not enclose the set (circumradius {})",
            lp.circumradius()
        );
    }
    let pts: Vec<(Vec<f64>, f64)> = match lp.n {
        1 => (0..nodes)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / nodes as f64;
                (vec![r * t.cos()], r * t.sin())
            })
            .collect(),
        2 => fibonacci_sphere(nodes, 0.0)
            .into_iter()
            .map(|u| (vec![r * u[0], r * u[1]], r * u[2]))
            .collect(),
        n => return Err(Error::Unsupported(format!("spherical means for n = {n}"))),
    };
    let total: f64 = pts
        .par_iter()
        .map(|(x, z)| lifted_potential_value(lp, x, *z))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / nodes as f64)
}

/// `int_{-rho}^{rho} log 1/|(x - a, z)| dx`, exactly.
fn log_segment_integral(rho: f64, z: f64, a: f64) -> f64 {
    let z = z.abs();
    let f = |t: f64| {
        if z == 0.0 {
            if t == 0.0 {
                0.0
            } else {
                t * (t * t).ln() - 2.0 * t
            }
        } else {
            t * (t * t + z * z).ln() - 2.0 * t + 2.0 * z * (t / z).atan()
        }
    };
    -0.5 * (f(rho - a) - f(-rho - a))
}

fn rule(nodes: usize) -> Arc<GaussLegendre> {
    static CACHE: OnceLock<std::sync::Mutex<Vec<Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("quadrature cache");
    if let Some(r) = guard.iter().find(|r| r.nodes.len() == nodes) {
        return r.clone();
    }
    let r = Arc::new(GaussLegendre::new(nodes));
    guard.push(r.clone());
    r
}

/// `J f (rho, z)` for a field on `R^{n+1}` given as `f(x, z)`, by Gauss-
/// Legendre on the segment (`n = 1`) or a polar product rule (`n = 2`).
pub fn j_of_field<F: Fn(&[f64], f64) -> f64>(n: usize, f: F, rho: f64, z: f64, nodes: usize) -> Result<f64> {
    if rho <= 0.0 {
        return Ok(0.0);
    }
    let gl = rule(nodes);
    match n {
        1 => Ok(gl.integrate(-rho, rho, |x| f(&[x], z))),
        2 => {
            let m = 2 * nodes;
            let mut total = 0.0;
            for (s, ws) in gl.mapped(0.0, rho) {
                let mut ring = 0.0;
                for k in 0..m {
                    let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    ring += f(&[s * t.cos(), s * t.sin()], z);
                }
                total += ws * s * ring * 2.0 * PI / m as f64;
            }
            Ok(total)
        }
        _ => Err(Error::Unsupported(format!("J operator for n = {n}"))),
    }
}

/// `J u (rho, z)` for one lifted potential. Exact per atom for `n = 1`.
pub fn j_potential(lp: &LiftedPotential, rho: f64, z: f64, quad_nodes: usize) -> Result<f64> {
    let z = z.abs();
    if rho <= 0.0 {
        return Ok(0.0);
    }
    match lp.n {
        1 => Ok(lp.atoms().map(|(a, w)| w * log_segment_integral(rho, z, a[0])).sum()),
        2 => {
            // the slice through the set needs more nodes
            let nodes = if z == 0.0 { 2 * quad_nodes } else { quad_nodes };
            j_of_field(2, |x, zz| lifted_potential_value(lp, x, zz), rho, z, nodes)
        }
        n => Err(Error::Unsupported(format!("J operator for n = {n}"))),
    }
}

/// `J(v - u)(rho, z)`; even in `z` by construction.
pub fn j_value(v: &LiftedPotential, u: &LiftedPotential, rho: f64, z: f64, quad_nodes: usize) -> Result<f64> {
    if v.n != u.n {
        return Err(Error::InvalidArgument("potentials live in different dimensions".into()));
    }
    Ok(j_potential(v, rho, z, quad_nodes)? - j_potential(u, rho, z, quad_nodes)?)
}

/// Samples of `J(v - u)` on a tensor grid with its minimum.
#[derive(Debug, Clone, Serialize)]
pub struct JGrid {
    pub r_nodes: Vec<f64>,
    pub z_nodes: Vec<f64>,
    /// `values[i][j]` at `(r_nodes[i], z_nodes[j])`.
    pub values: Vec<Vec<f64>>,
    pub min_value: f64,
    pub min_location: (f64, f64),
}

impl JGrid {
    /// Largest pointwise difference from another scan on the same grid.
    pub fn max_difference(&self, other: &JGrid) -> Result<f64> {
        if self.r_nodes != other.r_nodes || self.z_nodes != other.z_nodes {
            return Err(Error::InvalidArgument("grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Uniform nodes `0, h, ..., max`.
pub fn uniform_nodes(max: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![0.0];
    }
    (0..count).map(|k| max * k as f64 / (count - 1) as f64).collect()
}

/// Scans `J(v - u)` over `[0, r_max] x [0, z_max]` with `nr x nz` nodes.
pub fn jgrid_scan(
    v: &LiftedPotential,
    u: &LiftedPotential,
    r_max: f64,
    z_max: f64,
    nr: usize,
    nz: usize,
    quad_nodes: usize,
) -> Result<JGrid> {
    if nr < 2 || nz < 2 || !(r_max > 0.0) || !(z_max > 0.0) {
        return Err(Error::InvalidArgument("grid needs at least 2x2 nodes and positive extents".into()));
    }
    let r_nodes = uniform_nodes(r_max, nr);
    let z_nodes = uniform_nodes(z_max, nz);
    let cells: Vec<(usize, usize)> = (0..nr).flat_map(|i| (0..nz).map(move |j| (i, j))).collect();
    let flat = cells
        .par_iter()
        .map(|&(i, j)| j_value(v, u, r_nodes[i], z_nodes[j], quad_nodes))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<Vec<f64>> = flat.chunks(nz).map(|c| c.to_vec()).collect();
    let mut min_value = f64::INFINITY;
    let mut min_location = (0.0, 0.0);
    for (i, row) in values.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            if *x < min_value {
                min_value = *x;
                min_location = (r_nodes[i], z_nodes[j]);
            }
        }
    }
    Ok(JGrid {
        r_nodes,
        z_nodes,
        values,
        min_value,
        min_location,
    })
}

/// `delta_star w = w_rr - ((n - 1) / r) w_r + w_zz` by centered differences
/// on a uniform lattice; the result covers interior nodes only, so entry
/// `[i][j]` belongs to `(r[i + 1], z[j + 1])`.
pub fn delta_star_apply(n: usize, w: &[Vec<f64>], r: &[f64], z: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (nr, nz) = (r.len(), z.len());
    if nr < 3 || nz < 3 || w.len() != nr || w.iter().any(|row| row.len() != nz) {
        return Err(Error::InvalidArgument("need a lattice of at least 3x3 samples".into()));
    }
    let hr = r[1] - r[0];
    let hz = z[1] - z[0];
    let c = n as f64 - 1.0;
    let mut out = vec![vec![0.0; nz - 2]; nr - 2];
    for i in 1..nr - 1 {
        if r[i] <= 0.0 {
            return Err(Error::InvalidArgument("interior nodes need r > 0".into()));
        }
        for j in 1..nz - 1 {
            let w_rr = (w[i + 1][j] - 2.0 * w[i][j] + w[i - 1][j]) / (hr * hr);
            let w_r = (w[i + 1][j] - w[i - 1][j]) / (2.0 * hr);
            let w_zz = (w[i][j + 1] - 2.0 * w[i][j] + w[i][j - 1]) / (hz * hz);
            out[i - 1][j - 1] = w_rr - c / r[i] * w_r + w_zz;
        }
    }
    Ok(out)
}

/// Maximum of `|delta_star J f - J (Laplacian f)|` over the interior of the
/// lattice with spacing `h` covering `[r0, r1] x [z0, z1]`.
pub fn commutation_check<F, L>(
    n: usize,
    field: F,
    laplacian: L,
    r_range: (f64, f64),
    z_range: (f64, f64),
    h: f64,
) -> Result<f64>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
    L: Fn(&[f64], f64) -> f64 + Sync,
{
    if !(h > 0.0) || r_range.0 <= 0.0 {
        return Err(Error::InvalidArgument("spacing must be positive and the lattice must avoid r = 0".into()));
    }
    let nr = ((r_range.1 - r_range.0) / h).round() as usize + 1;
    let nz = ((z_range.1 - z_range.0) / h).round() as usize + 1;
    let r: Vec<f64> = (0..nr).map(|k| r_range.0 + h * k as f64).collect();
    let z: Vec<f64> = (0..nz).map(|k| z_range.0 + h * k as f64).collect();
    const NODES: usize = 24;
    let w = r
        .par_iter()
        .map(|&ri| z.iter().map(|&zj| j_of_field(n, &field, ri, zj, NODES)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let ds = delta_star_apply(n, &w, &r, &z)?;
    let mut worst: f64 = 0.0;
    for i in 1..nr - 1 {
        for j in 1..nz - 1 {
            let rhs = j_of_field(n, &laplacian, r[i], z[j], NODES)?;
            worst = worst.max((ds[i - 1][j - 1] - rhs).abs());
        }
    }
    Ok(worst)
}

/// Defects at spacings `h` and `h / 2` and the observed order.
pub fn commutation_order<F, L>(
    n: usize,
    field: F,
    laplacian: L,
    r_range: (f64, f64),
    z_range: (f64, f64),
    h: f64,
) -> Result<(f64, f64, f64)>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
    L: Fn(&[f64], f64) -> f64 + Sync,
{
    let coarse = commutation_check(n, &field, &laplacian, r_range, z_range, h)?;
    let fine = commutation_check(n, &field, &laplacian, r_range, z_range, 0.5 * h)?;
    Ok((coarse, fine, (coarse / fine).log2()))
}

/// Radial profile `Phi` of a moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSpec {
    Power(f64),
    Log,
}

impl PhiSpec {
    fn order(&self) -> MomentOrder {
        match self {
            PhiSpec::Power(q) => MomentOrder::Power(*q),
            PhiSpec::Log => MomentOrder::Log,
        }
    }

    /// `Psi = Phi'' + (n / r) Phi'`, the Laplacian of `Phi(|.|)` in `R^{n+1}`.
    pub fn psi(&self, n: usize, r: f64) -> f64 {
        let nf = n as f64;
        match self {
            PhiSpec::Power(q) => q * (q + nf - 1.0) * r.powf(q - 2.0),
            PhiSpec::Log => (nf - 1.0) / (r * r),
        }
    }

    pub fn psi_prime(&self, n: usize, r: f64) -> f64 {
        let nf = n as f64;
        match self {
            PhiSpec::Power(q) => q * (q + nf - 1.0) * (q - 2.0) * r.powf(q - 3.0),
            PhiSpec::Log => -2.0 * (nf - 1.0) / (r * r * r),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            PhiSpec::Power(q) if *q > 0.0 && *q <= 2.0 => Ok(()),
            PhiSpec::Log if n >= 2 => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "{self:?} is outside the admissible class for n = {n} (powers 0 < q <= 2, or log with n >= 2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct JQuadrature {
    /// Gauss-Legendre nodes per slice panel and per J evaluation.
    pub nodes: usize,
    /// Absolute tolerance of the outer adaptive integral.
    pub outer_tol: f64,
    /// `R` for the formula; defaults to twice the larger circumradius.
    pub big_r: Option<f64>,
}

impl Default for JQuadrature {
    fn default() -> Self {
        Self {
            nodes: 64,
            outer_tol: 1e-9,
            big_r: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentDiffDual {
    /// Moment of `K` minus moment of the ball, from the measures directly.
    pub direct: f64,
    /// The same difference through `J` on slices of `R^{n+1}` balls.
    pub via_j: f64,
    /// For `q = 2`, the one-term formula with ball integrals from
    /// spherical means.
    pub remark: Option<f64>,
    pub a_n: f64,
    pub big_r: f64,
    pub rel_discrepancy: f64,
}

/// `int_{B^{n+1}(r)} (v - u)` through `J` on horizontal slices.
pub fn ball_integral_via_j(v: &LiftedPotential, u: &LiftedPotential, r: f64, nodes: usize) -> Result<f64> {
    if r <= 0.0 {
        return Ok(0.0);
    }
    // z = r sin(t); the slice through the set at t = 0 is the rough spot
    let gl = rule(nodes.clamp(8, 64));
    let mut err = None;
    let total = graded_toward_start(&gl, 0.0, 0.5 * PI, 6, 0.25, |t| {
        let (s, c) = t.sin_cos();
        match j_value(v, u, r * c, r * s, nodes) {
            Ok(j) => j * r * c,
            Err(e) => {
                err = Some(e);
                0.0
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(2.0 * total),
    }
}

/// `int_{B^{n+1}(r)} K((x, z) - (a, 0))` in closed form: the sphere mean of
/// the Newtonian kernel about a point `a` is `K(max(rho, |a|))`.
fn kernel_ball_integral(n: usize, a: f64, r: f64) -> f64 {
    let area = unit_sphere_area(n + 1);
    let nf = n as f64;
    let k = |t: f64| if n == 1 { -t.ln() } else { t.powf(1.0 - nf) };
    let inner = a.min(r);
    let near = inner.powf(nf + 1.0) / (nf + 1.0) * if inner > 0.0 { k(a) } else { 0.0 };
    let far = if r <= a {
        0.0
    } else if n == 1 {
        // int_a^r t log(1/t) dt
        let g = |t: f64| if t == 0.0 { 0.0 } else { t * t * (0.25 - 0.5 * t.ln()) };
        g(r) - g(a)
    } else {
        // int_a^r t^n t^{1-n} dt
        0.5 * (r * r - a * a)
    };
    area * (near + far)
}

/// `int_{B^{n+1}(r)} (v - u)` from per-atom spherical means.
pub fn ball_integral_exact(v: &LiftedPotential, u: &LiftedPotential, r: f64) -> f64 {
    let n = v.n;
    let part = |lp: &LiftedPotential| -> f64 { lp.atoms().map(|(a, w)| w * kernel_ball_integral(n, norm(&a), r)).sum() };
    part(v) - part(u)
}

/// Moment difference `int Phi dmu - int Phi dnu` evaluated directly and
/// through the ball-integral representation.
pub fn moment_difference_via_j(
    u: &LiftedPotential,
    v: &LiftedPotential,
    phi: PhiSpec,
    quad: &JQuadrature,
) -> Result<MomentDiffDual> {
    let n = u.n;
    if v.n != n {
        return Err(Error::InvalidArgument("potentials live in different dimensions".into()));
    }
    phi.check(n)?;
    let contain = u.circumradius().max(v.circumradius());
    let big_r = quad.big_r.unwrap_or(2.0 * contain);
    if big_r <= contain {
        return Err(Error::InvalidArgument(format!(
            "R = {big_r} must exceed both circumradii ({contain})"
        )));
    }
    let direct = u.moment(phi.order())? - v.moment(phi.order())?;
    let an = a_n(n);
    let i_big = ball_integral_via_j(v, u, big_r, quad.nodes)?;
    let outer = match phi {
        PhiSpec::Power(2.0) => 0.0,
        _ => {
            // r = R t^3 flattens the r^{q-1} behaviour at the origin
            let mut err = None;
            let val = adaptive_simpson(0.0, 1.0, quad.outer_tol, 18, |t| {
                if t == 0.0 {
                    return 0.0;
                }
                let r = big_r * t * t * t;
                match ball_integral_via_j(v, u, r, quad.nodes) {
                    Ok(i) => phi.psi_prime(n, r) * i * 3.0 * big_r * t * t,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            val
        }
    };
    let via_j = an * (phi.psi(n, big_r) * i_big - outer);
    let remark = match phi {
        PhiSpec::Power(2.0) => Some(2.0 * (n as f64 + 1.0) * an * ball_integral_exact(v, u, big_r)),
        _ => None,
    };
    let scale = u.moment(phi.order())?.abs().max(v.moment(phi.order())?.abs());
    let floor = 1e-9 * scale.max(1e-300);
    Ok(MomentDiffDual {
        direct,
        via_j,
        remark,
        a_n: an,
        big_r,
        rel_discrepancy: (direct - via_j).abs() / direct.abs().max(floor),
    })
}
