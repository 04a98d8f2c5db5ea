//! Exact capacities, equilibrium densities and moments of centered balls,
//! used as oracles for the solver and as the ball side of moment comparisons.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::unit_sphere_area;
use crate::kernels::{KernelKind, KernelSpec};
use crate::moments::MomentOrder;
use crate::quadrature::{graded_toward_start, GaussLegendre};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin().abs()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn check_positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} needs a positive argument, got {x}")))
    }
}

/// `log Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    Ok(ln_gamma_unchecked(x))
}

pub fn gamma(x: f64) -> Result<f64> {
    Ok(log_gamma(x)?.exp())
}

pub fn beta(a: f64, b: f64) -> Result<f64> {
    check_positive(a, "beta")?;
    check_positive(b, "beta")?;
    Ok((ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b)).exp())
}

pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    let series = x2
        * (1.0 / 12.0
            - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 * (1.0 / 132.0)))));
    Ok(acc + x.ln() - 0.5 / x - series)
}

/// Which equilibrium problem a centered ball is solved for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallCase {
    /// `p = n - 2`, `n >= 3`: uniform measure on the boundary sphere.
    NewtonianCase,
    /// `p = n - 1` viewed in `R^{n+1}`; the logarithmic kernel when `n = 1`.
    CodimOneCase,
    /// Logarithmic kernel on the disk: uniform measure on the circle.
    LogDisk,
    /// `0 < p < n - 2`: also uniform measure on the boundary sphere.
    SubNewtonian(f64),
}

impl BallCase {
    /// The case matching a kernel on sets in `R^n`, if one has a closed form.
    pub fn for_kernel(n: usize, spec: &KernelSpec) -> Result<Self> {
        let nf = n as f64;
        let case = match spec.kind {
            KernelKind::Log if n == 1 => BallCase::CodimOneCase,
            KernelKind::Log if n == 2 => BallCase::LogDisk,
            KernelKind::Riesz(p) if n >= 3 && (p - (nf - 2.0)).abs() < 1e-12 => BallCase::NewtonianCase,
            KernelKind::Riesz(p) if n >= 2 && (p - (nf - 1.0)).abs() < 1e-12 => BallCase::CodimOneCase,
            KernelKind::Riesz(p) if n >= 3 && p > 0.0 && p < nf - 2.0 => BallCase::SubNewtonian(p),
            _ => {
                return Err(Error::Unsupported(format!(
                    "no closed-form ball for n = {n} with kernel {:?}",
                    spec.kind
                )))
            }
        };
        Ok(case)
    }

    /// Whether the ball's equilibrium measure is the uniform sphere measure.
    pub fn is_surface(&self) -> bool {
        !matches!(self, BallCase::CodimOneCase)
    }

    fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            BallCase::NewtonianCase => n >= 3,
            BallCase::CodimOneCase => n >= 1,
            BallCase::LogDisk => n == 2,
            BallCase::SubNewtonian(p) => n >= 3 && *p > 0.0 && *p < n as f64 - 2.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("{self:?} is not defined for n = {n}")))
        }
    }
}

/// A closed ball of radius `radius` centered at the origin of `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub dim: usize,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("bad ball: n = {dim}, R = {radius}")));
        }
        Ok(Self { dim, radius })
    }

    pub fn capacity(&self, case: BallCase) -> Result<f64> {
        ball_capacity(self.dim, case, self.radius)
    }

    pub fn moment(&self, case: BallCase, q: MomentOrder) -> Result<f64> {
        ball_moment(self.dim, case, q, self.radius)
    }
}

/// Riesz `p`-energy of the normalized surface measure on the unit sphere
/// `S^{n-1}`, for `0 < p < n - 1`.
pub fn sphere_riesz_energy(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    if n < 2 || !(p > 0.0 && p < nf - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sphere energy needs 0 < p < n - 1, got n = {n}, p = {p}"
        )));
    }
    let ln = (nf - 2.0 - p) * 2f64.ln() + ln_gamma_unchecked(0.5 * nf) + ln_gamma_unchecked(0.5 * (nf - 1.0 - p))
        - 0.5 * PI.ln()
        - ln_gamma_unchecked(nf - 1.0 - 0.5 * p);
    Ok(ln.exp())
}

pub fn ball_capacity(n: usize, case: BallCase, radius: f64) -> Result<f64> {
    case.validate(n)?;
    check_positive(radius, "ball_capacity")?;
    let unit = match case {
        BallCase::NewtonianCase | BallCase::LogDisk => 1.0,
        BallCase::CodimOneCase if n == 1 => 0.5,
        BallCase::CodimOneCase => {
            let nf = n as f64;
            let ln = ln_gamma_unchecked(0.5 * nf) - ln_gamma_unchecked(0.5) - ln_gamma_unchecked(0.5 * (nf + 1.0));
            (ln / (nf - 1.0)).exp()
        }
        BallCase::SubNewtonian(p) => sphere_riesz_energy(n, p)?.powf(-1.0 / p),
    };
    Ok(unit * radius)
}

/// Radius of the centered ball whose capacity is `cap_k`.
pub fn matched_ball_radius(cap_k: f64, n: usize, case: BallCase) -> Result<f64> {
    check_positive(cap_k, "matched_ball_radius")?;
    Ok(cap_k / ball_capacity(n, case, 1.0)?)
}

fn codim_one_constant(n: usize) -> f64 {
    let nf = n as f64;
    2.0 / (unit_sphere_area(n) * beta(0.5 * nf, 0.5).expect("positive arguments"))
}

/// Equilibrium density of the codimension-one problem on the ball of radius
/// `radius`, at `x` with `|x| < radius`.
pub fn ball_density_codim_one(n: usize, radius: f64, x: &[f64]) -> Result<f64> {
    if n == 0 || x.len() != n {
        return Err(Error::InvalidArgument(format!("point of dimension {} for n = {n}", x.len())));
    }
    check_positive(radius, "ball_density_codim_one")?;
    let s2 = x.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
    if s2 >= 1.0 {
        return Err(Error::InvalidArgument("density is only defined inside the ball".into()));
    }
    Ok(codim_one_constant(n) / (1.0 - s2).sqrt() * radius.powi(-(n as i32)))
}

pub fn ball_moment(n: usize, case: BallCase, q: MomentOrder, radius: f64) -> Result<f64> {
    case.validate(n)?;
    check_positive(radius, "ball_moment")?;
    if case.is_surface() {
        return Ok(match q {
            MomentOrder::Power(q) => radius.powf(q),
            MomentOrder::Log => radius.ln(),
        });
    }
    let nf = n as f64;
    match q {
        MomentOrder::Power(q) => {
            if q <= -nf {
                return Err(Error::DivergentMoment(format!(
                    "moment of order {q} diverges for the codimension-one density in dimension {n}"
                )));
            }
            Ok(radius.powf(q) * beta(0.5 * (nf + q), 0.5)? / beta(0.5 * nf, 0.5)?)
        }
        MomentOrder::Log => Ok(radius.ln() + codim_one_moment_quadrature(n, |r| r.ln())),
    }
}

/// Log-moment of the unit codimension-one density from the digamma identity,
/// an independent check on the quadrature.
pub fn codim_one_log_moment_exact(n: usize) -> Result<f64> {
    let nf = n as f64;
    Ok(0.5 * (digamma(0.5 * nf)? - digamma(0.5 * (nf + 1.0))?))
}

fn gauss24() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(24))
}

/// `int f(|x|) dmu` for the unit codimension-one density.
///
/// With `|x| = sin(phi)` the `(1 - r^2)^{-1/2}` weight is absorbed exactly
/// (the Chebyshev substitution); what remains is smooth apart from powers of
/// `sin(phi)` at `phi = 0`, which a geometrically graded Gauss-Legendre rule
/// resolves.
pub fn codim_one_moment_quadrature<F: Fn(f64) -> f64>(n: usize, f: F) -> f64 {
    let nf = n as f64;
    let scale = 2.0 / beta(0.5 * nf, 0.5).expect("positive arguments");
    scale
        * graded_toward_start(gauss24(), 0.0, 0.5 * PI, 40, 0.2, |phi| {
            let r = phi.sin();
            r.powf(nf - 1.0) * f(r)
        })
}
