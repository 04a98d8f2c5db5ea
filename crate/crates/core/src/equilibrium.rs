//! Minimization of the discrete energy `w^T M w` over the probability simplex.

use std::collections::HashSet;
use std::sync::Arc;

use faer::prelude::*;
use faer::Mat;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};
use crate::kernels::{KernelMatrix, KernelSpec};

/// Probability weights on the atoms of a mesh.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    pub mesh: Arc<Mesh>,
    pub w: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(mesh: Arc<Mesh>, w: Vec<f64>) -> Result<Self> {
        if w.len() != mesh.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a mesh of {} atoms",
                w.len(),
                mesh.len()
            )));
        }
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { mesh, w })
    }

    /// Cell measures normalized to a probability vector.
    pub fn proportional_to_cells(mesh: Arc<Mesh>) -> Self {
        let total = mesh.total_weight();
        let w = mesh.weights.iter().map(|x| x / total).collect();
        Self { mesh, w }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn atoms(&self) -> &[Point] {
        &self.mesh.atoms
    }

    /// Indices with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.w[i] > 0.0).collect()
    }
}

/// Half the `l1` distance between two weight vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    #[default]
    #[serde(alias = "active-set")]
    ActiveSet,
    #[serde(alias = "pgd", alias = "projected-gradient")]
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Bound on the KKT residual, relative to `max(|energy|, 1)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::ActiveSet,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub measure: DiscreteMeasure,
    pub kernel: KernelSpec,
    pub energy: f64,
    pub capacity: f64,
    pub kkt_residual: f64,
    pub active_support_fraction: f64,
    pub iterations: usize,
    /// Method that produced the weights, after any fallback.
    pub method: SolverMethod,
    /// `(M w)_i`, the discrete potential at each atom.
    pub atom_potential: Vec<f64>,
    /// Cell self-energies, used when the potential is evaluated at an atom.
    pub self_energy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrostmanReport {
    pub max_potential_on_support: f64,
    pub min_potential_on_support: f64,
    pub energy: f64,
    pub max_violation: f64,
    pub regular_fraction: f64,
}

pub fn discrete_energy(m: &KernelMatrix, w: &[f64]) -> f64 {
    dot(w, &m.apply(w))
}

pub fn capacity_from_energy(energy: f64, spec: &KernelSpec) -> f64 {
    match spec.kind {
        crate::kernels::KernelKind::Riesz(p) => energy.powf(-1.0 / p),
        crate::kernels::KernelKind::Log => (-energy).exp(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scaled KKT residual of a simplex point with gradient-half `g = M w`.
pub fn kkt_residual(w: &[f64], g: &[f64]) -> f64 {
    kkt_residual_masked(w, g, &vec![false; w.len()])
}

/// As [`kkt_residual`], ignoring atoms that are barred from the support.
fn kkt_residual_masked(w: &[f64], g: &[f64], barred: &[bool]) -> f64 {
    let lambda = dot(w, g);
    let mut worst: f64 = 0.0;
    for ((wi, gi), b) in w.iter().zip(g).zip(barred) {
        if *b {
            continue;
        }
        let r = if *wi > 0.0 {
            (gi - lambda).abs()
        } else {
            (lambda - gi).max(0.0)
        };
        worst = worst.max(r);
    }
    worst / lambda.abs().max(1.0)
}

pub fn solve_equilibrium(m: &KernelMatrix, opts: &SolverOptions) -> Result<EquilibriumResult> {
    let n = m.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty kernel matrix".into()));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "solver tolerance and iteration limit must be positive".into(),
        ));
    }
    if n == 1 {
        // a single cell keeps its self-energy, so the capacity stays finite
        return Ok(finish(m, vec![1.0], 0, SolverMethod::ActiveSet));
    }
    match opts.method {
        SolverMethod::ActiveSet => match active_set(m, opts) {
            Ok(r) => Ok(r),
            Err(Error::SingularSystem(k)) => {
                warn!("active set hit a singular system on {k} atoms, switching to projected gradient");
                projected_gradient(m, opts, None)
            }
            Err(Error::NotConverged { best, .. }) => {
                warn!("active set cycled, switching to projected gradient");
                projected_gradient(m, opts, Some(best.measure.w.clone()))
            }
            Err(e) => Err(e),
        },
        SolverMethod::ProjectedGradient => projected_gradient(m, opts, None),
    }
}

fn finish(m: &KernelMatrix, w: Vec<f64>, iterations: usize, method: SolverMethod) -> EquilibriumResult {
    let g = m.apply(&w);
    let energy = dot(&w, &g);
    let kkt = kkt_residual_masked(&w, &g, &m.barred());
    let support = w.iter().filter(|x| **x > 0.0).count();
    EquilibriumResult {
        measure: DiscreteMeasure {
            mesh: m.mesh.clone(),
            w,
        },
        kernel: m.spec,
        energy,
        capacity: capacity_from_energy(energy, &m.spec),
        kkt_residual: kkt,
        active_support_fraction: support as f64 / m.len() as f64,
        iterations,
        method,
        atom_potential: g,
        self_energy: m.diagonal(),
    }
}

/// Solves the bordered system `M_S w = lambda 1`, `sum(w) = 1`. Unlike
/// normalizing the solution of `M_S x = 1`, this stays well posed when the
/// energy `lambda` is zero or negative, as for logarithmic kernels on sets
/// of capacity at least one.
fn equality_solve(m: &KernelMatrix, support: &[usize]) -> Result<Vec<f64>> {
    let k = support.len();
    let sys = Mat::<f64>::from_fn(k + 1, k + 1, |i, j| match (i < k, j < k) {
        (true, true) => m.data[(support[i], support[j])],
        (true, false) => -1.0,
        (false, true) => 1.0,
        (false, false) => 0.0,
    });
    let rhs = Mat::<f64>::from_fn(k + 1, 1, |i, _| if i == k { 1.0 } else { 0.0 });
    let x = sys.partial_piv_lu().solve(&rhs);
    if (0..=k).any(|i| !x[(i, 0)].is_finite()) {
        return Err(Error::SingularSystem(k));
    }
    Ok((0..k).map(|i| x[(i, 0)]).collect())
}

fn active_set(m: &KernelMatrix, opts: &SolverOptions) -> Result<EquilibriumResult> {
    let n = m.len();
    let barred = m.barred();
    let mut support: Vec<usize> = (0..n).filter(|&i| !barred[i]).collect();
    let mut seen = HashSet::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for iter in 1..=opts.max_iter {
        if !seen.insert(support.clone()) {
            break;
        }
        let sol = equality_solve(m, &support)?;
        let negative: Vec<usize> = (0..support.len()).filter(|&i| sol[i] < 0.0).collect();
        let mut w = vec![0.0; n];
        for (&i, &x) in support.iter().zip(&sol) {
            w[i] = x.max(0.0);
        }
        if !negative.is_empty() {
            debug!("active set iteration {iter}: dropping {} atoms", negative.len());
            let drop: HashSet<usize> = negative.iter().map(|&i| support[i]).collect();
            support.retain(|i| !drop.contains(i));
            if support.is_empty() {
                return Err(Error::SingularSystem(0));
            }
            continue;
        }
        let g = m.apply(&w);
        let kkt = kkt_residual_masked(&w, &g, &barred);
        if best.as_ref().is_none_or(|(r, _)| kkt < *r) {
            best = Some((kkt, w.clone()));
        }
        let lambda = dot(&w, &g);
        let slack = opts.tol * lambda.abs().max(1.0);
        let in_support: HashSet<usize> = support.iter().copied().collect();
        let violators: Vec<usize> = (0..n)
            .filter(|i| !barred[*i] && !in_support.contains(i) && g[*i] < lambda - slack)
            .collect();
        if kkt <= opts.tol || violators.is_empty() {
            debug!("active set converged in {iter} iterations, support {}", support.len());
            return Ok(finish(m, w, iter, SolverMethod::ActiveSet));
        }
        debug!("active set iteration {iter}: adding {} violators", violators.len());
        support.extend(violators);
        support.sort_unstable();
    }
    let (residual, w) = best.unwrap_or_else(|| (f64::INFINITY, vec![1.0 / n as f64; n]));
    Err(Error::NotConverged {
        iterations: seen.len(),
        residual,
        best: Box::new(finish(m, w, seen.len(), SolverMethod::ActiveSet)),
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, x) in u.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Exact minimization on the support plus the atoms that violate the KKT
/// conditions. Returns the better of the projected minimizer and the
/// furthest feasible step toward it.
fn polish(
    m: &KernelMatrix,
    w: &[f64],
    g: &[f64],
    barred: &[bool],
    project: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let lambda = dot(w, g);
    let support: Vec<usize> = (0..w.len())
        .filter(|&i| !barred[i] && (w[i] > 0.0 || g[i] < lambda))
        .collect();
    let x = equality_solve(m, &support).ok()?;
    let mut target = vec![0.0; w.len()];
    for (&i, &v) in support.iter().zip(&x) {
        target[i] = v;
    }
    let mut t: f64 = 1.0;
    for (wi, xi) in w.iter().zip(&target) {
        if *xi < 0.0 {
            t = t.min(wi / (wi - xi));
        }
    }
    let stepped: Vec<f64> = w.iter().zip(&target).map(|(a, b)| (a + t * (b - a)).max(0.0)).collect();
    [project(&target), stepped]
        .into_iter()
        .map(|c| {
            let gc = m.apply(&c);
            let fc = dot(&c, &gc);
            (c, gc, fc)
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
}

/// Projected-gradient steps between exact solves on the current support.
const POLISH_EVERY: usize = 25;

fn projected_gradient(
    m: &KernelMatrix,
    opts: &SolverOptions,
    start: Option<Vec<f64>>,
) -> Result<EquilibriumResult> {
    let n = m.len();
    let barred = m.barred();
    let free: Vec<usize> = (0..n).filter(|&i| !barred[i]).collect();
    let project = |v: &[f64]| {
        let sub: Vec<f64> = free.iter().map(|&i| v[i]).collect();
        let mut out = vec![0.0; n];
        for (&i, x) in free.iter().zip(project_to_simplex(&sub)) {
            out[i] = x;
        }
        out
    };
    let mut w = match start {
        Some(w) => project(&w),
        None => project(&vec![1.0 / free.len().max(1) as f64; n]),
    };
    let mut g = m.apply(&w);
    let mut f = dot(&w, &g);
    let largest = free.iter().map(|&i| m.get(i, i)).fold(0.0, f64::max);
    let mut step = 1.0 / largest.max(1e-300);
    for iter in 1..=opts.max_iter {
        if kkt_residual_masked(&w, &g, &barred) <= opts.tol {
            return Ok(finish(m, w, iter - 1, SolverMethod::ProjectedGradient));
        }
        // energy gradient is 2 g; Armijo backtracking along the projection arc
        let mut t = step;
        let (w_new, g_new, f_new) = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x - 2.0 * t * d).collect();
            let cand = project(&trial);
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let gc = m.apply(&cand);
            let fc = dot(&cand, &gc);
            let decrease = 2.0 * dot(&g, &diff);
            if fc <= f + 1e-4 * decrease || t < 1e-20 {
                break (cand, gc, fc);
            }
            t *= 0.5;
        };
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| 2.0 * (a - b)).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * t };
        let stalled = f_new >= f && s.iter().all(|x| *x == 0.0);
        w = w_new;
        g = g_new;
        f = f_new.min(f);
        if iter % POLISH_EVERY == 0 || stalled {
            if let Some((cand, gc, fc)) = polish(m, &w, &g, &barred, &project) {
                // near the optimum the energy gain drops below rounding
                let sharper = kkt_residual_masked(&cand, &gc, &barred) < kkt_residual_masked(&w, &g, &barred);
                if fc < f || (sharper && fc <= f + 1e-12 * f.abs().max(1.0)) {
                    w = cand;
                    g = gc;
                    f = fc;
                    continue;
                }
            }
        }
        if stalled {
            break;
        }
    }
    let result = finish(m, w, opts.max_iter, SolverMethod::ProjectedGradient);
    if result.kkt_residual <= opts.tol {
        return Ok(result);
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: result.kkt_residual,
        best: Box::new(result),
    })
}

/// Equilibrium potential `sum_i w_i K(x, a_i)`; at an atom its own cell
/// contributes the cell self-energy.
pub fn potential(result: &EquilibriumResult, x: &Point) -> f64 {
    let mesh = &result.measure.mesh;
    let spec = &result.kernel;
    let mut u = 0.0;
    for (i, (a, wi)) in mesh.atoms.iter().zip(&result.measure.w).enumerate() {
        if *wi == 0.0 {
            continue;
        }
        let k = if a == x {
            result.self_energy[i]
        } else {
            spec.value(x, a)
        };
        u += wi * k;
    }
    u
}

/// Potentials at many points, evaluated in parallel.
pub fn potentials(result: &EquilibriumResult, points: &[Point]) -> Vec<f64> {
    use rayon::prelude::*;
    points.par_iter().map(|x| potential(result, x)).collect()
}

/// Checks that the potential stays below the energy (up to discretization)
/// and equals it on the support.
pub fn frostman_check(result: &EquilibriumResult, tolerance: f64, probes: &[Point]) -> FrostmanReport {
    let v = result.energy;
    let w = &result.measure.w;
    let u = &result.atom_potential;
    let mut max_on = f64::NEG_INFINITY;
    let mut min_on = f64::INFINITY;
    for (ui, wi) in u.iter().zip(w) {
        if *wi > 0.0 {
            max_on = max_on.max(*ui);
            min_on = min_on.min(*ui);
        }
    }
    let probe_u = potentials(result, probes);
    let max_violation = u
        .iter()
        .chain(&probe_u)
        .map(|x| (x - v).max(0.0))
        .fold(0.0, f64::max);
    let band = tolerance * v.abs().max(1.0);
    let regular = u.iter().filter(|x| (*x - v).abs() < band).count();
    FrostmanReport {
        max_potential_on_support: max_on,
        min_potential_on_support: min_on,
        energy: v,
        max_violation,
        regular_fraction: regular as f64 / u.len() as f64,
    }
}

/// Whether the potential at `x` reaches the energy within `tolerance`
/// (relative to `max(|V|, 1)`, since logarithmic energies may vanish), the
/// discrete stand-in for regularity of `x`.
pub fn is_regular_point(result: &EquilibriumResult, x: &Point, tolerance: f64) -> bool {
    let u = potential(result, x);
    (u - result.energy).abs() <= tolerance * result.energy.abs().max(1.0)
}
