//! Moments of discrete measures and comparisons against the capacity-matched
//! centered ball.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::closedform::{ball_capacity, ball_moment, BallCase};
use crate::equilibrium::{is_regular_point, DiscreteMeasure, EquilibriumResult};
use crate::error::{Error, Result};
use crate::geometry::norm;

/// Order of a moment: `|x|^q` or `log |x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentOrder {
    Power(f64),
    Log,
}

impl MomentOrder {
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("log") {
            return Ok(MomentOrder::Log);
        }
        t.parse::<f64>()
            .ok()
            .filter(|q| q.is_finite())
            .map(MomentOrder::Power)
            .ok_or_else(|| Error::Config(format!("moment order must be a number or \"log\", got {text:?}")))
    }

    pub fn as_power(&self) -> Option<f64> {
        match self {
            MomentOrder::Power(q) => Some(*q),
            MomentOrder::Log => None,
        }
    }
}

impl fmt::Display for MomentOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentOrder::Power(q) => write!(f, "{q}"),
            MomentOrder::Log => f.write_str("log"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OrderRepr {
    Number(f64),
    Text(String),
}

impl Serialize for MomentOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MomentOrder::Power(q) => OrderRepr::Number(*q),
            MomentOrder::Log => OrderRepr::Text("log".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match OrderRepr::deserialize(d)? {
            OrderRepr::Number(q) => Ok(MomentOrder::Power(q)),
            OrderRepr::Text(t) => MomentOrder::parse(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// `sum_i w_i |a_i|^q`
pub fn moment(measure: &DiscreteMeasure, q: f64) -> Result<f64> {
    let mut total = 0.0;
    for (a, w) in measure.atoms().iter().zip(&measure.w) {
        if *w == 0.0 {
            continue;
        }
        let r = norm(a);
        if r == 0.0 && q < 0.0 {
            return Err(Error::DivergentMoment(format!(
                "atom at the origin carries weight {w:.3e}; order {q} is infinite"
            )));
        }
        total += w * r.powf(q);
    }
    Ok(total)
}

/// `sum_i w_i log |a_i|`
pub fn log_moment(measure: &DiscreteMeasure) -> Result<f64> {
    let mut total = 0.0;
    for (a, w) in measure.atoms().iter().zip(&measure.w) {
        if *w == 0.0 {
            continue;
        }
        let r = norm(a);
        if r == 0.0 {
            return Err(Error::DivergentMoment(format!(
                "atom at the origin carries weight {w:.3e}; the log moment is -infinity"
            )));
        }
        total += w * r.ln();
    }
    Ok(total)
}

pub fn moment_of(measure: &DiscreteMeasure, q: MomentOrder) -> Result<f64> {
    match q {
        MomentOrder::Power(q) => moment(measure, q),
        MomentOrder::Log => log_moment(measure),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    HoldsWithMargin,
    Inconclusive,
    Violated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::HoldsWithMargin => "holds_with_margin",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Violated => "violated",
        })
    }
}

/// Direction the inequality is expected to go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    /// `moment_K >= moment_ball`
    #[default]
    AtLeast,
    /// `moment_K <= moment_ball`
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentComparison {
    pub q: MomentOrder,
    pub resolution: usize,
    pub capacity_k: f64,
    pub matched_radius: f64,
    pub moment_k: f64,
    pub moment_ball: f64,
    pub gap: f64,
    pub error_estimate: f64,
    pub verdict: Verdict,
    pub expected: Expected,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_regular: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MomentComparison {
    /// Gap signed so that positive values agree with the expected direction.
    pub fn oriented_gap(&self) -> f64 {
        match self.expected {
            Expected::AtLeast => self.gap,
            Expected::AtMost => -self.gap,
        }
    }
}

/// The ball side of a comparison.
#[derive(Debug, Clone)]
pub enum BallReference {
    Closed { n: usize, case: BallCase },
    /// Equilibrium of the unit ball solved on a mesh, for kernels without a
    /// closed form; scaled by linearity of capacity.
    Solved { n: usize, unit: Arc<EquilibriumResult> },
}

impl BallReference {
    pub fn closed(n: usize, case: BallCase) -> Self {
        BallReference::Closed { n, case }
    }

    pub fn dim(&self) -> usize {
        match self {
            BallReference::Closed { n, .. } | BallReference::Solved { n, .. } => *n,
        }
    }

    pub fn case(&self) -> Option<BallCase> {
        match self {
            BallReference::Closed { case, .. } => Some(*case),
            BallReference::Solved { .. } => None,
        }
    }

    pub fn unit_capacity(&self) -> Result<f64> {
        match self {
            BallReference::Closed { n, case } => ball_capacity(*n, *case, 1.0),
            BallReference::Solved { unit, .. } => Ok(unit.capacity),
        }
    }

    pub fn matched_radius(&self, cap_k: f64) -> Result<f64> {
        if !(cap_k > 0.0 && cap_k.is_finite()) {
            return Err(Error::InvalidArgument(format!("capacity must be positive, got {cap_k}")));
        }
        Ok(cap_k / self.unit_capacity()?)
    }

    pub fn moment(&self, q: MomentOrder, radius: f64) -> Result<f64> {
        match self {
            BallReference::Closed { n, case } => ball_moment(*n, *case, q, radius),
            BallReference::Solved { unit, .. } => {
                let m = moment_of(&unit.measure, q)?;
                Ok(match q {
                    MomentOrder::Power(q) => radius.powf(q) * m,
                    MomentOrder::Log => radius.ln() + m,
                })
            }
        }
    }
}

/// Comparison at one resolution, before an error estimate is available.
pub fn compare_single(
    result: &EquilibriumResult,
    reference: &BallReference,
    q: MomentOrder,
    expected: Expected,
) -> Result<MomentComparison> {
    let radius = reference.matched_radius(result.capacity)?;
    let moment_k = moment_of(&result.measure, q)?;
    let moment_ball = reference.moment(q, radius)?;
    Ok(MomentComparison {
        q,
        resolution: result.measure.len(),
        capacity_k: result.capacity,
        matched_radius: radius,
        moment_k,
        moment_ball,
        gap: moment_k - moment_ball,
        error_estimate: 0.0,
        verdict: Verdict::Inconclusive,
        expected,
        origin_regular: None,
        note: None,
    })
}

/// Fills in error estimates from consecutive resolutions and assigns
/// verdicts. Records must be ordered by increasing resolution.
pub fn assign_verdicts(records: &mut [MomentComparison]) {
    let k = records.len();
    if k == 0 {
        return;
    }
    for i in 0..k {
        records[i].error_estimate = if k == 1 {
            f64::NAN
        } else {
            let j = if i + 1 < k { i + 1 } else { i - 1 };
            (records[i].gap - records[j].gap).abs()
        };
    }
    let below = |r: &MomentComparison| r.oriented_gap() < -3.0 * r.error_estimate;
    let persistent = k >= 2 && records.iter().all(below);
    for r in records.iter_mut() {
        let g = r.oriented_gap();
        let e = r.error_estimate;
        r.verdict = if !e.is_finite() || !g.is_finite() || r.origin_regular == Some(false) {
            Verdict::Inconclusive
        } else if g > 3.0 * e {
            Verdict::HoldsWithMargin
        } else if g >= -3.0 * e {
            Verdict::Holds
        } else if persistent {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
    }
}

/// Compares moments of `K` against the matched ball at every resolution in
/// `results` (ascending).
pub fn compare_moments(
    results: &[&EquilibriumResult],
    reference: &BallReference,
    q: MomentOrder,
) -> Result<Vec<MomentComparison>> {
    compare_directed(results, reference, q, Expected::AtLeast)
}

pub fn compare_directed(
    results: &[&EquilibriumResult],
    reference: &BallReference,
    q: MomentOrder,
    expected: Expected,
) -> Result<Vec<MomentComparison>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no solved results to compare".into()));
    }
    let mut records = results
        .iter()
        .map(|r| compare_single(r, reference, q, expected))
        .collect::<Result<Vec<_>>>()?;
    assign_verdicts(&mut records);
    Ok(records)
}

/// Tolerance on `|u(0) - V| / |V|` under which the origin counts as regular.
pub const ORIGIN_REGULARITY_TOLERANCE: f64 = 0.02;

/// Negative-order comparisons for the Newtonian (or planar logarithmic)
/// case: reversed inequality for `-(n-2) <= q < 0`, and the usual direction
/// for `q < -(n-2)` provided the origin is a regular point.
pub fn reversed_and_negative_moment_checks(
    results: &[&EquilibriumResult],
    reference: &BallReference,
    q: f64,
) -> Result<Vec<MomentComparison>> {
    let n = reference.dim();
    match reference.case() {
        Some(BallCase::NewtonianCase) | Some(BallCase::LogDisk) => {}
        _ => {
            return Err(Error::Unsupported(
                "negative-order checks need the kernel p = n - 2".into(),
            ))
        }
    }
    if !(q < 0.0) {
        return Err(Error::InvalidArgument(format!("expected a negative order, got {q}")));
    }
    let threshold = -(n as f64 - 2.0);
    let reversed = q >= threshold;
    let expected = if reversed { Expected::AtMost } else { Expected::AtLeast };
    let mut records = results
        .iter()
        .map(|r| compare_single(r, reference, MomentOrder::Power(q), expected))
        .collect::<Result<Vec<_>>>()?;
    if !reversed {
        for (rec, res) in records.iter_mut().zip(results) {
            let regular = is_regular_point(res, &[0.0; 3], ORIGIN_REGULARITY_TOLERANCE);
            rec.origin_regular = Some(regular);
            if !regular {
                rec.note = Some("origin is not a regular point; the inequality is not asserted".into());
            }
        }
    }
    assign_verdicts(&mut records);
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdScan {
    /// One entry per grid value, each holding every resolution.
    pub comparisons: Vec<Vec<MomentComparison>>,
    /// Smallest grid value whose finest-resolution verdict holds.
    pub first_holding_q: Option<f64>,
    /// No `holds_with_margin` is followed by `violated` at any resolution.
    pub persistent: bool,
}

pub fn threshold_scan(
    results: &[&EquilibriumResult],
    reference: &BallReference,
    q_grid: &[f64],
) -> Result<ThresholdScan> {
    if q_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("q grid must be strictly ascending".into()));
    }
    let comparisons = q_grid
        .par_iter()
        .map(|&q| compare_moments(results, reference, MomentOrder::Power(q)))
        .collect::<Result<Vec<_>>>()?;
    let holds = |v: Verdict| matches!(v, Verdict::Holds | Verdict::HoldsWithMargin);
    let first_holding_q = comparisons
        .iter()
        .zip(q_grid)
        .find(|(c, _)| c.last().is_some_and(|r| holds(r.verdict)))
        .map(|(_, q)| *q);
    let mut persistent = true;
    for level in 0..results.len() {
        let mut seen_margin = false;
        for c in &comparisons {
            match c[level].verdict {
                Verdict::HoldsWithMargin => seen_margin = true,
                Verdict::Violated if seen_margin => persistent = false,
                _ => {}
            }
        }
    }
    Ok(ThresholdScan {
        comparisons,
        first_holding_q,
        persistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Cell, Mesh};
    use proptest::prelude::*;

    fn measure(radii: &[f64], w: &[f64]) -> DiscreteMeasure {
        let atoms = radii.iter().map(|r| [*r, 0.0, 0.0]).collect();
        let cells = vec![Cell { widths: [1e-3, 0.0, 0.0], dim: 1 }; radii.len()];
        let mesh = Mesh::from_parts(1, atoms, vec![1e-3; radii.len()], cells).unwrap();
        let total: f64 = w.iter().sum();
        DiscreteMeasure::new(Arc::new(mesh), w.iter().map(|x| x / total).collect()).unwrap()
    }

    #[test]
    fn trivial_moments() {
        let m = measure(&[2.0, 5.0], &[1.0, 0.0]);
        assert_eq!(moment(&m, 3.0).unwrap(), 8.0);
        let m = measure(&[0.3, 1.7, 4.0], &[1.0, 2.0, 3.0]);
        assert!((moment(&m, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let e = measure(&[std::f64::consts::E, 9.0], &[1.0, 0.0]);
        assert!((log_moment(&e).unwrap() - 1.0).abs() < 1e-15);
        let one = measure(&[1.0, 9.0], &[1.0, 0.0]);
        assert_eq!(log_moment(&one).unwrap(), 0.0);
    }

    #[test]
    fn origin_atom_diverges() {
        let m = measure(&[0.0, 1.0], &[1.0, 1.0]);
        assert!(matches!(moment(&m, -0.5), Err(Error::DivergentMoment(_))));
        assert!(matches!(log_moment(&m), Err(Error::DivergentMoment(_))));
        assert!(moment(&m, 0.5).is_ok());
    }

    #[test]
    fn order_parsing() {
        assert_eq!(MomentOrder::parse("log").unwrap(), MomentOrder::Log);
        assert_eq!(MomentOrder::parse(" 2.5").unwrap(), MomentOrder::Power(2.5));
        assert!(MomentOrder::parse("two").is_err());
        let v: Vec<MomentOrder> = serde_json::from_str(r#"[0.5, "log", 2]"#).unwrap();
        assert_eq!(v, vec![MomentOrder::Power(0.5), MomentOrder::Log, MomentOrder::Power(2.0)]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[0.5,"log",2.0]"#);
    }

    fn record(gap: f64) -> MomentComparison {
        MomentComparison {
            q: MomentOrder::Power(1.0),
            resolution: 0,
            capacity_k: 1.0,
            matched_radius: 1.0,
            moment_k: gap,
            moment_ball: 0.0,
            gap,
            error_estimate: 0.0,
            verdict: Verdict::Inconclusive,
            expected: Expected::AtLeast,
            origin_regular: None,
            note: None,
        }
    }

    #[test]
    fn verdict_rules() {
        let mut r = vec![record(0.10), record(0.11)];
        assign_verdicts(&mut r);
        assert!(r.iter().all(|x| x.verdict == Verdict::HoldsWithMargin));
        assert!((r[0].error_estimate - 0.01).abs() < 1e-15);

        let mut r = vec![record(-0.10), record(-0.11)];
        assign_verdicts(&mut r);
        assert!(r.iter().all(|x| x.verdict == Verdict::Violated));

        // negative beyond the margin at one resolution only
        let mut r = vec![record(-0.02), record(0.005)];
        assign_verdicts(&mut r);
        assert_eq!(r[0].verdict, Verdict::Holds);
        let mut r = vec![record(-0.2), record(0.005), record(0.006)];
        assign_verdicts(&mut r);
        assert_eq!(r[0].verdict, Verdict::Holds);
        assert_eq!(r[2].verdict, Verdict::HoldsWithMargin);

        let mut r = vec![record(-0.10), record(-0.11)];
        r[0].expected = Expected::AtMost;
        r[1].expected = Expected::AtMost;
        assign_verdicts(&mut r);
        assert!(r.iter().all(|x| x.verdict == Verdict::HoldsWithMargin));

        let mut single = vec![record(-5.0)];
        assign_verdicts(&mut single);
        assert_eq!(single[0].verdict, Verdict::Inconclusive);
    }

    fn arb_measure() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..5.0, n),
                prop::collection::vec(0.01f64..1.0, n),
            )
        })
    }

    fn distinct(radii: &[f64]) -> Vec<f64> {
        radii.iter().enumerate().map(|(i, r)| r + 1e-6 * i as f64).collect()
    }

    proptest! {
        #[test]
        fn moments_are_log_convex((radii, w) in arb_measure(), q1 in 0.1f64..3.0, q2 in 0.1f64..3.0) {
            let m = measure(&distinct(&radii), &w);
            let mid = moment(&m, 0.5 * (q1 + q2)).unwrap();
            let lhs = mid * mid;
            let rhs = moment(&m, q1).unwrap() * moment(&m, q2).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn small_order_limit_is_log_moment((radii, w) in arb_measure()) {
            let m = measure(&distinct(&radii), &w);
            let q = 1e-3;
            let lm = log_moment(&m).unwrap();
            let approx = (moment(&m, q).unwrap() - 1.0) / q;
            // the next Taylor term is q/2 * int log^2
            let second: f64 = m.atoms().iter().zip(&m.w).map(|(a, w)| w * norm(a).ln().powi(2)).sum();
            prop_assert!((approx - lm).abs() <= 0.5 * q * second * 1.01 + 1e-9);
        }
    }

    #[test]
    fn small_order_limit_on_equilibrium() {
        use crate::geometry::{build_mesh, Grading, SetSpec};
        use crate::kernels::{kernel_matrix, KernelSpec};
        use crate::equilibrium::{solve_equilibrium, SolverOptions};
        let spec = SetSpec::new(1, vec![crate::geometry::Primitive::Interval { a: 0.5, b: 3.0 }]).unwrap();
        let mesh = Arc::new(build_mesh(&spec, 400, Grading::EndpointRefined).unwrap());
        let m = kernel_matrix(KernelSpec::log(2), mesh).unwrap();
        let r = solve_equilibrium(&m, &SolverOptions::default()).unwrap();
        let lm = log_moment(&r.measure).unwrap();
        let q = 1e-3;
        let approx = (moment(&r.measure, q).unwrap() - 1.0) / q;
        assert!((approx - lm).abs() < 1e-3 * lm.abs() + 1e-6);
        let top = r
            .measure
            .support()
            .iter()
            .map(|&i| norm(&r.measure.atoms()[i]))
            .fold(0.0, f64::max);
        let linf = moment(&r.measure, 64.0).unwrap().powf(1.0 / 64.0);
        assert!((linf / top - 1.0).abs() < 0.05, "{linf} vs {top}");
    }
}
