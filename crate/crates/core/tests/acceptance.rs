//! Release acceptance suite. Each test prints one `PASS`/`FAIL` line and
//! then asserts; run with `--nocapture` to see the lines.

use std::f64::consts::{FRAC_2_PI, LN_2, PI};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rieszlab::closedform::{ball_moment, BallCase};
use rieszlab::geometry::norm;
use rieszlab::moments::{Expected, MomentOrder, Verdict};
use rieszlab::startransform::{commutation_order, spherical_mean, LiftedPotential};
use rieszlab::verify::CampaignReport;
use rieszlab::*;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:02} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn solve(set: &SetSpec, kernel: KernelSpec, n: usize, grading: Grading) -> Arc<EquilibriumResult> {
    let mesh = Arc::new(build_mesh(set, n, grading).unwrap());
    let m = kernel_matrix(kernel, mesh).unwrap();
    Arc::new(solve_equilibrium(&m, &SolverOptions::default()).unwrap())
}

fn interval(a: f64, b: f64) -> Primitive {
    Primitive::Interval { a, b }
}

fn disk(cx: f64, cy: f64, r: f64) -> Primitive {
    Primitive::Ball {
        center: vec![cx, cy],
        radius: r,
    }
}

fn campaign(text: &str) -> CampaignReport {
    run_campaign(&CampaignSpec::from_json(text).unwrap()).unwrap()
}

fn codim_one_intervals() -> &'static CampaignReport {
    static REPORT: OnceLock<CampaignReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        campaign(
            r#"{"theorem": "t2_codim_one", "n": 1, "p": "log", "q_values": [0.5, 1, 2, "log"],
                "resolutions": [1000, 2000],
                "jgrid": {"r_max": 6, "z_max": 4, "nr": 60, "nz": 40, "quad_nodes": 64},
                "sets": [
                  {"id": "pair", "dim": 1, "parts": [{"type": "interval", "a": -2, "b": -1}, {"type": "interval", "a": 1, "b": 2}]},
                  {"id": "offset", "dim": 1, "parts": [{"type": "interval", "a": 0, "b": 2}]},
                  {"id": "uneven", "dim": 1, "parts": [{"type": "interval", "a": -1, "b": -0.2}, {"type": "interval", "a": 0.5, "b": 1.5}]}
                ]}"#,
        )
    })
}

#[test]
fn interval_log_capacity() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let r = pool.install(|| solve(&SetSpec::centered_ball(1, 1.0), KernelSpec::log(1), 2000, Grading::EndpointRefined));
    let secs = start.elapsed().as_secs_f64();
    let rel = (r.capacity / 0.5 - 1.0).abs();
    let pass = r.measure.len() == 2000 && rel < 0.01 && secs < 60.0;
    report(1, "interval log capacity", pass, format!("cap {:.6}, rel {rel:.2e}, {secs:.2} s on one thread", r.capacity));
    assert!(pass);
}

#[test]
fn disk_codim_one_capacity() {
    let start = Instant::now();
    let r = solve(&SetSpec::centered_ball(2, 1.0), KernelSpec::riesz(1.0, 2).unwrap(), 3000, Grading::Uniform);
    let secs = start.elapsed().as_secs_f64();
    let rel = (r.capacity / FRAC_2_PI - 1.0).abs();
    let atoms = r.measure.len();
    let pass = (2700..=3300).contains(&atoms) && rel < 0.015 && secs < 300.0;
    report(2, "disk codim-one capacity", pass, format!("{atoms} atoms, cap {:.6}, rel {rel:.2e}, {secs:.2} s", r.capacity));
    assert!(pass);
}

#[test]
fn solid_ball_newtonian_capacity() {
    let r = solve(&SetSpec::centered_ball(3, 1.0), KernelSpec::riesz(1.0, 3).unwrap(), 3000, Grading::EndpointRefined);
    let rel = (r.capacity - 1.0).abs();
    let mesh = &r.measure.mesh;
    // atoms at least two cell radii inside the sphere
    let interior: f64 = (0..mesh.len())
        .filter(|&i| 1.0 - norm(&mesh.atoms[i]) > 2.0 * mesh.cell_radius[i])
        .map(|i| r.measure.w[i])
        .sum();
    let atoms = r.measure.len();
    let pass = (2500..=3500).contains(&atoms) && rel < 0.015 && interior < 0.02;
    report(
        3,
        "solid ball Newtonian capacity",
        pass,
        format!("{atoms} atoms, cap {:.6}, interior mass {interior:.2e}", r.capacity),
    );
    assert!(pass);
}

#[test]
fn arcsine_density_recovery() {
    let r = solve(&SetSpec::centered_ball(1, 1.0), KernelSpec::log(1), 2000, Grading::EndpointRefined);
    let mut order: Vec<usize> = (0..r.measure.len()).collect();
    order.sort_by(|&a, &b| r.measure.atoms()[a][0].total_cmp(&r.measure.atoms()[b][0]));
    let cdf = |x: f64| 0.5 + x.clamp(-1.0, 1.0).asin() / PI;
    let mut below = 0.0;
    let mut sup: f64 = 0.0;
    for i in order {
        let x = r.measure.atoms()[i][0];
        let above = below + r.measure.w[i];
        sup = sup.max((below - cdf(x)).abs()).max((above - cdf(x)).abs());
        below = above;
    }
    let pass = sup < 0.01;
    report(4, "arcsine density recovery", pass, format!("sup distance {sup:.2e}"));
    assert!(pass);
}

/// `int_{-1}^{1} f(x) / sqrt(1 - x^2) dx` by `m`-point Gauss-Chebyshev.
fn gauss_chebyshev<F: Fn(f64) -> f64>(m: usize, f: F) -> f64 {
    let sum: f64 = (1..=m)
        .map(|k| f(((2 * k - 1) as f64 * PI / (2 * m) as f64).cos()))
        .sum();
    PI * sum / m as f64
}

#[test]
fn closed_form_moment_dual_path() {
    let mut worst: f64 = 0.0;
    for q in [0.5, 1.0, 2.0] {
        let closed1 = ball_moment(1, BallCase::CodimOneCase, MomentOrder::Power(q), 1.0).unwrap();
        let closed2 = ball_moment(2, BallCase::CodimOneCase, MomentOrder::Power(q), 1.0).unwrap();
        // arcsine law on the interval; on the disk, density (1 - r^2)^(-1/2) / (2 pi)
        let m = 1 << 22;
        let quad1 = gauss_chebyshev(m, |x| x.abs().powf(q)) / PI;
        let quad2 = 0.5 * gauss_chebyshev(m, |x| x.abs().powf(q + 1.0));
        worst = worst.max((closed1 / quad1 - 1.0).abs()).max((closed2 / quad2 - 1.0).abs());
    }
    let pass = worst < 1e-8;
    report(5, "closed-form moment dual path", pass, format!("max relative difference {worst:.2e}"));
    assert!(pass);
}

#[test]
fn codim_one_campaign_on_the_line() {
    let r = codim_one_intervals();
    let holds = |v: Verdict| matches!(v, Verdict::Holds | Verdict::HoldsWithMargin);
    let records: Vec<_> = r.records().collect();
    let all_ok = records.iter().all(|(_, c)| c.gap >= 0.0 && holds(c.verdict));
    let margin = r.sets.iter().any(|s| s.records.iter().all(|c| c.verdict == Verdict::HoldsWithMargin));
    let no_failures = r.sets.iter().all(|s| s.failure.is_none());
    let rows = records.len();
    let pass = all_ok && margin && no_failures && rows == 3 * 4 * 2;
    let min_gap = records.iter().map(|(_, c)| c.gap).fold(f64::INFINITY, f64::min);
    report(6, "codim-one campaign, n = 1", pass, format!("{rows} records, smallest gap {min_gap:.3e}"));
    assert!(pass, "{r:#?}");
}

#[test]
fn newtonian_campaign_in_space() {
    let r = campaign(
        r#"{"theorem": "t1_newton", "n": 3, "p": 1, "q_values": [2, "log"], "negative_q_values": [-0.5],
            "resolutions": [1500, 3000],
            "sets": [
              {"id": "prolate", "dim": 3, "parts": [{"type": "ellipsoid", "center": [0, 0, 0], "semi_axes": [1, 1, 2], "surface": true}]},
              {"id": "spheres", "dim": 3, "parts": [{"type": "sphere", "center": [-1.5, 0, 0], "radius": 1},
                                                    {"type": "sphere", "center": [1.5, 0, 0], "radius": 1}]}
            ]}"#,
    );
    let holds = |v: Verdict| matches!(v, Verdict::Holds | Verdict::HoldsWithMargin);
    let mut pass = r.sets.iter().all(|s| s.failure.is_none());
    let mut detail = Vec::new();
    for (s, c) in r.records() {
        let ok = match c.q {
            MomentOrder::Power(2.0) => c.gap >= 0.0 && c.verdict == Verdict::HoldsWithMargin,
            MomentOrder::Power(_) => c.expected == Expected::AtMost && holds(c.verdict),
            MomentOrder::Log => c.expected == Expected::AtLeast && holds(c.verdict),
        };
        pass &= ok;
        if c.resolution == 3000 {
            detail.push(format!("{} q={} gap {:.2e} {}", s.id, c.q, c.gap, c.verdict));
        }
    }
    report(7, "Newtonian campaign, n = 3", pass, detail.join("; "));
    assert!(pass, "{r:#?}");
}

#[test]
fn j_grid_is_nonnegative() {
    let r = codim_one_intervals();
    let pair = r.sets.iter().find(|s| s.id == "pair").unwrap();
    let j = pair.jgrid.as_ref().unwrap();
    let min = *j.min_values.last().unwrap();
    let pass = j.config.nr == 60 && j.config.nz == 40 && min >= -3.0 * j.error_estimate;
    report(8, "J grid scan", pass, format!("min {min:.3e}, combined error {:.2e}", j.error_estimate));
    assert!(pass);
}

#[test]
fn spherical_means_of_potentials() {
    let seg = solve(&SetSpec::centered_ball(1, 1.0), KernelSpec::log(2), 2000, Grading::EndpointRefined);
    let m1 = spherical_mean(&LiftedPotential::new(seg).unwrap(), 5.0, 4000).unwrap();
    let e1 = (m1 / (0.2f64).ln() - 1.0).abs();
    let d = solve(&SetSpec::centered_ball(2, 1.0), KernelSpec::riesz(1.0, 3).unwrap(), 2000, Grading::EndpointRefined);
    let m2 = spherical_mean(&LiftedPotential::new(d).unwrap(), 10.0, 4000).unwrap();
    let e2 = (m2 / 0.1 - 1.0).abs();
    let pass = e1 < 0.01 && e2 < 0.005;
    report(
        9,
        "spherical means",
        pass,
        format!("circle {m1:.6} (rel {e1:.1e}), sphere {m2:.6} (rel {e2:.1e})"),
    );
    assert!(pass);
}

#[test]
fn commutation_defect_order() {
    // on the line J of x^2 + z^2 is a cubic and the difference scheme is exact
    let line = |x: &[f64], z: f64| x[0] * x[0] + z * z;
    let (c1, f1, _) = commutation_order(1, line, |_, _| 4.0, (0.5, 2.0), (0.0, 1.5), 0.1).unwrap();
    let plane = |x: &[f64], z: f64| x[0] * x[0] + x[1] * x[1] + z * z;
    let (c2, f2, order) = commutation_order(2, plane, |_, _| 6.0, (0.5, 2.0), (0.0, 1.5), 0.1).unwrap();
    let pass = c1 < 1e-8 && f1 < 1e-8 && order >= 1.8;
    report(
        10,
        "commutation defect",
        pass,
        format!("n=1 defects {c1:.1e}/{f1:.1e}; n=2 defects {c2:.2e}/{f2:.2e}, order {order:.3}"),
    );
    assert!(pass);
}

#[test]
fn moment_difference_three_ways() {
    let r = codim_one_intervals();
    let pair = r.sets.iter().find(|s| s.id == "pair").unwrap();
    let d = pair.moment_dual.unwrap();
    let remark = d.remark.unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    let worst = rel(d.direct, d.via_j).max(rel(d.direct, remark)).max(rel(d.via_j, remark));
    let pass = worst < 0.02;
    report(
        11,
        "moment difference three ways",
        pass,
        format!("direct {:.8}, via J {:.8}, q=2 formula {:.8}, worst rel {worst:.1e}", d.direct, d.via_j, remark),
    );
    assert!(pass);
}

#[test]
fn threshold_persistence() {
    let r = campaign(
        r#"{"theorem": "p4_threshold", "n": 3, "p": 0.5, "q_values": [0.25, 0.5, 1, 2, 4],
            "resolutions": [1500, 3000],
            "sets": [{"id": "balls", "dim": 3, "parts": [{"type": "ball", "center": [-1.5, 0, 0], "radius": 1},
                                                         {"type": "ball", "center": [1.5, 0, 0], "radius": 1}]}]}"#,
    );
    let t = r.sets[0].threshold.as_ref().unwrap();
    let pass = r.sets[0].failure.is_none() && t.persistent;
    report(12, "threshold persistence", pass, format!("first holding q {:?}", t.first_holding_q));
    assert!(pass);
}

#[test]
fn capacity_scales_linearly() {
    let cases: Vec<(&str, SetSpec, KernelSpec)> = vec![
        ("interval log", SetSpec::new(1, vec![interval(-0.5, 1.0)]).unwrap(), KernelSpec::log(1)),
        ("interval riesz 0.5", SetSpec::new(1, vec![interval(-0.5, 1.0)]).unwrap(), KernelSpec::riesz(0.5, 1).unwrap()),
        ("disk log", SetSpec::new(2, vec![disk(0.3, 0.0, 1.0)]).unwrap(), KernelSpec::log(2)),
        ("disk riesz 1", SetSpec::new(2, vec![disk(0.3, 0.0, 1.0)]).unwrap(), KernelSpec::riesz(1.0, 2).unwrap()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, set, kernel) in cases {
        let (lo, hi) = if set.dim == 1 { (500, 1000) } else { (600, 1200) };
        let caps = |s: &SetSpec| {
            let a = solve(s, kernel, lo, Grading::EndpointRefined).capacity;
            let b = solve(s, kernel, hi, Grading::EndpointRefined).capacity;
            (b, (a - b).abs() / b)
        };
        let (c1, e1) = caps(&set);
        let (c2, e2) = caps(&set.scaled(2.0));
        let ratio = c2 / c1;
        // relative errors add for a quotient
        let err = 2.0 * (e1 + e2);
        let ok = (ratio - 2.0).abs() <= 2.0 * err.max(f64::EPSILON * 8.0);
        pass &= ok;
        detail.push(format!("{name} ratio {ratio:.12} err {err:.1e}"));
    }
    report(13, "capacity scaling", pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn sweep_between_kernels() {
    let mut violated = 0;
    let mut detail = Vec::new();
    for p in [1.25, 1.5, 1.75] {
        let r = campaign(&format!(
            r#"{{"theorem": "c3_sweep", "n": 2, "p": {p}, "q_values": [0.5, 1, 2, 4], "resolutions": [1000, 2000],
                "sets": [{{"id": "disks", "dim": 2, "parts": [{{"type": "ball", "center": [-1.5, 0], "radius": 1}},
                                                             {{"type": "ball", "center": [1.5, 0], "radius": 1}}]}}]}}"#
        ));
        assert!(r.sets[0].failure.is_none());
        violated += r.violated_count();
        detail.push(format!("p={p} {}", r.aggregate));
    }
    let pass = violated == 0;
    report(14, "exploratory sweep", pass, format!("{violated} violated; {}", detail.join(", ")));
    // exploratory: reported but not a release blocker
    if !pass {
        eprintln!("warning: exploratory sweep found violated verdicts");
    }
}

#[test]
fn interval_energy_matches_log_two() {
    // supplementary: the energy behind criterion 1
    let r = solve(&SetSpec::centered_ball(1, 1.0), KernelSpec::log(1), 2000, Grading::EndpointRefined);
    assert!((r.energy - LN_2).abs() < 2e-3);
}
