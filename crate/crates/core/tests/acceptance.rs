//! Acceptance run: one PASS/FAIL line per criterion, with details beneath.
//!
//! Criteria listed in `KNOWN_FAILURES` are printed as FAIL like any other
//! failure but do not make the process exit non-zero; any other failure does.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use selfaffine::analysis::{
    box_count_rects, build_stopping_set, dense_grid_rects, drift_probe, estimate_dimension, martingale_diagnostics,
    partition_identity_check, DiagnosticsConfig, DriftConfig, FitPolicy, ScaleSchedule,
};
use selfaffine::cli::cmd_diagnose;
use selfaffine::config::Model;
use selfaffine::heightlaw::{moments, HeightLaw, McConfig, RatioMoments};
use selfaffine::realization::{sample_tree, Rect};
use selfaffine::symbolic::Partition;
use selfaffine::theory::{alpha, compute_phi, dimension_function, solve_dimension};

/// Criteria whose literal statement is not satisfied by the correct values.
const KNOWN_FAILURES: &[u32] = &[3, 5, 7];

struct Report {
    failures: Vec<u32>,
}

impl Report {
    fn criterion(&mut self, id: u32, title: &str, passed: bool, elapsed: Duration, details: &[String]) {
        let status = if passed { "PASS" } else { "FAIL" };
        let known = if !passed && KNOWN_FAILURES.contains(&id) { " [known]" } else { "" };
        println!("criterion {id}: {status}{known}  {title}  ({:.2} s)", elapsed.as_secs_f64());
        for d in details {
            println!("    {d}");
        }
        if !passed {
            self.failures.push(id);
        }
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn closed_form(law: &HeightLaw, p: &Partition) -> RatioMoments {
    let mo = moments(law, p, &McConfig::default()).expect("moments");
    assert!(!mo.is_monte_carlo(), "{} has no closed form", law.describe());
    mo
}

fn skewed() -> Partition {
    Partition::new(vec![0.0, 0.4, 0.6, 1.0]).unwrap()
}

fn skewed_law() -> HeightLaw {
    HeightLaw::mirrored_beta(2.0, 1.0).unwrap()
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let thirds = Partition::uniform(3).unwrap();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for k in 0..10 {
        let a = 0.5 + 0.05 * k as f64;
        let s = solve_dimension(&closed_form(&HeightLaw::okamoto(a).unwrap(), &thirds), &thirds, 1e-12).unwrap().s;
        let want = 1.0 + (4.0 * a - 1.0).ln() / 3f64.ln();
        worst = worst.max((s - want).abs());
    }
    details.push(format!("Okamoto alpha 0.50..0.95: max |ds| = {worst:.2e}"));
    let mut worst_u: f64 = 0.0;
    for m in 3..=10 {
        let p = Partition::uniform(m).unwrap();
        let s = solve_dimension(&closed_form(&HeightLaw::iid_uniform(m).unwrap(), &p), &p, 1e-12).unwrap().s;
        let mf = m as f64;
        let want = 1.0 + ((mf + 1.0).ln() - 3f64.ln()) / mf.ln();
        worst_u = worst_u.max((s - want).abs());
    }
    details.push(format!("uniform m 3..10: max |ds| = {worst_u:.2e}"));
    let elapsed = t.elapsed();
    let passed = worst < 1e-9 && worst_u < 1e-9 && elapsed < Duration::from_secs(1);
    r.criterion(1, "closed-form dimension agreement (|ds| < 1e-9, < 1 s)", passed, elapsed, &details);
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let p = skewed();
    let mo = closed_form(&skewed_law(), &p);
    let s = solve_dimension(&mo, &p, 1e-12).unwrap().s;
    let phi = compute_phi(&mo, &p).unwrap().phi;
    let means = mo.mean_a_values();
    let details = vec![
        format!("E a = ({:.6}, {:.6}, {:.6}) on lengths (0.4, 0.2, 0.4)", means[0], means[1], means[2]),
        format!("s = {s:.6} (target 1.561, |d| = {:.2e})", (s - 1.561).abs()),
        format!("phi = {phi:.6} (target 0.455, |d| = {:.2e})", (phi - 0.455).abs()),
    ];
    let passed = (s - 1.561).abs() < 1e-3 && (phi - 0.455).abs() < 1e-3;
    r.criterion(2, "skewed three-interval model: s ~ 1.561, phi ~ 0.455", passed, t.elapsed(), &details);
}

fn criterion_3(r: &mut Report) {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for m in 3..=10 {
        let p = Partition::uniform(m).unwrap();
        let phi = compute_phi(&closed_form(&HeightLaw::iid_uniform(m).unwrap(), &p), &p).unwrap().phi;
        let mf = m as f64;
        let printed = (2.0 * mf.ln() - 3.0 * mf + 2.0) / (2.0 * mf);
        let definition = (2.0 * mf * mf.ln() - 3.0 * mf + 2.0) / (2.0 * mf);
        let ok = (phi - printed).abs() < 1e-12;
        passed &= ok;
        details.push(format!(
            "m = {m:2}: phi = {phi:+.12}, formula (2 log m - 3m + 2)/(2m) = {printed:+.12} [{}], (2m log m - 3m + 2)/(2m) = {definition:+.12} [{}]",
            mark(ok),
            mark((phi - definition).abs() < 1e-12)
        ));
    }
    r.criterion(3, "uniform phi equals (2 log m - 3m + 2)/(2m) to 1e-12, m = 3..10", passed, t.elapsed(), &details);
}

fn criterion_4(r: &mut Report) {
    let policy = FitPolicy::default();
    let thirds = Partition::uniform(3).unwrap();

    let t = Instant::now();
    let tree = sample_tree(&thirds, &HeightLaw::okamoto(5.0 / 6.0).unwrap(), 10, 0).unwrap();
    let perkins = estimate_dimension(&tree, &ScaleSchedule::for_tree(&tree), &policy).unwrap().slope;
    let t_perkins = t.elapsed();
    let perkins_ok = (perkins - 1.7712).abs() < 0.05 && t_perkins < Duration::from_secs(30);

    let t = Instant::now();
    let law = HeightLaw::iid_uniform(3).unwrap();
    let depth = 12;
    let slopes: Vec<f64> = (0..10u64)
        .map(|seed| {
            let tree = sample_tree(&thirds, &law, depth, seed).unwrap();
            estimate_dimension(&tree, &ScaleSchedule::for_tree(&tree), &policy).unwrap().slope
        })
        .collect();
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let t_uniform = t.elapsed();
    let uniform_ok = (mean - 1.2619).abs() < 0.07 && t_uniform < Duration::from_secs(30);

    let details = vec![
        format!(
            "Okamoto 5/6, depth 10: slope {perkins:.4} vs 1.7712 (|d| = {:.4}, tol 0.05), {:.2} s [{}]",
            (perkins - 1.7712).abs(),
            t_perkins.as_secs_f64(),
            mark(perkins_ok)
        ),
        format!(
            "uniform thirds, depth {depth}, 10 seeds: mean slope {mean:.4} vs 1.2619 (|d| = {:.4}, tol 0.07), {:.2} s [{}]",
            (mean - 1.2619).abs(),
            t_uniform.as_secs_f64(),
            mark(uniform_ok)
        ),
        format!("per-seed slopes: {}", slopes.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")),
    ];
    r.criterion(4, "empirical box-count slopes", perkins_ok && uniform_ok, t_perkins + t_uniform, &details);
}

fn criterion_5(r: &mut Report) {
    let t = Instant::now();
    let p = skewed();
    let law = skewed_law();
    let mo = closed_form(&law, &p);
    let s = solve_dimension(&mo, &p, 1e-12).unwrap().s;
    let trees = 2000;
    let cfg = DiagnosticsConfig { n_max: 8, n_trees: trees, seed: 2024, band_k: 4.0, decay_slack: 0.05, sandwich_trees: trees };
    let rep = martingale_diagnostics(&law, &p, &mo, s, &cfg).unwrap();

    let mut details = Vec::new();
    let mut means_ok = true;
    for l in &rep.levels {
        let ok = (l.mean_y - 1.0).abs() <= 4.0 * l.se_y + 1e-9;
        means_ok &= ok;
        details.push(format!("n = {}: mean Y_n = {:.5} +- {:.5} [{}]", l.n, l.mean_y, l.se_y, mark(ok)));
    }
    let a = alpha(&mo, &p, s);
    let (decay_ok, decay_line) = match &rep.decay {
        Some(d) => (d.rate <= a + 0.05, format!("fitted decay rate {:.4} over n = {}..={}, alpha + 0.05 = {:.4}", d.rate, d.n_range.0, d.n_range.1, a + 0.05)),
        None => (false, "no decay fit".to_string()),
    };
    details.push(format!("{decay_line} [{}]", mark(decay_ok)));
    let sw = &rep.sandwich;
    let stated_ok = sw.stated_failures == 0;
    let rigorous_ok = sw.rigorous_failures == 0;
    details.push(format!(
        "sandwich as stated (N >= X_n d^-ns / d, N <= X_n d^-ns + 2 d^-(n+1)): {} of {} pairs violate [{}]; worst lower/N = {:.3}",
        sw.stated_failures,
        sw.pairs,
        mark(stated_ok),
        sw.worst_stated_lower_ratio
    ));
    details.push(format!(
        "sandwich with derived constants (d/(1+2d), 2 d^(1-s), 4): {} of {} pairs violate [{}]",
        sw.rigorous_failures,
        sw.pairs,
        mark(rigorous_ok)
    ));
    let passed = means_ok && decay_ok && stated_ok && sw.pairs == trees * 8;
    r.criterion(5, "martingale suite, 2000 trees, n <= 8", passed, t.elapsed(), &details);
}

fn random_partition(rng: &mut StdRng, max_m: usize) -> Partition {
    let m = rng.random_range(2..=max_m);
    let w: Vec<u32> = (0..m).map(|_| rng.random_range(1..10)).collect();
    let total: u32 = w.iter().sum();
    let mut b = vec![0.0];
    let mut acc = 0;
    for x in &w[..m - 1] {
        acc += x;
        b.push(f64::from(acc) / f64::from(total));
    }
    b.push(1.0);
    Partition::new(b).unwrap()
}

fn random_coord(rng: &mut StdRng, delta: f64) -> f64 {
    match rng.random_range(0..3) {
        0 => rng.random::<f64>(),
        1 => rng.random_range(0..=(1.0 / delta).floor() as u32) as f64 * delta,
        _ => 1.0,
    }
}

fn criterion_6(r: &mut Report) {
    let t = Instant::now();
    let mut rng = StdRng::seed_from_u64(6);

    let mut worst_kraft: f64 = 0.0;
    let mut prefix_ok = true;
    for _ in 0..100 {
        let p = random_partition(&mut rng, 5);
        let n = rng.random_range(1..=3);
        let q = build_stopping_set(&p, n).unwrap();
        worst_kraft = worst_kraft.max((q.total_length() - 1.0).abs());
        worst_kraft = worst_kraft.max(partition_identity_check(&q, p.lengths()).unwrap());
        prefix_ok &= q.words.windows(2).all(|w| !w[0].is_prefix_of(&w[1]) && w[0] < w[1]);
    }
    let stopping_ok = prefix_ok && worst_kraft < 1e-9;

    let mut mismatches = 0;
    for _ in 0..500 {
        let delta = rng.random_range(0.03..0.6);
        let k = rng.random_range(0..12);
        let rects: Vec<Rect> = (0..k)
            .map(|_| {
                let (a, b, c, d) = (
                    random_coord(&mut rng, delta),
                    random_coord(&mut rng, delta),
                    random_coord(&mut rng, delta),
                    random_coord(&mut rng, delta),
                );
                Rect { x0: a.min(b), x1: a.max(b), y0: c.min(d), y1: c.max(d), rising: rng.random() }
            })
            .collect();
        if box_count_rects(&rects, delta).unwrap() != dense_grid_rects(&rects, delta).unwrap() {
            mismatches += 1;
        }
    }

    let mut bracket_violations = 0;
    let mut min_g1 = f64::INFINITY;
    let mut max_g2 = f64::NEG_INFINITY;
    for _ in 0..500 {
        let p = random_partition(&mut rng, 8);
        let y: Vec<f64> = (0..p.m() - 1).map(|_| rng.random_range(0.01..0.99)).collect();
        let det = closed_form(&HeightLaw::deterministic(y).unwrap(), &p).mean_a_values();
        let uni = closed_form(&HeightLaw::iid_uniform(p.m()).unwrap(), &p).mean_a_values();
        let w: f64 = rng.random();
        let mean: Vec<f64> = det.iter().zip(&uni).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        let g1 = dimension_function(&mean, p.lengths(), 1.0);
        let g2 = dimension_function(&mean, p.lengths(), 2.0);
        min_g1 = min_g1.min(g1);
        max_g2 = max_g2.max(g2);
        // Σ E a_i = 1 exactly for monotone ordinates, where rounding may leave g(1) at -1 ulp.
        if g1 < -1e-12 || g2 > 0.0 {
            bracket_violations += 1;
        }
    }
    let details = vec![
        format!("stopping sets, 100 partitions: prefix-free {}, max Kraft/identity residual {worst_kraft:.2e} [{}]", prefix_ok, mark(stopping_ok)),
        format!("box_count vs dense oracle, 500 rectangle sets: {mismatches} mismatches [{}]", mark(mismatches == 0)),
        format!(
            "bracket g(1) >= 0 >= g(2), 500 moment vectors: {bracket_violations} violations, min g(1) = {min_g1:.3e}, max g(2) = {max_g2:.3e} [{}]",
            mark(bracket_violations == 0)
        ),
    ];
    r.criterion(6, "property suites", stopping_ok && mismatches == 0 && bracket_violations == 0, t.elapsed(), &details);
}

fn criterion_7(r: &mut Report) {
    let t = Instant::now();
    let p = Partition::uniform(3).unwrap();
    let law = HeightLaw::iid_uniform(3).unwrap();
    let phi = compute_phi(&closed_form(&law, &p), &p).unwrap().phi;
    let probe = drift_probe(&p, &law, &DriftConfig { paths: 200, n: 2000, seed: 7 }).unwrap();
    let band = 4.0 * probe.std_error;
    let computed_ok = (probe.mean_drift - phi).abs() <= band;
    let literal = -0.8005;
    let literal_ok = (probe.mean_drift - literal).abs() <= band;
    let freq_ok = probe
        .digit_frequencies
        .iter()
        .zip(&probe.digit_std_errors)
        .all(|(f, se)| (f - 1.0 / 3.0).abs() <= 4.0 * se);
    let details = vec![
        format!("mean S_n/n = {:.5} +- {:.5}", probe.mean_drift, probe.std_error),
        format!("vs phi from the moments {phi:.5}: |d| = {:.5}, band {band:.5} [{}]", (probe.mean_drift - phi).abs(), mark(computed_ok)),
        format!("vs stated target {literal}: |d| = {:.5}, band {band:.5} [{}]", (probe.mean_drift - literal).abs(), mark(literal_ok)),
        format!(
            "digit frequencies {} vs 1/3 [{}]",
            probe
                .digit_frequencies
                .iter()
                .zip(&probe.digit_std_errors)
                .map(|(f, se)| format!("{f:.5} +- {se:.5}"))
                .collect::<Vec<_>>()
                .join(", "),
            mark(freq_ok)
        ),
    ];
    r.criterion(7, "drift probe, uniform thirds, 200 paths, n = 2000", literal_ok && freq_ok, t.elapsed(), &details);
}

fn criterion_8(r: &mut Report) {
    let t = Instant::now();
    let model = Model::parse(
        r#"{"partition": [0, 0.4, 0.6, 1], "heightlaw": {"family": "mirrored_beta", "alpha": 2, "beta": 1},
            "seed": 8, "depth": 13, "diagnose": {"n_max": 6, "trees": 500, "sandwich_trees": 20}}"#,
    )
    .unwrap();
    let base = cmd_diagnose(&model, 8, 13, 0.0).unwrap();
    let shifted = cmd_diagnose(&model, 8, 13, 0.2).unwrap();
    let flagged: Vec<String> = shifted
        .checks
        .iter()
        .filter(|c| c.name.starts_with("mean_y_") && !c.passed)
        .map(|c| c.name.clone())
        .collect();
    let details = vec![
        format!("unperturbed s = {:.5}: overall {}", base.s, if base.passed { "pass" } else { "fail" }),
        format!("s + 0.2 = {:.5}: overall {}, failing mean checks: {}", shifted.s, if shifted.passed { "pass" } else { "fail" }, flagged.join(", ")),
    ];
    let passed = !shifted.passed && !flagged.is_empty();
    r.criterion(8, "negative control: s + 0.2 is flagged", passed, t.elapsed(), &details);
}

fn main() -> ExitCode {
    let mut r = Report { failures: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    criterion_6(&mut r);
    criterion_7(&mut r);
    criterion_8(&mut r);
    let unexpected: Vec<u32> = r.failures.iter().copied().filter(|id| !KNOWN_FAILURES.contains(id)).collect();
    println!(
        "acceptance: {} of 8 criteria passed; failing: {:?}; unexpected failures: {:?}",
        8 - r.failures.len(),
        r.failures,
        unexpected
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
