use selfaffine::heightlaw::{moments, HeightLaw, McConfig, RatioMoments};
use selfaffine::symbolic::Partition;
use selfaffine::theory::{alpha, compute_phi, second_moment_constant, solve_dimension, DiffClass};

fn thirds() -> Partition {
    Partition::uniform(3).unwrap()
}

fn exact(law: &HeightLaw, p: &Partition) -> RatioMoments {
    let mo = moments(law, p, &McConfig::default()).unwrap();
    assert!(!mo.is_monte_carlo());
    mo
}

/// Moments of `a = (Y, |1 - 2Y|, Y)` with `Y ~ Beta(2, 1)`, integrated by hand:
/// `E Y = 2/3`, `E|1-2Y| = 1/2`, `E log Y = -1/2`, `E log|1-2Y| = -1`,
/// `E Y² = 1/2`, `E(1-2Y)² = 1/3`, `E Y|1-2Y| = 3/8`.
fn skewed_model_moments() -> RatioMoments {
    let cross = vec![vec![0.5, 0.375, 0.5], vec![0.375, 1.0 / 3.0, 0.375], vec![0.5, 0.375, 0.5]];
    RatioMoments::exact(&[2.0 / 3.0, 0.5, 2.0 / 3.0], &[-0.5, -1.0, -0.5], &[0.5, 1.0 / 3.0, 0.5], &cross).unwrap()
}

#[test]
fn skewed_model_dimension_and_phi() {
    let p = Partition::new(vec![0.0, 0.4, 0.6, 1.0]).unwrap();
    let mo = skewed_model_moments();
    let s = solve_dimension(&mo, &p, 1e-12).unwrap().s;
    assert!((s - 1.561).abs() < 1e-3, "s = {s}");
    let phi = compute_phi(&mo, &p).unwrap();
    assert!((phi.phi - 0.455).abs() < 1e-3, "phi = {}", phi.phi);
    assert_eq!(phi.classification, DiffClass::NonDifferentiable);

    let lib = exact(&HeightLaw::mirrored_beta(2.0, 1.0).unwrap(), &p);
    for (a, b) in lib.mean_a_values().iter().zip(mo.mean_a_values()) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in lib.mean_log_a_values().iter().zip(mo.mean_log_a_values()) {
        assert!((a - b).abs() < 1e-12);
    }
    for i in 0..3 {
        for j in 0..3 {
            assert!((lib.cross_value(i, j) - mo.cross_value(i, j)).abs() < 1e-14);
        }
    }
    // α = 2·(1/2)·0.4^{2(s-1)} + (1/3)·0.2^{2(s-1)}
    let want = 0.4f64.powf(2.0 * (s - 1.0)) + 0.2f64.powf(2.0 * (s - 1.0)) / 3.0;
    assert!((alpha(&lib, &p, s) - want).abs() < 1e-12);
    assert!((alpha(&lib, &p, s) - 0.4124).abs() < 1e-3);
    let (u, v) = (0.4f64.powf(s - 1.0), 0.2f64.powf(s - 1.0));
    // C = E(2uY + v|1-2Y|)² = 4u²/2 + 4uv·3/8 + v²/3
    let c = 2.0 * u * u + 1.5 * u * v + v * v / 3.0;
    assert!((second_moment_constant(&lib, &p, s) - c).abs() < 1e-12);
}

#[test]
fn okamoto_dimension_closed_form() {
    for k in 0..10 {
        let a = 0.5 + 0.05 * k as f64;
        let mo = exact(&HeightLaw::okamoto(a).unwrap(), &thirds());
        let s = solve_dimension(&mo, &thirds(), 1e-13).unwrap().s;
        let want = 1.0 + (4.0 * a - 1.0).ln() / 3f64.ln();
        assert!((s - want).abs() < 1e-9, "alpha {a}: {s} vs {want}");
    }
    // Below 1/2 the graph is rectifiable and the dimension is 1.
    let mo = exact(&HeightLaw::okamoto(0.3).unwrap(), &thirds());
    assert!((solve_dimension(&mo, &thirds(), 1e-13).unwrap().s - 1.0).abs() < 1e-9);
}

#[test]
fn uniform_dimension_closed_form() {
    for m in 3..=10 {
        let p = Partition::uniform(m).unwrap();
        let mo = exact(&HeightLaw::iid_uniform(m).unwrap(), &p);
        let s = solve_dimension(&mo, &p, 1e-13).unwrap().s;
        let mf = m as f64;
        let want = 1.0 + ((mf + 1.0).ln() - 3f64.ln()) / mf.ln();
        assert!((s - want).abs() < 1e-9, "m = {m}");
    }
    let p = thirds();
    let s = solve_dimension(&exact(&HeightLaw::iid_uniform(3).unwrap(), &p), &p, 1e-13).unwrap().s;
    assert!((s - 1.2619).abs() < 1e-4);
}

#[test]
fn uniform_phi_from_log_moments() {
    // E log U = -1 at the ends, E log|U - V| = -3/2 inside, l_i = 1/m.
    for m in 3..=10 {
        let p = Partition::uniform(m).unwrap();
        let phi = compute_phi(&exact(&HeightLaw::iid_uniform(m).unwrap(), &p), &p).unwrap().phi;
        let mf = m as f64;
        let want = (2.0 * (-1.0) + (mf - 2.0) * (-1.5)) / mf + mf.ln();
        assert!((phi - want).abs() < 1e-12, "m = {m}: {phi} vs {want}");
    }
    let p = thirds();
    let phi = compute_phi(&exact(&HeightLaw::iid_uniform(3).unwrap(), &p), &p).unwrap();
    assert!(phi.phi < 0.0);
    assert_eq!(phi.classification, DiffClass::Differentiable);
}

#[test]
fn okamoto_phi_values() {
    let p = thirds();
    let perkins = compute_phi(&exact(&HeightLaw::okamoto(5.0 / 6.0).unwrap(), &p), &p).unwrap().phi;
    let want = 3f64.ln() + (2.0 * (5.0f64 / 6.0).ln() + (2.0f64 / 3.0).ln()) / 3.0;
    assert!((perkins - want).abs() < 1e-12);
    assert!((perkins - 0.8419).abs() < 1e-4);

    let staircase = compute_phi(&exact(&HeightLaw::okamoto(0.5).unwrap(), &p), &p).unwrap();
    assert_eq!(staircase.phi, f64::NEG_INFINITY);
    assert_eq!(staircase.classification, DiffClass::Differentiable);
    assert_eq!(staircase.degenerate_indices, vec![1]);
}
