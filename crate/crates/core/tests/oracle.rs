use humancal_core::oracle::{
    delta_heatmap, expected_loss, open_unit_grid, optimal_advice, ActivationRule, CalibrationMap, OracleSetting,
};

/// Exhaustive search over every same-label point `k * step` plus `a` itself.
fn brute_force(a: f64, r1: f64, s: &OracleSetting) -> (f64, f64) {
    let mut best = (a, expected_loss(a, a, r1, s));
    let n = (1.0 / s.step).round() as usize;
    for k in 1..n {
        let x = k as f64 * s.step;
        let same_side = (a > 0.5 && x > 0.5) || (a < 0.5 && x < 0.5) || a == 0.5;
        if !same_side {
            continue;
        }
        let l = expected_loss(x, a, r1, s);
        if l < best.1 {
            best = (x, l);
        }
    }
    best
}

fn sign(x: f64) -> i8 {
    if x > 1e-12 {
        1
    } else if x < -1e-12 {
        -1
    } else {
        0
    }
}

#[test]
fn combined_example_point_matches_brute_force() {
    let s = OracleSetting::combined();
    let a_star = optimal_advice(0.8, 0.6, &s);
    let (bf, bf_loss) = brute_force(0.8, 0.6, &s);
    let ls_loss = expected_loss(a_star, 0.8, 0.6, &s);
    assert!((ls_loss - bf_loss).abs() < 1e-12, "line search {a_star} ({ls_loss}) vs grid {bf} ({bf_loss})");
    // r1 = 0.6 with f = square gives p_r1 = 0.36: the loss of staying is the
    // cross-entropy of 0.36 against 0.6.
    let stay = -(0.36 * 0.6f64.ln() + 0.64 * 0.4f64.ln());
    assert!((expected_loss(0.5 + 1e-9, 0.8, 0.6, &s) - stay).abs() < 1e-12);
}

#[test]
fn biased_band_has_no_modification() {
    let s = OracleSetting::biased(0.1);
    let r1s = open_unit_grid(101);
    let mut a = 0.45 + s.step;
    while a < 0.55 - 1e-9 {
        for &r1 in &r1s {
            assert_eq!(optimal_advice(a, r1, &s), a, "a={a} r1={r1}");
        }
        a += s.step;
    }
}

#[test]
fn biased_setting_only_increases_confidence() {
    let s = OracleSetting::biased(0.1);
    let g = open_unit_grid(51);
    let h = delta_heatmap(&s, &g, &g).unwrap();
    for (i, row) in h.values.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            let a = g[j];
            if a > 0.5 {
                assert!(d >= 0.0, "r1={} a={a} d={d}", g[i]);
            } else if a < 0.5 {
                assert!(d <= 0.0, "r1={} a={a} d={d}", g[i]);
            }
        }
    }
}

#[test]
fn line_search_agrees_with_brute_force_everywhere() {
    for s in [OracleSetting::combined(), OracleSetting::biased(0.1), OracleSetting::miscalibrated()] {
        let g = open_unit_grid(101);
        let h = delta_heatmap(&s, &g, &g).unwrap();
        let mut agree = 0usize;
        for (i, &r1) in g.iter().enumerate() {
            for (j, &a) in g.iter().enumerate() {
                let (bf, bf_loss) = brute_force(a, r1, &s);
                let ls = a + h.values[i][j];
                let ls_loss = expected_loss(ls, a, r1, &s);
                // One grid step of cross-entropy slope around either optimum.
                let slope = [bf - s.step, bf, bf + s.step, ls - s.step, ls, ls + s.step]
                    .iter()
                    .map(|&x| {
                        let x = x.clamp(1e-6, 1.0 - 1e-6);
                        (-a / x + (1.0 - a) / (1.0 - x)).abs()
                    })
                    .fold(0.0, f64::max);
                assert!(
                    (ls_loss - bf_loss).abs() <= s.step * slope + 1e-12,
                    "{s:?} a={a} r1={r1}: {ls} ({ls_loss}) vs {bf} ({bf_loss})"
                );
                if sign(ls - a) == sign(bf - a) {
                    agree += 1;
                }
            }
        }
        let frac = agree as f64 / (g.len() * g.len()) as f64;
        assert!(frac >= 0.95, "{s:?}: sign agreement {frac}");
    }
}

#[test]
fn miscalibrated_sign_pattern() {
    // With f(r1) = r1^2 the person is overconfident when leaning to label 1
    // and underconfident when leaning to label 0. Optimal advice is more
    // confident in the first region and less confident in the second.
    let s = OracleSetting::miscalibrated();
    let g = open_unit_grid(51);
    let h = delta_heatmap(&s, &g, &g).unwrap();
    let (mut under, mut over) = (0, 0);
    for (i, &r1) in g.iter().enumerate() {
        for (j, &a) in g.iter().enumerate() {
            let d = h.values[i][j];
            let toward_label = if a > 0.5 { d } else { -d };
            if a == 0.5 || toward_label.abs() < 1e-12 {
                continue;
            }
            if r1 < 0.5 {
                assert!(toward_label < 0.0, "r1={r1} a={a} d={d}");
                under += 1;
            } else {
                assert!(toward_label > 0.0, "r1={r1} a={a} d={d}");
                over += 1;
            }
        }
    }
    assert!(under > 50 && over > 50, "under {under} over {over}");
}

#[test]
fn label_flip_antisymmetry_for_symmetric_setting() {
    let s = OracleSetting::biased(0.1);
    let g = open_unit_grid(51);
    let h = delta_heatmap(&s, &g, &g).unwrap();
    let n = g.len();
    for i in 0..n {
        for j in 0..n {
            let d = h.values[i][j];
            let mirrored = h.values[n - 1 - i][n - 1 - j];
            assert!((d + mirrored).abs() < 1e-9, "r1={} a={} {d} vs {mirrored}", g[i], g[j]);
        }
    }
}

#[test]
fn invariants_hold_on_grid() {
    let settings = [
        OracleSetting::combined(),
        OracleSetting::biased(-0.2),
        OracleSetting::biased(0.3),
        OracleSetting::new(CalibrationMap::Identity, ActivationRule::AlwaysOn),
    ];
    for s in settings {
        for &a in &open_unit_grid(60) {
            for &r1 in &open_unit_grid(60) {
                let x = optimal_advice(a, r1, &s);
                assert_eq!(x > 0.5, a > 0.5);
                assert!(expected_loss(x, a, r1, &s) <= expected_loss(a, a, r1, &s));
            }
        }
    }
}

#[test]
fn refining_step_does_not_worsen_beyond_one_step() {
    let coarse = OracleSetting::combined();
    let fine = OracleSetting { step: coarse.step / 2.0, ..coarse };
    for &a in &open_unit_grid(40) {
        for &r1 in &open_unit_grid(40) {
            let lc = expected_loss(optimal_advice(a, r1, &coarse), a, r1, &coarse);
            let lf = expected_loss(optimal_advice(a, r1, &fine), a, r1, &fine);
            // Cross-entropy slope is bounded by 1 / min(x, 1 - x) on the grid.
            let slack = coarse.step / a.min(1.0 - a).min(0.05);
            assert!(lf <= lc + slack, "a={a} r1={r1}: {lf} vs {lc}");
        }
    }
}

#[test]
fn calibrated_follow_when_more_confident_never_modifies_near_half() {
    let s = OracleSetting::biased(0.0);
    let g = open_unit_grid(101);
    let h = delta_heatmap(&s, &g, &g).unwrap();
    let mid = g.iter().position(|&x| x == 0.5).unwrap();
    assert!(h.values.iter().all(|row| row[mid] == 0.0));
}

#[test]
fn heatmap_runtime_at_full_resolution() {
    let g = open_unit_grid(101);
    let t = std::time::Instant::now();
    let h = delta_heatmap(&OracleSetting::combined(), &g, &g).unwrap();
    assert_eq!(h.values.len(), 101);
    assert!(t.elapsed().as_secs_f64() < 60.0);
}
