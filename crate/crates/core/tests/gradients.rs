mod common;

use humancal_core::neural::{Head, Loss, Mlp};
use humancal_core::optimizer::{objective, objective_and_grad};
use humancal_core::transform::TransformParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()).max(1e-4)
}

fn loss_at(net: &Mlp, x: &[f64], loss: Loss, target: f64) -> f64 {
    net.gradients(x, loss, target).unwrap().loss
}

#[test]
fn network_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let (head, loss) = if case % 2 == 0 { (Head::Sigmoid, Loss::Bce) } else { (Head::Linear, Loss::Mse) };
        let net = Mlp::standard(head, rng.random());
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let target = match loss {
            Loss::Bce => f64::from(u8::from(rng.random_bool(0.5))),
            Loss::Mse => rng.random_range(-1.5..1.5),
        };
        let g = net.gradients(&x, loss, target).unwrap();

        let base = net.params();
        for i in 0..base.len() {
            let mut p = base.clone();
            let mut m = net.clone();
            p[i] = base[i] + H;
            m.set_params(&p);
            let up = loss_at(&m, &x, loss, target);
            p[i] = base[i] - H;
            m.set_params(&p);
            let down = loss_at(&m, &x, loss, target);
            let fd = (up - down) / (2.0 * H);
            assert!(close(g.params[i], fd, 1e-4), "case {case} param {i}: {} vs {fd}", g.params[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] = x[i] + H;
            let up = loss_at(&net, &xp, loss, target);
            xp[i] = x[i] - H;
            let down = loss_at(&net, &xp, loss, target);
            let fd = (up - down) / (2.0 * H);
            assert!(close(g.input[i], fd, 1e-4), "case {case} input {i}: {} vs {fd}", g.input[i]);
        }
    }
}

#[test]
fn output_input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let net = Mlp::standard(Head::Sigmoid, rng.random());
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = net.output_and_input_grad(&x).unwrap();
        for i in 0..12 {
            let mut xp = x.clone();
            xp[i] += H;
            let up = net.forward(&xp).unwrap();
            xp[i] -= 2.0 * H;
            let down = net.forward(&xp).unwrap();
            assert!(close(g[i], (up - down) / (2.0 * H), 1e-4));
        }
    }
}

#[test]
fn transform_objective_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..20 {
        let behavior = common::random_behavior(case);
        let records = common::random_records(10, case + 50);
        let alpha = rng.random_range(0.3..2.5);
        let beta = rng.random_range(0.05..1.5);
        let (obj, g) = objective_and_grad(&behavior, alpha, beta, &records).unwrap();
        let f = |a: f64, b: f64| objective(&behavior, &TransformParams::SigmoidLike { alpha: a, beta: b }, &records).unwrap();
        assert!((obj - f(alpha, beta)).abs() < 1e-12);
        let fa = (f(alpha + H, beta) - f(alpha - H, beta)) / (2.0 * H);
        let fb = (f(alpha, beta + H) - f(alpha, beta - H)) / (2.0 * H);
        assert!(close(g[0], fa, 1e-3), "case {case} alpha: {} vs {fa}", g[0]);
        assert!(close(g[1], fb, 1e-3), "case {case} beta: {} vs {fb}", g[1]);
    }
}

#[test]
fn transform_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let a = rng.random_range(-6.0..6.0);
        let alpha = rng.random_range(0.1..3.0);
        let beta = rng.random_range(0.0..2.0);
        let t = |al: f64, be: f64| TransformParams::SigmoidLike { alpha: al, beta: be }.apply(humancal_core::data::AdviceLogit(a));
        let (ga, gb) = TransformParams::SigmoidLike { alpha, beta }.grad(humancal_core::data::AdviceLogit(a));
        assert!(close(ga, (t(alpha + H, beta) - t(alpha - H, beta)) / (2.0 * H), 1e-6));
        assert!(close(gb, (t(alpha, beta + H) - t(alpha, beta - H)) / (2.0 * H), 1e-6));
    }
}
