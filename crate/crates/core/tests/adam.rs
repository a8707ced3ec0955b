use humancal_core::neural::{train_observed, Adam, Example, Head, Loss, Mlp, TrainConfig};

/// Adam on one scalar, written out longhand.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, p: f64, g: f64, c: &TrainConfig) -> f64 {
        self.t += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let m_hat = self.m / (1.0 - c.beta1.powi(self.t));
        let v_hat = self.v / (1.0 - c.beta2.powi(self.t));
        p - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon)
    }
}

#[test]
fn one_epoch_is_one_step_per_batch() {
    // A bias-only network: one input fixed at zero, so the weight gradient vanishes
    // and the bias is the single effective parameter.
    let model = Mlp::zeros(&[1, 1], Head::Linear);
    let train: Vec<Example> = (0..10).map(|_| Example { input: vec![0.0], target: 0.8 }).collect();
    let config = TrainConfig { learning_rate: 0.05, batch_size: 4, max_epochs: 1, patience: 1, ..TrainConfig::default() };
    let mut seen = Vec::new();
    let (_, history) = train_observed(model, &train, &train, Loss::Mse, &config, |_, m| seen.push(m.params())).unwrap();
    assert_eq!(history.steps, 3);
    assert_eq!(seen.len(), 3);

    let mut oracle = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
    let mut b = 0.0;
    for params in &seen {
        let g = 2.0 * (b - 0.8);
        b = oracle.step(b, g, &config);
        assert_eq!(params[0], 0.0);
        assert!((params[1] - b).abs() < 1e-15, "{} vs {b}", params[1]);
    }
}

#[test]
fn first_step_moves_by_learning_rate() {
    let mut adam = Adam::new(2, 0.01, 0.9, 0.999, 1e-8);
    let mut p = [1.0, -1.0];
    adam.step(&mut p, &[3.0, -0.5]);
    assert!((p[0] - 0.99).abs() < 1e-9);
    assert!((p[1] + 0.99).abs() < 1e-9);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn small_learning_rate_training_loss_does_not_increase_in_first_epoch() {
    let model = Mlp::standard(Head::Linear, 3);
    let train: Vec<Example> = (0..64)
        .map(|i| {
            let x: Vec<f64> = (0..12).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5).collect();
            let t = x[0] - 0.5 * x[3] + 0.2;
            Example { input: x, target: t }
        })
        .collect();
    let config = TrainConfig { learning_rate: 1e-4, batch_size: 64, max_epochs: 1, ..TrainConfig::default() };
    let initial = model.mean_loss(&train, Loss::Mse);
    let mut losses = vec![initial];
    train_observed(model, &train, &train, Loss::Mse, &config, |_, m| losses.push(m.mean_loss(&train, Loss::Mse))).unwrap();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
}
