#![allow(dead_code)]

use humancal_core::behavior::BehaviorModel;
use humancal_core::data::{Advice, Demographics, FeatureStats, InteractionRecord, SignedResponse, N_FEATURES};
use humancal_core::neural::{Head, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn demographics() -> Demographics {
    Demographics {
        age: 40.0,
        sex: 0,
        programming_experience: 1,
        ses: 6.0,
        ai_presence: 0.5,
        education: 4.0,
        ai_perception: -0.25,
    }
}

pub fn record(r1: f64, r2: f64, advice_prob: f64) -> InteractionRecord {
    InteractionRecord {
        participant_id: "p".into(),
        task_id: "t".into(),
        question_id: "q".into(),
        r1: SignedResponse::new(r1).unwrap(),
        r2: SignedResponse::new(r2).unwrap(),
        advice: Advice::from_prob(advice_prob).unwrap(),
        label: 1,
        demographics: demographics(),
    }
}

/// Records with uniformly drawn responses and advice.
pub fn random_records(n: usize, seed: u64) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let r1 = rng.random_range(-0.95..0.95);
            let r2 = rng.random_range(-0.95..0.95);
            let a = rng.random_range(0.05..0.95);
            let mut r = record(r1, r2, a);
            r.participant_id = format!("p{}", i % 7);
            r.question_id = format!("q{i}");
            r
        })
        .collect()
}

/// Randomly initialised standard networks, for gradient checks.
pub fn random_behavior(seed: u64) -> BehaviorModel {
    BehaviorModel {
        activation: Mlp::standard(Head::Sigmoid, seed),
        integration: Mlp::standard(Head::Linear, seed + 1000),
        delta: 0.02,
        stats: FeatureStats::identity(),
    }
}

/// Activation rises with advice confidence; integration pulls toward the advice.
pub fn planted_behavior() -> BehaviorModel {
    let mut act = [0.0; N_FEATURES];
    act[0] = -3.0;
    act[1] = 6.0;
    let mut int = [0.0; N_FEATURES];
    int[0] = -0.5;
    int[2] = -0.5;
    int[4] = 1.0;
    BehaviorModel {
        activation: Mlp::affine(&act, -3.5, Head::Sigmoid),
        integration: Mlp::affine(&int, 0.0, Head::Linear),
        delta: 0.02,
        stats: FeatureStats::identity(),
    }
}
