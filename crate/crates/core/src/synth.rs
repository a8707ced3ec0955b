//! Seeded synthetic populations with a known, planted behaviour.
//!
//! Each question has a latent ease `e`; a participant's initial response is
//! `2 sigma(scale * (e + skill + noise)) - 1`. Advice is calibrated by
//! construction and more reliable on easier questions. The planted human
//! activates when the advice confidence exceeds their own by a margin and
//! then moves a fixed fraction of the way toward the advice.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Advice, Demographics, InteractionRecord, SignedResponse, N_FEATURES};
use crate::math::{sigmoid, sign_nonzero};
use crate::{Error, Result};

/// Ground-truth behaviour used to generate second responses. Activation
/// probability is `sigma(sharpness * (|2q - 1| - |r1| - margin))` and the
/// integration delta is `pull * (sign(r1) * (2q - 1) - |r1|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedBehavior {
    pub margin: f64,
    /// `None` gives a deterministic threshold.
    pub sharpness: Option<f64>,
    pub pull: f64,
    pub integration_noise: f64,
}

impl Default for PlantedBehavior {
    fn default() -> Self {
        Self { margin: 0.2, sharpness: Some(12.0), pull: 0.6, integration_noise: 0.05 }
    }
}

impl PlantedBehavior {
    pub fn activation_probability(&self, r1: f64, presented_prob: f64) -> f64 {
        let gap = libm::fabs(2.0 * presented_prob - 1.0) - libm::fabs(r1) - self.margin;
        match self.sharpness {
            Some(k) => sigmoid(k * gap),
            None => f64::from(u8::from(gap > 0.0)),
        }
    }

    pub fn integration_delta(&self, r1: f64, presented_prob: f64) -> f64 {
        self.pull * (sign_nonzero(r1) * (2.0 * presented_prob - 1.0) - libm::fabs(r1))
    }

    /// The same delta as a linear function of the model features
    /// (`pull * (2 f5 - f3 - f1)`).
    pub fn integration_weights(&self) -> [f64; N_FEATURES] {
        let mut w = [0.0; N_FEATURES];
        w[0] = -self.pull;
        w[2] = -self.pull;
        w[4] = 2.0 * self.pull;
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub participants: usize,
    pub questions: usize,
    pub ease_mean: f64,
    pub ease_std: f64,
    /// The advice belief for a question is `sigma(advice_slope * e + advice_shift)`.
    pub advice_slope: f64,
    pub advice_shift: f64,
    pub skill_std: f64,
    pub response_noise: f64,
    /// Slope applied to the latent score before the sigmoid.
    pub response_scale: f64,
    pub behavior: PlantedBehavior,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 60,
            questions: 32,
            ease_mean: 0.8,
            ease_std: 1.0,
            advice_slope: 1.0,
            advice_shift: 0.8,
            skill_std: 0.5,
            response_noise: 1.5,
            response_scale: 0.5,
            behavior: PlantedBehavior::default(),
            seed: 0,
        }
    }
}

fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
    Normal::new(mean, std).map_err(|_| Error::OutOfRange { what: "normal std", value: std })
}

fn demographics(rng: &mut ChaCha8Rng) -> Demographics {
    Demographics {
        age: f64::from(rng.random_range(18u8..=70)),
        sex: u8::from(rng.random_bool(0.5)),
        programming_experience: u8::from(rng.random_bool(0.3)),
        ses: f64::from(rng.random_range(1u8..=10)),
        ai_presence: f64::from(rng.random_range(0u8..=4)) / 4.0,
        education: f64::from(rng.random_range(1u8..=8)),
        ai_perception: f64::from(rng.random_range(-4i8..=4)) / 4.0,
    }
}

/// Calibrated advice for one question: the model believes `c` for the label
/// it favours, which is correct with probability `c`.
fn question_advice(rng: &mut ChaCha8Rng, belief: f64) -> Result<Advice> {
    let p = if rng.random_bool(belief) { belief } else { 1.0 - belief };
    Advice::from_prob(p)
}

/// Generates `participants * questions` records for task `task_id`.
pub fn generate(config: &SynthConfig, task_id: &str) -> Result<Vec<InteractionRecord>> {
    if config.participants == 0 || config.questions == 0 {
        return Err(Error::Empty("synthetic population size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ease_dist = normal(config.ease_mean, config.ease_std)?;
    let skill_dist = normal(0.0, config.skill_std)?;
    let noise_dist = normal(0.0, config.response_noise)?;
    let int_noise = normal(0.0, config.behavior.integration_noise)?;

    let mut questions: Vec<(f64, Advice, u8)> = Vec::with_capacity(config.questions);
    for _ in 0..config.questions {
        let ease = ease_dist.sample(&mut rng);
        let advice = question_advice(&mut rng, sigmoid(config.advice_slope * ease + config.advice_shift))?;
        let label = u8::from(rng.random_bool(0.5));
        questions.push((ease, advice, label));
    }

    let mut records = Vec::with_capacity(config.participants * config.questions);
    for p in 0..config.participants {
        let demo = demographics(&mut rng);
        let skill = skill_dist.sample(&mut rng);
        for (qi, &(ease, advice, label)) in questions.iter().enumerate() {
            let z = config.response_scale * (ease + skill + noise_dist.sample(&mut rng));
            let r1 = SignedResponse::new(2.0 * sigmoid(z) - 1.0)?.value();
            let q = advice.prob();
            let activate = rng.random_bool(config.behavior.activation_probability(r1, q));
            let r2 = if activate {
                let d = config.behavior.integration_delta(r1, q) + int_noise.sample(&mut rng);
                (r1 + sign_nonzero(r1) * d).clamp(-1.0, 1.0)
            } else {
                r1
            };
            records.push(InteractionRecord {
                participant_id: format!("p{p:03}"),
                task_id: task_id.into(),
                question_id: format!("q{qi:02}"),
                r1: SignedResponse::new(r1)?,
                r2: SignedResponse::new(r2)?,
                advice,
                label,
                demographics: demo,
            });
        }
    }
    Ok(records)
}
