use alloc::string::ToString;

use crate::data::{Advice, Demographics, InteractionRecord, SignedResponse};

pub fn demographics() -> Demographics {
    Demographics {
        age: 31.0,
        sex: 1,
        programming_experience: 0,
        ses: 5.0,
        ai_presence: 0.4,
        education: 6.0,
        ai_perception: 0.1,
    }
}

pub fn record(r1: f64, r2: f64, advice_prob: f64) -> InteractionRecord {
    InteractionRecord {
        participant_id: "p0".to_string(),
        task_id: "task".to_string(),
        question_id: "q0".to_string(),
        r1: SignedResponse::new(r1).unwrap(),
        r2: SignedResponse::new(r2).unwrap(),
        advice: Advice::from_prob(advice_prob).unwrap(),
        label: 1,
        demographics: demographics(),
    }
}
