//! Two-stage experiment protocol as an event-sourced state machine.
//!
//! Every accepted command yields exactly one [`Event`]; [`Session::replay`]
//! rebuilds a session from its log. Responses arrive on the displayed scale
//! (`+1` is the right end of the slider) and are stored toward the correct
//! label.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Advice, Demographics, InteractionRecord, SignedResponse};
use crate::transform::TransformParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub advice: Advice,
    /// True class, 0 or 1.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub questions: Vec<Question>,
    pub manipulation_answer: String,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::Empty("task questions"));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for q in &self.questions {
            if q.label > 1 {
                return Err(Error::Protocol(format!("question {} has label {}", q.id, q.label)));
            }
            if !seen.insert(q.id.as_str()) {
                return Err(Error::Protocol(format!("duplicate question id {}", q.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assignment {
    /// Uniform over the configured arms.
    Random { seed: u64 },
    Forced { arm: TransformParams, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyStage {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusResponse {
    R1,
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonusConfig {
    pub threshold: f64,
    pub rate: f64,
    pub response: BonusResponse,
}

impl Default for BonusConfig {
    fn default() -> Self {
        Self { threshold: 0.3, rate: 0.3, response: BonusResponse::R1 }
    }
}

impl BonusConfig {
    pub fn bonus(&self, score: f64) -> f64 {
        if score < self.threshold {
            0.0
        } else {
            self.rate * score
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Instructions,
    ManipulationCheck,
    PreSurvey,
    Response1 { index: usize },
    Response2 { index: usize },
    PostSurvey,
    Debrief,
    Complete,
}

/// Advice as shown for one question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServedAdvice {
    /// Stored advice probability toward the correct label.
    pub raw_prob: f64,
    /// Transformed probability toward the correct label.
    pub presented_prob: f64,
    /// Presented advice on the displayed `[-1, 1]` slider.
    pub presented_value: f64,
    /// Label shown at the right end of the slider.
    pub right_label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        session_id: String,
        participant_id: String,
        task_id: String,
        arm: TransformParams,
        order: Vec<usize>,
        right_labels: Vec<u8>,
        demographics: Demographics,
    },
    InstructionsAcknowledged,
    ManipulationCheck { answer: String, passed: bool },
    Survey { stage: SurveyStage, answers: BTreeMap<String, f64> },
    Response1 { question_id: String, displayed: f64, r1: f64 },
    AdviceServed { question_id: String, advice: ServedAdvice },
    Response2 { question_id: String, displayed: f64, r2: f64 },
    Finalized { score: f64, bonus: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub r1: Option<f64>,
    pub advice: Option<ServedAdvice>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub task_id: String,
    pub arm: TransformParams,
    /// Question indices in presentation order.
    pub order: Vec<usize>,
    /// Right-end label per question index.
    pub right_labels: Vec<u8>,
    pub demographics: Demographics,
    pub stage: Stage,
    /// Per question index.
    pub answers: Vec<Answer>,
    pub surveys: BTreeMap<String, f64>,
    pub bonus: Option<f64>,
    pub score: Option<f64>,
    pub manipulation_attempts: u32,
    pub next_seq: u64,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Generator for a participant's arm, order and orientation.
pub fn session_rng(seed: u64, participant_id: &str, task_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(&[&seed.to_le_bytes(), participant_id.as_bytes(), task_id.as_bytes()]))
}

fn protocol_err(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

fn check_displayed(v: f64) -> Result<()> {
    if v.is_finite() && (-1.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange { what: "slider response", value: v })
    }
}

/// Value toward the correct label for a slider position.
fn to_signed(displayed: f64, right_label: u8, label: u8) -> f64 {
    if right_label == label {
        displayed
    } else {
        -displayed
    }
}

/// Presented probability of `question` under `arm`. The baseline arm returns
/// the stored probability unchanged.
pub fn present(arm: &TransformParams, advice: Advice) -> f64 {
    if arm.is_baseline() {
        advice.prob()
    } else {
        arm.apply(advice.logit())
    }
}

impl Session {
    /// Draws the arm, question order and slider orientation and returns the
    /// new session with its creation event.
    pub fn create(
        task: &Task,
        arms: &[TransformParams],
        session_id: &str,
        participant_id: &str,
        demographics: Demographics,
        assignment: &Assignment,
        now_ms: u64,
    ) -> Result<(Self, Event)> {
        task.validate()?;
        demographics.validate()?;
        let (arm, seed) = match assignment {
            Assignment::Random { seed } => {
                if arms.is_empty() {
                    return Err(Error::Empty("arms for random assignment"));
                }
                (None, *seed)
            }
            Assignment::Forced { arm, seed } => {
                arm.validate()?;
                (Some(*arm), *seed)
            }
        };
        let mut rng = session_rng(seed, participant_id, &task.id);
        let arm = match arm {
            Some(a) => a,
            None => arms[rng.random_range(0..arms.len())],
        };
        let mut order: Vec<usize> = (0..task.questions.len()).collect();
        order.shuffle(&mut rng);
        let right_labels = (0..task.questions.len()).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let kind = EventKind::SessionCreated {
            session_id: session_id.into(),
            participant_id: participant_id.into(),
            task_id: task.id.clone(),
            arm,
            order,
            right_labels,
            demographics,
        };
        let event = Event { seq: 0, timestamp_ms: now_ms, kind };
        let session = Self::from_created(&event)?;
        Ok((session, event))
    }

    fn from_created(event: &Event) -> Result<Self> {
        match &event.kind {
            EventKind::SessionCreated { session_id, participant_id, task_id, arm, order, right_labels, demographics } => {
                let n = order.len();
                let mut sorted = order.clone();
                sorted.sort_unstable();
                if sorted != (0..n).collect::<Vec<_>>() || right_labels.len() != n || event.seq != 0 {
                    return Err(protocol_err("malformed session creation event"));
                }
                Ok(Self {
                    session_id: session_id.clone(),
                    participant_id: participant_id.clone(),
                    task_id: task_id.clone(),
                    arm: *arm,
                    order: order.clone(),
                    right_labels: right_labels.clone(),
                    demographics: *demographics,
                    stage: Stage::Instructions,
                    answers: alloc::vec![Answer::default(); n],
                    surveys: BTreeMap::new(),
                    bonus: None,
                    score: None,
                    manipulation_attempts: 0,
                    next_seq: 1,
                })
            }
            _ => Err(protocol_err("log does not start with session creation")),
        }
    }

    /// Rebuilds a session from its full event log.
    pub fn replay(task: &Task, events: &[Event]) -> Result<Self> {
        let (first, rest) = events.split_first().ok_or(Error::Empty("session events"))?;
        let mut s = Self::from_created(first)?;
        if s.order.len() != task.questions.len() {
            return Err(protocol_err("log does not match task"));
        }
        for e in rest {
            if e.seq != s.next_seq {
                return Err(protocol_err(format!("sequence gap at {} (expected {})", e.seq, s.next_seq)));
            }
            s.apply(task, &e.kind)?;
            s.next_seq += 1;
        }
        Ok(s)
    }

    pub fn is_complete(&self) -> bool {
        self.stage == Stage::Complete
    }

    /// Question index currently asked, if any.
    pub fn current_question(&self) -> Option<usize> {
        match self.stage {
            Stage::Response1 { index } | Stage::Response2 { index } => Some(self.order[index]),
            _ => None,
        }
    }

    fn first_question_stage(&self) -> Stage {
        Stage::Response1 { index: 0 }
    }

    fn question_index(&self, task: &Task, question_id: &str) -> Result<usize> {
        task.questions
            .iter()
            .position(|q| q.id == question_id)
            .ok_or_else(|| protocol_err(format!("unknown question {question_id}")))
    }

    fn emit(&mut self, task: &Task, kind: EventKind, now_ms: u64) -> Result<Event> {
        self.apply(task, &kind)?;
        let event = Event { seq: self.next_seq, timestamp_ms: now_ms, kind };
        self.next_seq += 1;
        Ok(event)
    }

    fn wrong_stage(&self, what: &str) -> Error {
        protocol_err(format!("{what} not accepted at stage {:?}", self.stage))
    }

    /// Transition function shared by commands and replay.
    fn apply(&mut self, task: &Task, kind: &EventKind) -> Result<()> {
        match kind {
            EventKind::SessionCreated { .. } => return Err(protocol_err("duplicate session creation")),
            EventKind::InstructionsAcknowledged => {
                if self.stage != Stage::Instructions {
                    return Err(self.wrong_stage("instructions acknowledgement"));
                }
                self.stage = Stage::ManipulationCheck;
            }
            EventKind::ManipulationCheck { passed, .. } => {
                if self.stage != Stage::ManipulationCheck {
                    return Err(self.wrong_stage("manipulation check"));
                }
                self.manipulation_attempts += 1;
                self.stage = if *passed { Stage::PreSurvey } else { Stage::Instructions };
            }
            EventKind::Survey { stage, answers } => {
                let next = match (stage, self.stage) {
                    (SurveyStage::Pre, Stage::PreSurvey) => self.first_question_stage(),
                    (SurveyStage::Post, Stage::PostSurvey) => Stage::Debrief,
                    _ => return Err(self.wrong_stage("survey")),
                };
                let prefix = match stage {
                    SurveyStage::Pre => "pre.",
                    SurveyStage::Post => "post.",
                };
                for (k, v) in answers {
                    if !v.is_finite() {
                        return Err(Error::NonFinite("survey answer"));
                    }
                    self.surveys.insert(format!("{prefix}{k}"), *v);
                }
                self.stage = next;
            }
            EventKind::Response1 { question_id, r1, .. } => {
                let qi = self.question_index(task, question_id)?;
                match self.stage {
                    Stage::Response1 { index } if self.order[index] == qi => {
                        SignedResponse::new(*r1)?;
                        self.answers[qi].r1 = Some(*r1);
                    }
                    _ => return Err(self.wrong_stage("response 1")),
                }
            }
            EventKind::AdviceServed { question_id, advice } => {
                let qi = self.question_index(task, question_id)?;
                match self.stage {
                    Stage::Response1 { index } if self.order[index] == qi && self.answers[qi].r1.is_some() => {
                        self.answers[qi].advice = Some(*advice);
                        self.stage = Stage::Response2 { index };
                    }
                    _ => return Err(self.wrong_stage("advice")),
                }
            }
            EventKind::Response2 { question_id, r2, .. } => {
                let qi = self.question_index(task, question_id)?;
                match self.stage {
                    Stage::Response2 { index } if self.order[index] == qi => {
                        SignedResponse::new(*r2)?;
                        self.answers[qi].r2 = Some(*r2);
                        self.stage = if index + 1 < self.order.len() {
                            Stage::Response1 { index: index + 1 }
                        } else {
                            Stage::PostSurvey
                        };
                    }
                    _ => return Err(self.wrong_stage("response 2")),
                }
            }
            EventKind::Finalized { score, bonus } => {
                if self.stage != Stage::Debrief {
                    return Err(self.wrong_stage("finalize"));
                }
                self.score = Some(*score);
                self.bonus = Some(*bonus);
                self.stage = Stage::Complete;
            }
        }
        Ok(())
    }

    pub fn acknowledge_instructions(&mut self, task: &Task, now_ms: u64) -> Result<Event> {
        self.emit(task, EventKind::InstructionsAcknowledged, now_ms)
    }

    /// A wrong answer sends the participant back to the instructions.
    pub fn manipulation_check(&mut self, task: &Task, answer: &str, now_ms: u64) -> Result<Event> {
        let passed = answer.trim().eq_ignore_ascii_case(task.manipulation_answer.trim());
        self.emit(task, EventKind::ManipulationCheck { answer: answer.into(), passed }, now_ms)
    }

    pub fn submit_survey(
        &mut self,
        task: &Task,
        stage: SurveyStage,
        answers: BTreeMap<String, f64>,
        now_ms: u64,
    ) -> Result<Event> {
        self.emit(task, EventKind::Survey { stage, answers }, now_ms)
    }

    /// Records the initial response and serves the advice. Repeating the
    /// call for the question awaiting its second response returns the same
    /// advice and no events.
    pub fn submit_response1(
        &mut self,
        task: &Task,
        question_id: &str,
        displayed: f64,
        now_ms: u64,
    ) -> Result<(ServedAdvice, Vec<Event>)> {
        check_displayed(displayed)?;
        let qi = self.question_index(task, question_id)?;
        if let Stage::Response2 { index } = self.stage {
            if self.order[index] == qi {
                let advice = self.answers[qi].advice.expect("advice is served before response 2");
                return Ok((advice, Vec::new()));
            }
        }
        let q = &task.questions[qi];
        let right = self.right_labels[qi];
        let r1 = to_signed(displayed, right, q.label);
        let e1 = self.emit(task, EventKind::Response1 { question_id: question_id.into(), displayed, r1 }, now_ms)?;
        let presented_prob = present(&self.arm, q.advice);
        let signed = match self.arm {
            TransformParams::Step { .. } => self.arm.apply_signed(q.advice.logit()),
            _ => 2.0 * presented_prob - 1.0,
        };
        let advice = ServedAdvice {
            raw_prob: q.advice.prob(),
            presented_prob,
            presented_value: to_signed(signed, right, q.label),
            right_label: right,
        };
        let e2 = self.emit(task, EventKind::AdviceServed { question_id: question_id.into(), advice }, now_ms)?;
        Ok((advice, alloc::vec![e1, e2]))
    }

    /// Records the final response. Repeating it for an answered question is a
    /// no-op.
    pub fn submit_response2(
        &mut self,
        task: &Task,
        question_id: &str,
        displayed: f64,
        now_ms: u64,
    ) -> Result<Option<Event>> {
        check_displayed(displayed)?;
        let qi = self.question_index(task, question_id)?;
        if self.answers[qi].r2.is_some() {
            return Ok(None);
        }
        let r2 = to_signed(displayed, self.right_labels[qi], task.questions[qi].label);
        self.emit(task, EventKind::Response2 { question_id: question_id.into(), displayed, r2 }, now_ms).map(Some)
    }

    /// Mean correct-label response over all questions.
    pub fn score(&self, response: BonusResponse) -> Result<f64> {
        let mut sum = 0.0;
        for a in &self.answers {
            let v = match response {
                BonusResponse::R1 => a.r1,
                BonusResponse::R2 => a.r2,
            };
            sum += v.ok_or_else(|| protocol_err("session has unanswered questions"))?;
        }
        Ok(sum / self.answers.len() as f64)
    }

    /// Computes the bonus and closes the session. Finalising a completed
    /// session returns the stored bonus.
    pub fn finalize(&mut self, task: &Task, config: &BonusConfig, now_ms: u64) -> Result<(f64, Option<Event>)> {
        if let (Stage::Complete, Some(b)) = (self.stage, self.bonus) {
            return Ok((b, None));
        }
        if self.stage != Stage::Debrief {
            return Err(protocol_err(format!("session incomplete at stage {:?}", self.stage)));
        }
        let score = self.score(config.response)?;
        let bonus = config.bonus(score);
        let e = self.emit(task, EventKind::Finalized { score, bonus }, now_ms)?;
        Ok((bonus, Some(e)))
    }

    /// One record per question, with the presented advice as the advice
    /// value. A pre-survey `ai_perception` answer overrides the demographic
    /// field of the same name.
    pub fn records(&self, task: &Task) -> Result<Vec<InteractionRecord>> {
        if !self.is_complete() {
            return Err(protocol_err("only completed sessions export records"));
        }
        let mut demographics = self.demographics;
        if let Some(&v) = self.surveys.get("pre.ai_perception") {
            demographics.ai_perception = v;
        }
        self.order
            .iter()
            .map(|&qi| {
                let q = &task.questions[qi];
                let a = &self.answers[qi];
                let served = a.advice.ok_or_else(|| protocol_err("missing advice"))?;
                let record = InteractionRecord {
                    participant_id: self.participant_id.clone(),
                    task_id: self.task_id.clone(),
                    question_id: q.id.clone(),
                    r1: SignedResponse::new(a.r1.ok_or_else(|| protocol_err("missing r1"))?)?,
                    r2: SignedResponse::new(a.r2.ok_or_else(|| protocol_err("missing r2"))?)?,
                    advice: Advice::from_prob(served.presented_prob)?,
                    label: q.label,
                    demographics,
                };
                record.validate()?;
                Ok(record)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::demographics;

    fn task() -> Task {
        Task {
            id: "t".into(),
            questions: (0..4)
                .map(|i| Question {
                    id: format!("q{i}"),
                    advice: Advice::from_prob(0.6 + 0.1 * i as f64).unwrap(),
                    label: (i % 2) as u8,
                })
                .collect(),
            manipulation_answer: "Label A".into(),
        }
    }

    fn start(arm: TransformParams) -> (Task, Session, Vec<Event>) {
        let t = task();
        let (mut s, e0) =
            Session::create(&t, &[], "s1", "p1", demographics(), &Assignment::Forced { arm, seed: 3 }, 0).unwrap();
        let mut log = alloc::vec![e0];
        log.push(s.acknowledge_instructions(&t, 1).unwrap());
        log.push(s.manipulation_check(&t, "label a", 2).unwrap());
        log.push(s.submit_survey(&t, SurveyStage::Pre, BTreeMap::new(), 3).unwrap());
        (t, s, log)
    }

    #[test]
    fn bonus_formula() {
        let b = BonusConfig::default();
        let out: Vec<f64> = [0.2, 0.3, 0.5, 1.0].iter().map(|&s| b.bonus(s)).collect();
        assert_eq!(out, [0.0, 0.09, 0.15, 0.3]);
    }

    #[test]
    fn failed_check_returns_to_instructions() {
        let t = task();
        let (mut s, _) =
            Session::create(&t, &[], "s", "p", demographics(), &Assignment::Forced { arm: TransformParams::BASELINE, seed: 0 }, 0)
                .unwrap();
        s.acknowledge_instructions(&t, 0).unwrap();
        s.manipulation_check(&t, "wrong", 0).unwrap();
        assert_eq!(s.stage, Stage::Instructions);
        assert!(s.manipulation_check(&t, "Label A", 0).is_err());
    }

    #[test]
    fn full_session_replays_and_exports() {
        let (t, mut s, mut log) = start(TransformParams::BASELINE);
        assert!(s.submit_response2(&t, "q0", 0.1, 4).is_err());
        for k in 0..4 {
            let qi = s.current_question().unwrap();
            let id = t.questions[qi].id.clone();
            let (adv, ev) = s.submit_response1(&t, &id, 0.4, 5).unwrap();
            assert_eq!(adv.presented_prob, t.questions[qi].advice.prob());
            log.extend(ev);
            let (again, none) = s.submit_response1(&t, &id, -0.9, 6).unwrap();
            assert_eq!(again, adv);
            assert!(none.is_empty());
            log.extend(s.submit_response2(&t, &id, 0.5, 7).unwrap());
            assert_eq!(s.submit_response2(&t, &id, 0.5, 7).unwrap(), None);
            let _ = k;
        }
        assert_eq!(s.stage, Stage::PostSurvey);
        assert!(s.finalize(&t, &BonusConfig::default(), 8).is_err());
        log.push(s.submit_survey(&t, SurveyStage::Post, BTreeMap::new(), 8).unwrap());
        let (bonus, e) = s.finalize(&t, &BonusConfig::default(), 9).unwrap();
        log.push(e.unwrap());
        assert_eq!(s.finalize(&t, &BonusConfig::default(), 10).unwrap(), (bonus, None));
        let replayed = Session::replay(&t, &log).unwrap();
        assert_eq!(replayed, s);
        let recs = s.records(&t).unwrap();
        assert_eq!(recs.len(), 4);
        for (i, w) in log.windows(2).enumerate() {
            assert_eq!(w[1].seq, w[0].seq + 1, "event {i}");
        }
    }

    #[test]
    fn step_arm_serves_plus_minus_lambda() {
        let (t, mut s, _) = start(TransformParams::step(0.5).unwrap());
        let qi = s.current_question().unwrap();
        let (adv, _) = s.submit_response1(&t, &t.questions[qi].id.clone(), 0.0, 0).unwrap();
        assert!(adv.presented_value == 0.5 || adv.presented_value == -0.5);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let (t, mut s, _) = start(TransformParams::BASELINE);
        let current = s.current_question().unwrap();
        let other = (current + 1) % 4;
        assert!(s.submit_response1(&t, &t.questions[other].id.clone(), 0.1, 0).is_err());
        assert!(s.submit_response1(&t, "missing", 0.1, 0).is_err());
    }

    #[test]
    fn orientation_maps_to_correct_label() {
        assert_eq!(to_signed(0.3, 1, 1), 0.3);
        assert_eq!(to_signed(0.3, 0, 1), -0.3);
        assert_eq!(to_signed(-0.3, 0, 0), -0.3);
    }
}
