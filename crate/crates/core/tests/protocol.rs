mod common;

use std::collections::BTreeMap;

use humancal_core::data::Advice;
use humancal_core::protocol::{Assignment, BonusConfig, EventKind, Question, Session, SurveyStage, Task};
use humancal_core::transform::TransformParams;

fn task(n: usize) -> Task {
    Task {
        id: "demo".into(),
        questions: (0..n)
            .map(|i| Question {
                id: format!("q{i}"),
                advice: Advice::from_prob(0.05 + 0.9 * i as f64 / n as f64).unwrap(),
                label: (i % 2) as u8,
            })
            .collect(),
        manipulation_answer: "yes".into(),
    }
}

fn arms() -> Vec<TransformParams> {
    vec![TransformParams::BASELINE, TransformParams::sigmoid_like(1.6, 0.4).unwrap()]
}

fn run_session(t: &Task, pid: &str, seed: u64) -> (Session, Vec<humancal_core::protocol::Event>) {
    let (mut s, e) = Session::create(t, &arms(), &format!("s-{pid}"), pid, common::demographics(), &Assignment::Random { seed }, 0).unwrap();
    let mut log = vec![e];
    log.push(s.acknowledge_instructions(t, 1).unwrap());
    log.push(s.manipulation_check(t, "no", 2).unwrap());
    log.push(s.acknowledge_instructions(t, 3).unwrap());
    log.push(s.manipulation_check(t, "yes", 4).unwrap());
    log.push(s.submit_survey(t, SurveyStage::Pre, BTreeMap::from([("ai_perception".to_string(), 0.5)]), 5).unwrap());
    let mut k = 0.0;
    while let Some(qi) = s.current_question() {
        let id = t.questions[qi].id.clone();
        k += 1.0;
        let (_, ev) = s.submit_response1(t, &id, (k * 0.137) % 1.0 - 0.4, 6).unwrap();
        log.extend(ev);
        log.extend(s.submit_response2(t, &id, (k * 0.291) % 1.0 - 0.3, 7).unwrap());
    }
    log.push(s.submit_survey(t, SurveyStage::Post, BTreeMap::new(), 8).unwrap());
    let (_, e) = s.finalize(t, &BonusConfig::default(), 9).unwrap();
    log.push(e.unwrap());
    (s, log)
}

#[test]
fn random_assignment_is_balanced() {
    let t = task(4);
    let baseline = (0..1000)
        .filter(|i| {
            let (s, _) = Session::create(&t, &arms(), "s", &format!("p{i}"), common::demographics(), &Assignment::Random { seed: 42 }, 0).unwrap();
            s.arm.is_baseline()
        })
        .count() as f64;
    let sd = (1000.0f64 * 0.25).sqrt();
    assert!((baseline - 500.0).abs() <= 3.0 * sd, "{baseline}");
}

#[test]
fn same_inputs_give_same_order() {
    let t = task(12);
    let make = || Session::create(&t, &arms(), "s", "p7", common::demographics(), &Assignment::Random { seed: 1 }, 0).unwrap().0;
    let (a, b) = (make(), make());
    assert_eq!(a.order, b.order);
    assert_eq!(a.right_labels, b.right_labels);
    assert_eq!(a.arm, b.arm);
}

#[test]
fn forced_baseline_serves_stored_advice() {
    let t = task(6);
    let (mut s, _) = Session::create(&t, &[], "s", "p", common::demographics(), &Assignment::Forced { arm: TransformParams::BASELINE, seed: 0 }, 0).unwrap();
    s.acknowledge_instructions(&t, 0).unwrap();
    s.manipulation_check(&t, "yes", 0).unwrap();
    s.submit_survey(&t, SurveyStage::Pre, BTreeMap::new(), 0).unwrap();
    while let Some(qi) = s.current_question() {
        let id = t.questions[qi].id.clone();
        let (adv, _) = s.submit_response1(&t, &id, 0.2, 0).unwrap();
        let stored = t.questions[qi].advice;
        assert_eq!(adv.presented_prob, stored.prob());
        assert!((adv.presented_prob - humancal_core::math::sigmoid(stored.logit().0)).abs() < 1e-12);
        s.submit_response2(&t, &id, 0.2, 0).unwrap();
    }
}

#[test]
fn sigmoid_arm_serves_transform_bitwise() {
    let t = task(5);
    let arm = TransformParams::sigmoid_like(2.0, 0.7).unwrap();
    let (mut s, _) = Session::create(&t, &[], "s", "p", common::demographics(), &Assignment::Forced { arm, seed: 0 }, 0).unwrap();
    s.acknowledge_instructions(&t, 0).unwrap();
    s.manipulation_check(&t, "yes", 0).unwrap();
    s.submit_survey(&t, SurveyStage::Pre, BTreeMap::new(), 0).unwrap();
    let qi = s.current_question().unwrap();
    let (adv, _) = s.submit_response1(&t, &t.questions[qi].id.clone(), 0.2, 0).unwrap();
    assert_eq!(adv.presented_prob.to_bits(), arm.apply(t.questions[qi].advice.logit()).to_bits());
}

#[test]
fn fifty_sessions_log_in_order_and_export() {
    let t = task(4);
    for i in 0..50 {
        let (s, log) = run_session(&t, &format!("p{i:02}"), 11);
        assert_eq!(Session::replay(&t, &log).unwrap(), s);
        let mut last: BTreeMap<String, u8> = BTreeMap::new();
        for e in &log {
            let (q, stage) = match &e.kind {
                EventKind::Response1 { question_id, .. } => (question_id, 1),
                EventKind::AdviceServed { question_id, .. } => (question_id, 2),
                EventKind::Response2 { question_id, .. } => (question_id, 3),
                _ => continue,
            };
            let prev = last.insert(q.clone(), stage).unwrap_or(0);
            assert_eq!(prev + 1, stage, "question {q}");
        }
        let records = s.records(&t).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            let qi = t.questions.iter().position(|q| q.id == r.question_id).unwrap();
            let a = &s.answers[qi];
            assert_eq!(r.r1.value(), a.r1.unwrap());
            assert_eq!(r.r2.value(), a.r2.unwrap());
            assert_eq!(r.advice.prob(), a.advice.unwrap().presented_prob);
            assert_eq!(r.demographics.ai_perception, 0.5);
        }
    }
}

#[test]
fn finalize_requires_every_question() {
    let t = task(3);
    let (mut s, _) = Session::create(&t, &arms(), "s", "p", common::demographics(), &Assignment::Random { seed: 0 }, 0).unwrap();
    assert!(s.finalize(&t, &BonusConfig::default(), 0).is_err());
    assert!(s.records(&t).is_err());
}

#[test]
fn replay_rejects_gaps() {
    let t = task(2);
    let (_, mut log) = run_session(&t, "p", 0);
    log.remove(3);
    assert!(Session::replay(&t, &log).is_err());
}
