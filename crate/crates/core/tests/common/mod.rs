#![allow(dead_code)]

use apdf_rank::corpus::{QARecord, ResponseCandidate};
use apdf_rank::objective::ComparisonMode;
use apdf_rank::policy::{loss_gradient, record_objective, ToyPolicy, START, VOCAB};
use apdf_rank::PreparedRecord;
use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;

/// A pool of `m` random lowercase texts with distinct vote counts.
pub fn random_record<R: Rng>(rng: &mut R, id: &str, m: usize) -> QARecord {
    let t0 = Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap();
    let text = |rng: &mut R| -> String {
        let words = rng.gen_range(2..6);
        (0..words)
            .map(|_| {
                let len = rng.gen_range(1..6);
                (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut votes: Vec<u64> = (0..m as u64).map(|v| v * 3 + rng.gen_range(0..3)).collect();
    votes.shuffle(rng);
    let question = text(rng);
    let qwords: Vec<&str> = question.split(' ').collect();
    // candidate 0 always echoes the question so semantic gains differ
    let answer = |rng: &mut R, i: usize| -> String {
        let mut t = text(rng);
        for _ in 0..if i == 0 { 2 } else { rng.gen_range(0..2) } {
            t.push(' ');
            t.push_str(qwords.choose(rng).unwrap());
        }
        t
    };
    QARecord {
        question_id: id.to_string(),
        question_text: question.clone(),
        question_created_at: t0,
        candidates: (0..m)
            .map(|i| ResponseCandidate {
                id: format!("{id}-{i}"),
                content: answer(rng, i),
                votes: votes[i],
                created_at: t0 + Duration::hours(i as i64),
                accepted: false,
            })
            .collect(),
        gold_ranking: None,
    }
}

/// Relative error with a floor on the denominator. With a loss near 10 the
/// central difference at h = 1e-5 carries about 1e-10 of rounding noise, so
/// derivatives below 1e-5 are compared on an absolute scale of 1e-9.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Parameter indices worth checking: the largest analytic entries, random
/// entries of the transition rows the record touches, and random question
/// bias entries.
pub fn sample_coordinates<R: Rng>(
    rng: &mut R,
    policy: &ToyPolicy,
    record: &PreparedRecord,
    grad: &[f64],
) -> Vec<usize> {
    let mut by_size: Vec<usize> = (0..grad.len()).collect();
    by_size.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
    let mut coords: Vec<usize> = by_size[..15].to_vec();

    let mut contexts = vec![START];
    for c in &record.candidates {
        contexts.extend(c.bytes().map(usize::from));
    }
    for _ in 0..15 {
        let ctx = *contexts.choose(rng).unwrap();
        coords.push(ctx * VOCAB + rng.gen_range(0..VOCAB));
    }
    let offset = (START + 1) * VOCAB;
    for _ in 0..10 {
        coords.push(offset + rng.gen_range(0..policy.buckets() * VOCAB));
    }
    coords.sort_unstable();
    coords.dedup();
    coords
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h` over the sampled coordinates.
pub fn gradient_check<R: Rng>(
    rng: &mut R,
    policy: &ToyPolicy,
    record: &PreparedRecord,
    alpha: f64,
    mode: ComparisonMode,
    h: f64,
) -> f64 {
    let (_, grad) = loss_gradient(policy, record, alpha, mode).unwrap();
    let flat: Vec<f64> = grad.iter().collect();
    let mut worst: f64 = 0.0;
    let mut probe = policy.clone();
    for i in sample_coordinates(rng, policy, record, &flat) {
        let w = probe.parameter(i);
        *probe.parameter_mut(i) = w + h;
        let up = record_objective(&probe, record, alpha, mode).unwrap().total;
        *probe.parameter_mut(i) = w - h;
        let down = record_objective(&probe, record, alpha, mode).unwrap().total;
        *probe.parameter_mut(i) = w;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(flat[i], numeric));
    }
    worst
}
