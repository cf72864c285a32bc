use std::path::PathBuf;

use apdf_rank::apdf::DecayConfig;
use apdf_rank::corpus::{
    apply_quality_filters, assign_gold_ranking, filter_accepted, filter_code_block, ingest,
    parse_dump, read_records, records_from_jsonl, write_records, FilterConfig, QARecord,
    Rejection, ResponseCandidate,
};
use apdf_rank::Error;
use chrono::{TimeZone, Utc};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/posts_25.xml")
}

const CODE: &str = "fn main() {\n    let ok = a < b && c;\n    println!(\"{}\", ok);\n}";

fn ranking_filters() -> FilterConfig {
    FilterConfig {
        min_pool_size: 2,
        min_vote_gap: 3,
        require_code_block: true,
        ..FilterConfig::default()
    }
}

// Fixture layout: 25 questions. q1-q16 have an accepted answer in the pool
// (q17 points at a missing one). q1-q10 and q17-q20 contain code. q9 has a
// single answer and q10 a vote gap of 1. One answer row lacks CreationDate
// and one answer's parent does not exist.
#[test]
fn fixture_stage_counts() {
    let dump = parse_dump(&fixture()).unwrap();
    assert_eq!(dump.entries.len(), 25);
    assert_eq!(dump.warnings, 1);
    assert_eq!(dump.orphan_answers, 1);

    let accepted = filter_accepted(dump.entries.clone());
    assert_eq!(accepted.len(), 16);
    let coded = filter_code_block(accepted);
    assert_eq!(coded.len(), 10);

    let (records, report) = ingest(dump, &ranking_filters(), None);
    assert_eq!(report.parsed, 25);
    assert_eq!(report.with_accepted, 16);
    assert_eq!(report.with_code, 10);
    assert_eq!(report.cleaned, 10);
    assert_eq!(report.kept, 8);
    assert_eq!(report.rejections.get(&Rejection::PoolTooSmall), Some(&1));
    assert_eq!(report.rejections.get(&Rejection::VoteGap), Some(&1));
    let ids: Vec<&str> = records.iter().map(|r| r.question_id.as_str()).collect();
    assert_eq!(ids, ["1", "2", "3", "4", "5", "6", "7", "8"]);
    assert!(report.to_kv_text().contains("rejected.vote_gap=1\n"));
}

#[test]
fn code_blocks_survive_cleaning_verbatim() {
    let (records, _) = ingest(parse_dump(&fixture()).unwrap(), &ranking_filters(), None);
    let q1 = &records[0];
    assert_eq!(
        q1.question_text,
        format!("Title 1\n\nWhy does this not compile?\n\n{CODE}")
    );
    assert_eq!(q1.candidates[0].content, format!("Use parentheses:\n\n{CODE}"));
    assert_eq!(q1.candidates[1].content, "Answer 102 & some bold text.");
    assert!(q1.candidates[0].accepted);
}

#[test]
fn gold_rankings_put_accepted_first() {
    let decay = DecayConfig::new(Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(), 365.0).unwrap();
    let (records, _) = ingest(parse_dump(&fixture()).unwrap(), &ranking_filters(), Some(&decay));
    for r in &records {
        let g = r.gold_ranking.as_ref().unwrap();
        assert_eq!(Some(g[0]), r.accepted_index());
        r.validate().unwrap();
    }
}

#[test]
fn records_round_trip_through_disk() {
    let (records, _) = ingest(parse_dump(&fixture()).unwrap(), &ranking_filters(), None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_records(&path, &records).unwrap();
    assert_eq!(read_records(&path).unwrap(), records);

    write_records(&path, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    assert!(read_records(&path).unwrap().is_empty());
}

#[test]
fn schema_errors_name_the_line() {
    let (records, _) = ingest(parse_dump(&fixture()).unwrap(), &ranking_filters(), None);
    let good = serde_json::to_string(&records[0]).unwrap();
    let bad = r#"{"question_id":"x","question_text":"q","question_created_at":"2020-01-01T00:00:00Z","gold_ranking":null}"#;
    let err = records_from_jsonl(&format!("{good}\n{bad}\n")).unwrap_err();
    match err {
        Error::Schema { line, message } => {
            assert_eq!(line, 2);
            assert!(message.contains("candidates"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_dump_is_an_io_error() {
    let err = parse_dump(&fixture().with_extension("missing")).unwrap_err();
    assert_eq!(err.category(), apdf_rank::ErrorCategory::Io);
}

fn record_strategy() -> impl Strategy<Value = QARecord> {
    (
        "[a-z]{1,8}",
        "[ -~]{0,40}",
        prop::collection::vec(("[ -~]{1,30}", 0u64..500, 0i64..1_000_000), 1..6),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(id, q, cands, with_gold, with_accept)| {
            let t = Utc.with_ymd_and_hms(2019, 5, 1, 0, 0, 0).unwrap();
            let candidates: Vec<ResponseCandidate> = cands
                .into_iter()
                .enumerate()
                .map(|(i, (content, votes, secs))| ResponseCandidate {
                    id: format!("c{i}"),
                    content,
                    votes,
                    created_at: t + chrono::Duration::seconds(secs),
                    accepted: with_accept && i == 0,
                })
                .collect();
            let m = candidates.len();
            QARecord {
                question_id: id,
                question_text: q,
                question_created_at: t,
                candidates,
                gold_ranking: with_gold.then(|| (0..m).rev().collect()),
            }
        })
}

proptest! {
    #[test]
    fn jsonl_round_trip(records in prop::collection::vec(record_strategy(), 0..100)) {
        let text = apdf_rank::corpus::records_to_jsonl(&records);
        prop_assert_eq!(records_from_jsonl(&text).unwrap(), records);
    }

    #[test]
    fn quality_filters_keep_a_subset(
        records in prop::collection::vec(record_strategy(), 0..30),
        min_pool in 0usize..4,
        gap in 0u64..50,
        per in 0u64..20,
    ) {
        let cfg = FilterConfig {
            min_pool_size: min_pool,
            min_vote_gap: gap,
            min_votes_per_response: per,
            ..FilterConfig::default()
        };
        let (kept, counts) = apply_quality_filters(records.clone(), &cfg);
        prop_assert_eq!(kept.len() + counts.values().sum::<usize>(), records.len());
        for k in &kept {
            prop_assert!(records.contains(k));
        }
        let (all, none) = apply_quality_filters(records.clone(), &FilterConfig::default());
        prop_assert_eq!(all, records);
        prop_assert!(none.is_empty());
    }

    #[test]
    fn gold_ranking_is_a_permutation(r in record_strategy()) {
        let g = assign_gold_ranking(r, &DecayConfig::disabled());
        g.validate().unwrap();
        let order = g.gold_ranking.as_ref().unwrap();
        if let Some(a) = g.accepted_index() {
            prop_assert_eq!(order[0], a);
        }
    }
}
