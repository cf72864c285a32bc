//! StackExchange dump ingestion.
//!
//! Pipeline: [`parse_dump`] → [`filter_accepted`] → [`filter_code_block`] →
//! [`RawEntry::into_record`] (HTML cleaning) → [`apply_quality_filters`] →
//! optionally [`assign_gold_ranking`]. [`ingest`] runs all of it and keeps the
//! count surviving each stage.
//!
//! Records persist as JSON-Lines, one [`QARecord`] per line, with keys in
//! this order:
//!
//! ```text
//! question_id, question_text, question_created_at,
//! candidates: [{id, content, votes, created_at, accepted}, ...],
//! gold_ranking (null when absent)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use crate::apdf::{decayed_popularity, DecayConfig};
use crate::error::{Error, Result};
use crate::ranking::is_permutation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCandidate {
    pub id: String,
    pub content: String,
    pub votes: u64,
    pub created_at: DateTime<Utc>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub question_id: String,
    pub question_text: String,
    pub question_created_at: DateTime<Utc>,
    pub candidates: Vec<ResponseCandidate>,
    pub gold_ranking: Option<Vec<usize>>,
}

impl QARecord {
    pub fn pool_size(&self) -> usize {
        self.candidates.len()
    }

    pub fn accepted_index(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.accepted)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid(format!(
                "record {} has no candidates",
                self.question_id
            )));
        }
        let mut ids = HashSet::new();
        for c in &self.candidates {
            if !ids.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
            if c.content.is_empty() {
                return Err(Error::invalid(format!("candidate {} has empty content", c.id)));
            }
        }
        if self.candidates.iter().filter(|c| c.accepted).count() > 1 {
            return Err(Error::invalid(format!(
                "record {} has more than one accepted candidate",
                self.question_id
            )));
        }
        if let Some(g) = &self.gold_ranking {
            if g.len() != self.candidates.len() || !is_permutation(g) {
                return Err(Error::invalid(format!(
                    "record {} gold ranking is not a permutation of its pool",
                    self.question_id
                )));
            }
        }
        Ok(())
    }
}

/// One answer row as it appears in the dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnswer {
    pub id: String,
    pub body: String,
    pub score: i64,
    pub created_at: DateTime<Utc>,
}

/// A question row with its answers attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub question_id: String,
    pub title: String,
    pub body: String,
    pub created_at: DateTime<Utc>,
    pub accepted_answer_id: Option<String>,
    pub answers: Vec<RawAnswer>,
}

impl RawEntry {
    /// Cleans HTML and converts to a record. Candidates whose cleaned content
    /// is empty are dropped; negative scores clamp to zero votes. Returns
    /// `None` if no candidate survives.
    pub fn into_record(self) -> Option<QARecord> {
        let accepted = self.accepted_answer_id;
        let candidates: Vec<ResponseCandidate> = self
            .answers
            .into_iter()
            .filter_map(|a| {
                let content = clean_html(&a.body);
                if content.is_empty() {
                    return None;
                }
                Some(ResponseCandidate {
                    accepted: accepted.as_deref() == Some(a.id.as_str()),
                    id: a.id,
                    content,
                    votes: a.score.max(0) as u64,
                    created_at: a.created_at,
                })
            })
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let body = clean_html(&self.body);
        let question_text = match (self.title.trim(), body.is_empty()) {
            ("", _) => body,
            (t, true) => t.to_string(),
            (t, false) => format!("{t}\n\n{body}"),
        };
        Some(QARecord {
            question_id: self.question_id,
            question_text,
            question_created_at: self.created_at,
            candidates,
            gold_ranking: None,
        })
    }
}

/// Result of reading a dump.
#[derive(Debug, Clone, Default)]
pub struct DumpParse {
    pub entries: Vec<RawEntry>,
    /// Rows skipped for a missing or malformed required attribute.
    pub warnings: usize,
    /// Answers whose parent question was never seen.
    pub orphan_answers: usize,
}

pub fn parse_dump(path: &Path) -> Result<DumpParse> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dump_str(&text)
}

fn line_of(text: &str, pos: u64) -> usize {
    let pos = (pos as usize).min(text.len());
    text.as_bytes()[..pos].iter().filter(|&&b| b == b'\n').count() + 1
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .map(|n| n.and_utc())
}

enum Row {
    Question(RawEntry),
    Answer { parent: String, answer: RawAnswer },
    Other,
}

fn read_row(attrs: &HashMap<String, String>) -> Option<Row> {
    let kind = attrs.get("PostTypeId")?;
    let id = attrs.get("Id")?.clone();
    let created_at = parse_timestamp(attrs.get("CreationDate")?)?;
    match kind.as_str() {
        "1" => Some(Row::Question(RawEntry {
            question_id: id,
            title: attrs.get("Title").cloned().unwrap_or_default(),
            body: attrs.get("Body")?.clone(),
            created_at,
            accepted_answer_id: attrs.get("AcceptedAnswerId").cloned(),
            answers: Vec::new(),
        })),
        "2" => Some(Row::Answer {
            parent: attrs.get("ParentId")?.clone(),
            answer: RawAnswer {
                id,
                body: attrs.get("Body")?.clone(),
                score: attrs.get("Score")?.parse().ok()?,
                created_at,
            },
        }),
        _ => Some(Row::Other),
    }
}

/// Parses `Posts.xml` content, joining answers to their questions.
pub fn parse_dump_str(text: &str) -> Result<DumpParse> {
    let mut reader = Reader::from_str(text);
    let mut out = DumpParse::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<(String, RawAnswer)> = Vec::new();

    loop {
        let event = reader.read_event().map_err(|e| Error::Xml {
            line: line_of(text, reader.error_position()),
            message: e.to_string(),
        })?;
        let e = match event {
            Event::Eof => break,
            Event::Empty(e) | Event::Start(e) if e.name().as_ref() == "row" => e,
            _ => continue,
        };
        let mut attrs = HashMap::new();
        for attr in e.attributes() {
            let attr = attr.map_err(|err| Error::Xml {
                line: line_of(text, reader.buffer_position()),
                message: err.to_string(),
            })?;
            let key = attr.key.as_ref().to_string();
            let value = attr
                .normalized_value(XmlVersion::Implicit1_0)
                .map_err(|err| Error::Xml {
                    line: line_of(text, reader.buffer_position()),
                    message: err.to_string(),
                })?
                .into_owned();
            attrs.insert(key, value);
        }
        match read_row(&attrs) {
            None => out.warnings += 1,
            Some(Row::Question(q)) => {
                index.insert(q.question_id.clone(), out.entries.len());
                out.entries.push(q);
            }
            Some(Row::Answer { parent, answer }) => pending.push((parent, answer)),
            Some(Row::Other) => {}
        }
    }

    for (parent, answer) in pending {
        match index.get(&parent) {
            Some(&i) => out.entries[i].answers.push(answer),
            None => out.orphan_answers += 1,
        }
    }
    Ok(out)
}

/// Keeps questions whose accepted answer is present in the pool.
pub fn filter_accepted(entries: Vec<RawEntry>) -> Vec<RawEntry> {
    entries
        .into_iter()
        .filter(|e| {
            e.accepted_answer_id
                .as_deref()
                .is_some_and(|id| e.answers.iter().any(|a| a.id == id))
        })
        .collect()
}

/// True if the HTML/Markdown body holds a `<code>` element or a fenced block.
pub fn has_code_block(body: &str) -> bool {
    body.to_ascii_lowercase().contains("<code") || body.contains("```")
}

/// Keeps questions whose body contains at least one code block.
pub fn filter_code_block(entries: Vec<RawEntry>) -> Vec<RawEntry> {
    entries.into_iter().filter(|e| has_code_block(&e.body)).collect()
}

enum Segment {
    Text(String),
    Code(String),
}

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "br", "li", "ul", "ol", "pre", "blockquote", "h1", "h2", "h3", "h4", "h5",
    "h6", "hr", "tr", "table", "dd", "dt",
];

/// Strips HTML tags and decodes entities. Text inside `<code>` is kept
/// verbatim (after entity decoding); elsewhere block-level tags become line
/// breaks and runs of blank lines collapse.
pub fn clean_html(html: &str) -> String {
    let mut segments: Vec<Segment> = Vec::new();
    let mut buf = String::new();
    let mut code_depth = 0usize;
    let mut rest = html;

    let flush = |buf: &mut String, segments: &mut Vec<Segment>, in_code: bool| {
        if !buf.is_empty() {
            let raw = std::mem::take(buf);
            let decoded = html_escape::decode_html_entities(&raw).into_owned();
            segments.push(if in_code {
                Segment::Code(decoded)
            } else {
                Segment::Text(decoded)
            });
        }
    };

    while let Some(lt) = rest.find('<') {
        buf.push_str(&rest[..lt]);
        let after = &rest[lt + 1..];
        if let Some(body) = after.strip_prefix("!--") {
            rest = match body.find("-->") {
                Some(end) => &body[end + 3..],
                None => "",
            };
            continue;
        }
        let Some(gt) = after.find('>') else {
            buf.push('<');
            rest = after;
            continue;
        };
        let inner = &after[..gt];
        let closing = inner.starts_with('/');
        let name: String = inner
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let is_tag = !name.is_empty() || inner.starts_with('!') || inner.starts_with('?');
        if !is_tag {
            buf.push('<');
            rest = after;
            continue;
        }
        rest = &after[gt + 1..];
        if name == "code" {
            flush(&mut buf, &mut segments, code_depth > 0);
            if closing {
                code_depth = code_depth.saturating_sub(1);
            } else if !inner.ends_with('/') {
                code_depth += 1;
            }
        } else if code_depth == 0 && BLOCK_TAGS.contains(&name.as_str()) {
            buf.push('\n');
        }
    }
    buf.push_str(rest);
    flush(&mut buf, &mut segments, code_depth > 0);

    let last = segments.len().saturating_sub(1);
    let mut out = String::new();
    for (i, seg) in segments.iter().enumerate() {
        match seg {
            Segment::Code(c) => out.push_str(c),
            Segment::Text(t) => {
                let mut t = normalize_text(t);
                if i == 0 {
                    t = t.trim_start().to_string();
                }
                if i == last {
                    t = t.trim_end().to_string();
                }
                out.push_str(&t);
            }
        }
    }
    out
}

// Collapses horizontal whitespace runs and keeps at most one blank line.
fn normalize_text(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    let mut newlines = 0;
    let mut pending_space = false;
    for c in t.chars() {
        if c == '\n' {
            newlines += 1;
            pending_space = false;
        } else if c.is_whitespace() {
            pending_space = true;
        } else {
            if newlines > 0 {
                out.push_str(if newlines == 1 { "\n" } else { "\n\n" });
                newlines = 0;
            } else if pending_space {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    if newlines > 0 {
        out.push_str(if newlines == 1 { "\n" } else { "\n\n" });
    } else if pending_space {
        out.push(' ');
    }
    out
}

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Quality thresholds. For the `max_*` fields zero means "no limit".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_pool_size: usize,
    pub max_pool_size: usize,
    pub min_vote_gap: u64,
    pub min_votes_per_response: u64,
    pub max_question_tokens: usize,
    pub max_response_tokens: usize,
    pub since: Option<DateTime<Utc>>,
    pub require_code_block: bool,
}

/// Why a record was rejected; the first failing check wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    PoolTooSmall,
    PoolTooLarge,
    VoteGap,
    ResponseVotes,
    QuestionLength,
    ResponseLength,
    TooOld,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::PoolTooSmall => "pool_too_small",
            Rejection::PoolTooLarge => "pool_too_large",
            Rejection::VoteGap => "vote_gap",
            Rejection::ResponseVotes => "response_votes",
            Rejection::QuestionLength => "question_length",
            Rejection::ResponseLength => "response_length",
            Rejection::TooOld => "too_old",
        }
    }
}

fn check_quality(r: &QARecord, cfg: &FilterConfig) -> Option<Rejection> {
    let m = r.pool_size();
    if m < cfg.min_pool_size {
        return Some(Rejection::PoolTooSmall);
    }
    if cfg.max_pool_size > 0 && m > cfg.max_pool_size {
        return Some(Rejection::PoolTooLarge);
    }
    let hi = r.candidates.iter().map(|c| c.votes).max().unwrap_or(0);
    let lo = r.candidates.iter().map(|c| c.votes).min().unwrap_or(0);
    if hi - lo < cfg.min_vote_gap {
        return Some(Rejection::VoteGap);
    }
    if r.candidates.iter().any(|c| c.votes < cfg.min_votes_per_response) {
        return Some(Rejection::ResponseVotes);
    }
    if cfg.max_question_tokens > 0 && whitespace_tokens(&r.question_text) > cfg.max_question_tokens
    {
        return Some(Rejection::QuestionLength);
    }
    if cfg.max_response_tokens > 0
        && r
            .candidates
            .iter()
            .any(|c| whitespace_tokens(&c.content) > cfg.max_response_tokens)
    {
        return Some(Rejection::ResponseLength);
    }
    if cfg.since.is_some_and(|since| r.question_created_at < since) {
        return Some(Rejection::TooOld);
    }
    None
}

/// Keeps records passing every threshold, in input order, and counts the
/// rejections per reason.
pub fn apply_quality_filters(
    records: Vec<QARecord>,
    cfg: &FilterConfig,
) -> (Vec<QARecord>, BTreeMap<Rejection, usize>) {
    let mut counts = BTreeMap::new();
    let kept = records
        .into_iter()
        .filter(|r| match check_quality(r, cfg) {
            Some(reason) => {
                *counts.entry(reason).or_insert(0) += 1;
                false
            }
            None => true,
        })
        .collect();
    (kept, counts)
}

/// Gold order: accepted answer first, then decayed votes descending, then
/// earlier creation time, then pool index.
pub fn assign_gold_ranking(mut record: QARecord, decay: &DecayConfig) -> QARecord {
    let decayed: Vec<f64> = record
        .candidates
        .iter()
        .map(|c| decayed_popularity(c.votes, c.created_at, decay))
        .collect();
    let cands = &record.candidates;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .accepted
            .cmp(&cands[a].accepted)
            .then(decayed[b].total_cmp(&decayed[a]))
            .then(cands[a].created_at.cmp(&cands[b].created_at))
            .then(a.cmp(&b))
    });
    record.gold_ranking = Some(order);
    record
}

/// Stage counts from a full ingest run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub parsed: usize,
    pub skipped_rows: usize,
    pub orphan_answers: usize,
    pub with_accepted: usize,
    pub with_code: usize,
    pub cleaned: usize,
    pub kept: usize,
    pub rejections: BTreeMap<Rejection, usize>,
}

impl IngestReport {
    /// `key=value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "parsed={}", self.parsed);
        let _ = writeln!(out, "skipped_rows={}", self.skipped_rows);
        let _ = writeln!(out, "orphan_answers={}", self.orphan_answers);
        let _ = writeln!(out, "with_accepted={}", self.with_accepted);
        let _ = writeln!(out, "with_code={}", self.with_code);
        let _ = writeln!(out, "cleaned={}", self.cleaned);
        let _ = writeln!(out, "kept={}", self.kept);
        for (reason, n) in &self.rejections {
            let _ = writeln!(out, "rejected.{}={}", reason.as_str(), n);
        }
        out
    }
}

/// Runs every ingestion stage on an already parsed dump.
pub fn ingest(
    dump: DumpParse,
    cfg: &FilterConfig,
    gold: Option<&DecayConfig>,
) -> (Vec<QARecord>, IngestReport) {
    let mut report = IngestReport {
        parsed: dump.entries.len(),
        skipped_rows: dump.warnings,
        orphan_answers: dump.orphan_answers,
        ..Default::default()
    };
    let entries = filter_accepted(dump.entries);
    report.with_accepted = entries.len();
    let entries = if cfg.require_code_block {
        filter_code_block(entries)
    } else {
        entries
    };
    report.with_code = entries.len();
    let records: Vec<QARecord> = entries.into_iter().filter_map(RawEntry::into_record).collect();
    report.cleaned = records.len();
    let (mut kept, rejections) = apply_quality_filters(records, cfg);
    report.rejections = rejections;
    report.kept = kept.len();
    if let Some(decay) = gold {
        kept = kept.into_iter().map(|r| assign_gold_ranking(r, decay)).collect();
    }
    (kept, report)
}

pub fn records_to_jsonl(records: &[QARecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<QARecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QARecord = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[QARecord]) -> Result<()> {
    fs::write(path, records_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<QARecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    records_from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, day, 0, 0, 0).unwrap()
    }

    fn cand(id: &str, votes: u64, day: u32, accepted: bool) -> ResponseCandidate {
        ResponseCandidate {
            id: id.into(),
            content: format!("answer {id}"),
            votes,
            created_at: ts(day),
            accepted,
        }
    }

    fn record(cands: Vec<ResponseCandidate>) -> QARecord {
        QARecord {
            question_id: "q".into(),
            question_text: "how do I do it".into(),
            question_created_at: ts(1),
            candidates: cands,
            gold_ranking: None,
        }
    }

    const TWO_QUESTIONS: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="3" CreationDate="2020-01-01T00:00:00.000" Score="4" Title="T1" Body="&lt;p&gt;q1&lt;/p&gt;" />
  <row Id="2" PostTypeId="1" CreationDate="2020-01-02T00:00:00.000" Score="1" Title="T2" Body="&lt;p&gt;q2&lt;/p&gt;" />
  <row Id="3" PostTypeId="2" ParentId="1" CreationDate="2020-01-03T00:00:00.000" Score="5" Body="&lt;p&gt;a&lt;/p&gt;" />
  <row Id="4" PostTypeId="2" ParentId="1" CreationDate="2020-01-03T00:00:00.000" Score="2" Body="&lt;p&gt;b&lt;/p&gt;" />
  <row Id="5" PostTypeId="2" ParentId="2" CreationDate="2020-01-03T00:00:00.000" Score="-1" Body="&lt;p&gt;c&lt;/p&gt;" />
  <row Id="6" PostTypeId="2" ParentId="1" CreationDate="2020-01-04T00:00:00.000" Score="0" Body="&lt;p&gt;d&lt;/p&gt;" />
  <row Id="7" PostTypeId="2" ParentId="2" CreationDate="2020-01-05T00:00:00.000" Score="3" Body="&lt;p&gt;e&lt;/p&gt;" />
</posts>
"#;

    #[test]
    fn parse_joins_answers() {
        let d = parse_dump_str(TWO_QUESTIONS).unwrap();
        assert_eq!(d.entries.len(), 2);
        assert_eq!(d.entries[0].answers.len(), 3);
        assert_eq!(d.entries[1].answers.len(), 2);
        assert_eq!(d.warnings, 0);
        assert_eq!(d.entries[0].accepted_answer_id.as_deref(), Some("3"));
        assert_eq!(d.entries[0].body, "<p>q1</p>");
    }

    #[test]
    fn parse_empty_input() {
        let d = parse_dump_str("").unwrap();
        assert!(d.entries.is_empty());
        assert_eq!(d.warnings, 0);
    }

    #[test]
    fn parse_counts_missing_attribute() {
        let xml = TWO_QUESTIONS.replace(
            r#"<row Id="2" PostTypeId="1" CreationDate="2020-01-02T00:00:00.000""#,
            r#"<row Id="2" PostTypeId="1""#,
        );
        let d = parse_dump_str(&xml).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.warnings, 1);
        assert_eq!(d.orphan_answers, 2);
    }

    #[test]
    fn parse_reports_line_of_malformed_xml() {
        let xml = "<posts>\n<row Id=\"1\" />\n<row Id=\"2\" PostTypeId=\"1 />\n</posts>\n";
        match parse_dump_str(xml) {
            Err(Error::Xml { line, .. }) => assert!(line >= 3, "line {line}"),
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn accepted_filter() {
        let d = parse_dump_str(TWO_QUESTIONS).unwrap();
        let kept = filter_accepted(d.entries);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].question_id, "1");
    }

    #[test]
    fn code_block_detection() {
        assert!(has_code_block("<p>x</p><pre><code>let a = 1;</code></pre>"));
        assert!(has_code_block("use ```rust fenced```"));
        assert!(!has_code_block("<p>just prose</p>"));
    }

    #[test]
    fn clean_html_cases() {
        assert_eq!(clean_html("<p>hi</p>"), "hi");
        assert_eq!(clean_html(""), "");
        assert_eq!(clean_html("<pre><code>x&lt;1</code></pre>"), "x<1");
        assert_eq!(clean_html("a < b and c > d"), "a < b and c > d");
        assert_eq!(clean_html("<p>one</p>\n\n\n<p>two</p>"), "one\n\ntwo");
        assert_eq!(clean_html("x <!-- hidden --> y"), "x y");
        assert_eq!(clean_html("<b>bold</b> &amp; <i>it</i>"), "bold & it");
        assert_eq!(clean_html("unterminated <b"), "unterminated <b");
    }

    #[test]
    fn clean_html_keeps_code_verbatim() {
        let code = "fn main() {\n    let  x =  1;\n\n\n    if x < 2 { }\n}\n";
        let escaped = html_escape::encode_text(code);
        let html = format!("<p>Try   this:</p>\n<pre><code>{escaped}</code></pre>\n<p>done</p>");
        let out = clean_html(&html);
        assert!(out.contains(code), "{out:?}");
        assert!(out.starts_with("Try this:"));
        assert!(out.ends_with("done"));
    }

    #[test]
    fn record_conversion() {
        let d = parse_dump_str(TWO_QUESTIONS).unwrap();
        let r = d.entries[1].clone().into_record().unwrap();
        assert_eq!(r.question_text, "T2\n\nq2");
        assert_eq!(r.candidates[0].votes, 0); // score -1 clamps
        assert!(r.accepted_index().is_none());
        let r0 = d.entries[0].clone().into_record().unwrap();
        assert_eq!(r0.accepted_index(), Some(0));
    }

    #[test]
    fn quality_filters() {
        let cfg = FilterConfig {
            min_pool_size: 3,
            ..Default::default()
        };
        let (kept, counts) = apply_quality_filters(vec![record(vec![cand("a", 1, 1, false), cand("b", 2, 1, false)])], &cfg);
        assert!(kept.is_empty());
        assert_eq!(counts[&Rejection::PoolTooSmall], 1);

        let cfg = FilterConfig {
            min_vote_gap: 5,
            ..Default::default()
        };
        let r = record(vec![cand("a", 10, 1, false), cand("b", 2, 1, false)]);
        assert_eq!(apply_quality_filters(vec![r.clone()], &cfg).0.len(), 1);

        let rs = vec![r.clone(), record(vec![cand("x", 0, 2, true)])];
        let (kept, counts) = apply_quality_filters(rs.clone(), &FilterConfig::default());
        assert_eq!(kept, rs);
        assert!(counts.is_empty());
    }

    #[test]
    fn quality_filter_lengths_and_age() {
        let mut r = record(vec![cand("a", 3, 1, false), cand("b", 1, 1, false)]);
        r.candidates[0].content = "one two three four".into();
        let cfg = FilterConfig {
            max_response_tokens: 3,
            ..Default::default()
        };
        assert_eq!(apply_quality_filters(vec![r.clone()], &cfg).1[&Rejection::ResponseLength], 1);
        let cfg = FilterConfig {
            max_question_tokens: 2,
            ..Default::default()
        };
        assert_eq!(apply_quality_filters(vec![r.clone()], &cfg).1[&Rejection::QuestionLength], 1);
        let cfg = FilterConfig {
            since: Some(ts(2)),
            ..Default::default()
        };
        assert_eq!(apply_quality_filters(vec![r.clone()], &cfg).1[&Rejection::TooOld], 1);
        let cfg = FilterConfig {
            min_votes_per_response: 2,
            ..Default::default()
        };
        assert_eq!(apply_quality_filters(vec![r], &cfg).1[&Rejection::ResponseVotes], 1);
    }

    #[test]
    fn gold_ranking_rules() {
        let decay = DecayConfig::disabled();
        let r = assign_gold_ranking(record(vec![cand("a", 0, 1, false)]), &decay);
        assert_eq!(r.gold_ranking, Some(vec![0]));

        let r = record(vec![cand("a", 5, 1, false), cand("b", 9, 1, false), cand("c", 1, 1, true)]);
        assert_eq!(assign_gold_ranking(r, &decay).gold_ranking, Some(vec![2, 1, 0]));

        let r = record(vec![cand("a", 4, 5, false), cand("b", 4, 2, false)]);
        assert_eq!(assign_gold_ranking(r, &decay).gold_ranking, Some(vec![1, 0]));
    }

    #[test]
    fn gold_ranking_uses_decay() {
        // 8 votes a year old decays below 5 fresh votes with a 180-day half-life
        let now = ts(31);
        let decay = DecayConfig::new(now, 180.0).unwrap();
        let mut old = cand("old", 8, 1, false);
        old.created_at = now - chrono::Duration::days(365);
        let mut fresh = cand("fresh", 5, 1, false);
        fresh.created_at = now;
        let r = assign_gold_ranking(record(vec![old, fresh]), &decay);
        assert_eq!(r.gold_ranking, Some(vec![1, 0]));
    }

    #[test]
    fn jsonl_key_order_and_schema_errors() {
        let r = record(vec![cand("a", 1, 1, true)]);
        let line = records_to_jsonl(std::slice::from_ref(&r));
        let keys = ["question_id", "question_text", "question_created_at", "candidates", "gold_ranking"];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));

        let mut bad = serde_json::to_value(&r).unwrap();
        bad.as_object_mut().unwrap().remove("candidates");
        let text = format!("{}\n{}\n", line.trim_end(), bad);
        match records_from_jsonl(&text) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("candidates"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(records_from_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn validate_catches_bad_records() {
        let mut r = record(vec![cand("a", 1, 1, true), cand("a", 2, 1, false)]);
        assert!(r.validate().is_err());
        r.candidates[1].id = "b".into();
        r.candidates[1].accepted = true;
        assert!(r.validate().is_err());
        r.candidates[1].accepted = false;
        r.gold_ranking = Some(vec![0, 0]);
        assert!(r.validate().is_err());
        r.gold_ranking = Some(vec![1, 0]);
        assert!(r.validate().is_ok());
    }
}
