use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apdf_rank::apdf::ApdfMatrix;
use apdf_rank::corpus::{assign_gold_ranking, ingest, parse_dump, read_records, write_records, FilterConfig, QARecord};
use apdf_rank::embed::format_embeddings;
use apdf_rank::eval::{aggregate, item_from_similarities, read_generations, Generation};
use apdf_rank::objective::{record_loss, LossBreakdown};
use apdf_rank::policy::{load_logprob_file, record_objective, train, LogProbTable, StepLoss};
use apdf_rank::prepare::{prepare_with_embeddings, POPULARITY, SEMANTIC};
use apdf_rank::ranking::{dynamic_rank, SemanticRank};
use apdf_rank::synthetic::{generate, SyntheticConfig};
use apdf_rank::{
    cosine, EvalConfig, Error, HashedNgramEmbedder, PrepareConfig, PreparedRecord,
    RecallNormalizer, ToyPolicy, TrainConfig,
};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{defaults, invalid, parse_list, parse_time, ApdfArgs, EmbedArgs, LossArgs};
use crate::embedding::{candidate_key, generation_key, question_key, EmbedSource};
use crate::manifest::{self, sibling};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("rows serialize"));
        out.push('\n');
    }
    out
}

fn prepare_all(
    records: &[QARecord],
    source: &EmbedSource,
    cfg: &PrepareConfig,
) -> Result<Vec<PreparedRecord>> {
    records
        .par_iter()
        .map(|r| {
            let q = source.question(r)?;
            let c = source.candidates(r)?;
            prepare_with_embeddings(r, &q, &c, cfg)
                .with_context(|| format!("record {}", r.question_id))
        })
        .collect()
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// StackExchange Posts.xml dump.
    #[arg(long)]
    pub dump: PathBuf,
    /// Output records (JSON-Lines).
    #[arg(long)]
    pub output: PathBuf,
    /// Keep only questions containing a code block.
    #[arg(long)]
    pub require_code: bool,
    #[arg(long, default_value_t = 2)]
    pub min_pool_size: usize,
    /// 0 means no limit.
    #[arg(long, default_value_t = 0)]
    pub max_pool_size: usize,
    #[arg(long, default_value_t = 0)]
    pub min_vote_gap: u64,
    #[arg(long, default_value_t = 0)]
    pub min_votes_per_response: u64,
    /// 0 means no limit.
    #[arg(long, default_value_t = 0)]
    pub max_question_tokens: usize,
    /// 0 means no limit.
    #[arg(long, default_value_t = 0)]
    pub max_response_tokens: usize,
    /// Drop questions created before this RFC 3339 time.
    #[arg(long)]
    pub since: Option<String>,
    /// Skip attaching gold rankings.
    #[arg(long)]
    pub no_gold: bool,
    #[command(flatten)]
    pub apdf: ApdfArgs,
}

pub fn ingest_cmd(a: &IngestArgs) -> Result<()> {
    let filters = FilterConfig {
        min_pool_size: a.min_pool_size,
        max_pool_size: a.max_pool_size,
        min_vote_gap: a.min_vote_gap,
        min_votes_per_response: a.min_votes_per_response,
        max_question_tokens: a.max_question_tokens,
        max_response_tokens: a.max_response_tokens,
        since: a.since.as_deref().map(parse_time).transpose()?,
        require_code_block: a.require_code,
    };
    let dump = parse_dump(&a.dump)?;
    let (mut records, report) = ingest(dump, &filters, None);
    if !a.no_gold {
        let decay = a.apdf.decay(&records)?;
        records = records.into_iter().map(|r| assign_gold_ranking(r, &decay)).collect();
    }
    write_records(&a.output, &records)?;
    let report_path = sibling(&a.output, ".report.txt");
    let text = report.to_kv_text();
    write_text(&report_path, &text)?;
    print!("{text}");
    manifest::write("ingest", a, &[&a.dump], &[a.output.clone(), report_path])
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Args, Serialize)]
pub struct EmbedCmdArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Output TSV: `key<TAB>v1 v2 ...`.
    #[arg(long)]
    pub output: PathBuf,
    /// Also embed generations (keys `<qid>/@generation`).
    #[arg(long)]
    pub generations: Option<PathBuf>,
    #[arg(long, env = "APDF_EMBED_DIM", default_value_t = defaults::EMBED_DIM)]
    pub dim: usize,
    #[arg(long, env = "APDF_EMBED_NGRAM", default_value_t = defaults::EMBED_NGRAM)]
    pub ngram: usize,
}

pub fn embed_cmd(a: &EmbedCmdArgs) -> Result<()> {
    use apdf_rank::Embedder;
    let records = read_records(&a.records)?;
    let embedder = HashedNgramEmbedder::new(a.dim, a.ngram)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    for r in &records {
        rows.push((question_key(r), r.question_text.clone()));
        for (i, c) in r.candidates.iter().enumerate() {
            rows.push((candidate_key(r, i), c.content.clone()));
        }
    }
    let mut inputs: Vec<&Path> = vec![&a.records];
    if let Some(path) = &a.generations {
        for (id, g) in read_generations(path)? {
            rows.push((generation_key(&id), g.text));
        }
        inputs.push(path);
    }
    let vectors: Vec<_> = rows.par_iter().map(|(_, t)| embedder.embed(t)).collect();
    let text = format_embeddings(rows.iter().zip(&vectors).map(|((k, _), v)| (k.as_str(), v)));
    write_text(&a.output, &text)?;
    eprintln!("embedded {} texts, dim {}", rows.len(), a.dim);
    manifest::write("embed", a, &inputs, std::slice::from_ref(&a.output))
}

// ---------------------------------------------------------------- rank

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    /// Records (JSON-Lines).
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    pub records: Option<PathBuf>,
    /// Rank a single fused matrix given as headerless CSV instead.
    #[arg(long, requires = "rank_of")]
    pub matrix: Option<PathBuf>,
    /// Semantic rank per candidate for `--matrix`, e.g. `1,2,0`.
    #[arg(long)]
    pub rank_of: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub apdf: ApdfArgs,
}

#[derive(Debug, Serialize)]
struct RankLine {
    record_id: String,
    order: Vec<usize>,
    candidate_ids: Vec<String>,
    semantic_order: Vec<usize>,
}

pub fn read_matrix_csv(path: &Path) -> Result<ApdfMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::Schema {
                        line: n + 1,
                        message: format!("bad number `{}`", v.trim()),
                    })
                })
                .collect::<apdf_rank::Result<Vec<f64>>>()
        })
        .collect::<apdf_rank::Result<Vec<_>>>()?;
    Ok(ApdfMatrix::from_rows("multi", rows)?)
}

pub fn rank_cmd(a: &RankArgs) -> Result<()> {
    if let Some(path) = &a.matrix {
        let m = read_matrix_csv(path)?;
        let rank_of = parse_list(a.rank_of.as_deref().unwrap_or_default())?;
        let arank = SemanticRank::from_rank_of(rank_of)?;
        let ranking = dynamic_rank(&m, &arank)?;
        let line = RankLine {
            record_id: "matrix".into(),
            order: ranking.order.clone(),
            candidate_ids: (0..m.size()).map(|i| i.to_string()).collect(),
            semantic_order: arank.order(),
        };
        write_text(&a.output, &to_jsonl(&[line]))?;
        return manifest::write("rank", a, &[path], std::slice::from_ref(&a.output));
    }
    let records_path = a.records.as_ref().context("--records is required")?;
    let records = read_records(records_path)?;
    let source = EmbedSource::from_args(&a.embed)?;
    let cfg = a.apdf.prepare_config(&records)?;
    let prepared = prepare_all(&records, &source, &cfg)?;
    let lines: Vec<RankLine> = records
        .iter()
        .zip(&prepared)
        .map(|(r, p)| RankLine {
            record_id: r.question_id.clone(),
            order: p.ranking.order.clone(),
            candidate_ids: p.ranking.order.iter().map(|&i| r.candidates[i].id.clone()).collect(),
            semantic_order: p.arank.order(),
        })
        .collect();
    write_text(&a.output, &to_jsonl(&lines))?;
    eprintln!("ranked {} records", lines.len());
    let mut inputs: Vec<&Path> = vec![records_path];
    if let Some(e) = &a.embed.embeddings {
        inputs.push(e);
    }
    manifest::write("rank", a, &inputs, std::slice::from_ref(&a.output))
}

// ---------------------------------------------------------------- loss

#[derive(Debug, Args, Serialize)]
pub struct LossCmdArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Token log-probabilities: `{record_id, candidate_id, logprobs}` per line.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    pub logprobs: Option<PathBuf>,
    /// Score candidates with a saved toy policy instead.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub apdf: ApdfArgs,
}

#[derive(Debug, Serialize)]
struct LossLine {
    record_id: String,
    #[serde(flatten)]
    loss: LossBreakdown,
}

pub fn loss_cmd(a: &LossCmdArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let source = EmbedSource::from_args(&a.embed)?;
    let cfg = a.apdf.prepare_config(&records)?;
    let prepared = prepare_all(&records, &source, &cfg)?;
    let (alpha, mode) = (a.loss.alpha, a.loss.mode);
    let mut inputs: Vec<&Path> = vec![&a.records];

    let mut lines: Vec<LossLine> = if let Some(path) = &a.logprobs {
        let table = load_logprob_file(path)?;
        table.check_covers(&records)?;
        inputs.push(path);
        records
            .par_iter()
            .zip(&prepared)
            .map(|(r, p)| {
                let lp = table.for_record(r)?;
                let loss = record_loss(&lp, &p.ranking, &p.bundle, alpha, mode)
                    .with_context(|| format!("record {}", r.question_id))?;
                Ok(LossLine {
                    record_id: r.question_id.clone(),
                    loss,
                })
            })
            .collect::<Result<_>>()?
    } else {
        let path = a.policy.as_ref().context("--logprobs or --policy is required")?;
        let policy = ToyPolicy::load(path)?;
        inputs.push(path);
        prepared
            .par_iter()
            .map(|p| {
                let loss = record_objective(&policy, p, alpha, mode)
                    .with_context(|| format!("record {}", p.record_id))?;
                Ok(LossLine {
                    record_id: p.record_id.clone(),
                    loss,
                })
            })
            .collect::<Result<_>>()?
    };
    lines.sort_by(|x, y| x.record_id.cmp(&y.record_id));
    write_text(&a.output, &to_jsonl(&lines))?;

    let n = lines.len().max(1) as f64;
    let mean = |f: fn(&LossBreakdown) -> f64| lines.iter().map(|l| f(&l.loss)).sum::<f64>() / n;
    let mut summary = String::new();
    let _ = writeln!(summary, "n_records={}", lines.len());
    let _ = writeln!(summary, "alpha={alpha}");
    let _ = writeln!(summary, "mode={}", mode_str(mode));
    let _ = writeln!(summary, "mean_l_pa={:.9}", mean(|l| l.l_pa));
    let _ = writeln!(summary, "mean_l_pc={:.9}", mean(|l| l.l_pc));
    let _ = writeln!(summary, "mean_total={:.9}", mean(|l| l.total));
    let summary_path = sibling(&a.output, ".summary.txt");
    write_text(&summary_path, &summary)?;
    print!("{summary}");
    manifest::write("loss", a, &inputs, &[a.output.clone(), summary_path])
}

fn mode_str(mode: apdf_rank::ComparisonMode) -> &'static str {
    match mode {
        apdf_rank::ComparisonMode::Literal => "literal",
        apdf_rank::ComparisonMode::TopAnchored => "top_anchored",
    }
}

// ---------------------------------------------------------------- train-toy

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training records (JSON-Lines).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub records: Option<PathBuf>,
    /// Train on this many generated pools instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, env = "APDF_SYNTHETIC_SEED", default_value_t = defaults::SYNTHETIC_SEED)]
    pub synthetic_seed: u64,
    #[arg(long, default_value_t = defaults::POOL_SIZE)]
    pub pool_size: usize,
    /// Where the trained policy is written.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = defaults::EPOCHS)]
    pub epochs: usize,
    #[arg(long, env = "APDF_LR", default_value_t = defaults::LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, env = "APDF_SEED", default_value_t = defaults::SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = defaults::INIT_SCALE)]
    pub init_scale: f64,
    /// Save `<output>.step<N>` every N updates.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Write best-of-pool generations of the trained policy.
    #[arg(long)]
    pub generations_out: Option<PathBuf>,
    /// Write the training records (useful with `--synthetic`).
    #[arg(long)]
    pub records_out: Option<PathBuf>,
    /// Write the trained policy's token log-probabilities.
    #[arg(long)]
    pub logprobs_out: Option<PathBuf>,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub apdf: ApdfArgs,
}

#[derive(Debug, Serialize)]
struct TraceLine<'a> {
    step: usize,
    epoch: usize,
    record_id: &'a str,
    l_pa: f64,
    l_pc: f64,
    total: f64,
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = Vec::new();
    let (records, prepared): (Vec<QARecord>, Vec<PreparedRecord>) = if let Some(path) = &a.records {
        inputs.push(path);
        let records = read_records(path)?;
        let source = EmbedSource::from_args(&a.embed)?;
        let cfg = a.apdf.prepare_config(&records)?;
        let prepared = prepare_all(&records, &source, &cfg)?;
        (records, prepared)
    } else {
        let n = a.synthetic.context("--records or --synthetic is required")?;
        let cfg = SyntheticConfig {
            records: n,
            pool_size: a.pool_size,
            seed: a.synthetic_seed,
        };
        let embedder = HashedNgramEmbedder::new(a.embed.dim, a.embed.ngram)?;
        let prep = PrepareConfig {
            log_base: a.apdf.log_base,
            ..PrepareConfig::default()
        };
        generate(&cfg, &embedder, &prep)?.into_iter().unzip()
    };
    if prepared.is_empty() {
        bail!(Error::invalid("no training records"));
    }
    let policy = ToyPolicy::random(a.lr, a.seed, a.init_scale);
    let cfg = TrainConfig {
        epochs: a.epochs,
        alpha: a.loss.alpha,
        mode: a.loss.mode,
        checkpoint_every: a.checkpoint_every,
    };
    let outcome = train(policy, &prepared, &cfg)?;
    let mut outputs = vec![a.output.clone()];
    outcome.policy.save(&a.output)?;

    let trace: Vec<TraceLine> = outcome.trace.iter().map(trace_line).collect();
    let trace_path = sibling(&a.output, ".trace.jsonl");
    write_text(&trace_path, &to_jsonl(&trace))?;
    outputs.push(trace_path);

    for (step, p) in &outcome.checkpoints {
        let path = sibling(&a.output, &format!(".step{step}"));
        p.save(&path)?;
        outputs.push(path);
    }
    if let Some(path) = &a.generations_out {
        let gens = prepared
            .par_iter()
            .map(|p| {
                let best = outcome.policy.select(&p.question, &p.candidates)?;
                Ok(Generation {
                    record_id: p.record_id.clone(),
                    text: p.candidates[best].clone(),
                    score: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_text(path, &to_jsonl(&gens))?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.records_out {
        write_records(path, &records)?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.logprobs_out {
        let mut table = LogProbTable::new();
        for r in &records {
            for c in &r.candidates {
                table.insert(&r.question_id, &c.id, outcome.policy.score(&r.question_text, &c.content)?)?;
            }
        }
        write_text(path, &table.to_jsonl())?;
        outputs.push(path.clone());
    }
    for (e, m) in outcome.epoch_means().iter().enumerate() {
        println!("epoch{e}.mean_loss={m:.9}");
    }
    println!("steps={}", outcome.trace.len());
    manifest::write("train-toy", a, &inputs, &outputs)
}

fn trace_line(s: &StepLoss) -> TraceLine<'_> {
    TraceLine {
        step: s.step,
        epoch: s.epoch,
        record_id: &s.record_id,
        l_pa: s.loss.l_pa,
        l_pc: s.loss.l_pc,
        total: s.loss.total,
    }
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// `{record_id, text, score?}` per line.
    #[arg(long)]
    pub generations: PathBuf,
    /// Report JSON; a `key=value` summary goes to `<output>.txt`.
    #[arg(long)]
    pub output: PathBuf,
    /// Cutoffs for PrefHit and PrefRecall.
    #[arg(long, env = "APDF_K", default_value = "1,2,3")]
    pub k: String,
    /// PrefRecall denominator: paper_half or by_k.
    #[arg(long, env = "APDF_NORMALIZER", default_value = "paper_half")]
    pub normalizer: RecallNormalizer,
    #[arg(long, default_value_t = defaults::BLEU_MAX_N)]
    pub bleu_max_n: usize,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        ks: parse_list(&a.k)?,
        normalizer: a.normalizer,
        bleu_max_n: a.bleu_max_n,
    };
    cfg.validate()?;
    let records = read_records(&a.records)?;
    let generations = read_generations(&a.generations)?;
    let source = EmbedSource::from_args(&a.embed)?;
    let items = records
        .par_iter()
        .map(|r| {
            let g = generations.get(&r.question_id).ok_or_else(|| {
                Error::invalid(format!("no generation for record {}", r.question_id))
            })?;
            let gv = source.generation(&r.question_id, &g.text)?;
            let sims = source
                .candidates(r)?
                .iter()
                .map(|c| cosine(&gv, c))
                .collect::<apdf_rank::Result<Vec<f64>>>()?;
            Ok(item_from_similarities(r, g, sims, cfg.bleu_max_n)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(&items, &cfg)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.output, &json)?;
    let kv = report.to_kv_text();
    let kv_path = sibling(&a.output, ".txt");
    write_text(&kv_path, &kv)?;
    print!("{kv}");
    let mut inputs: Vec<&Path> = vec![&a.records, &a.generations];
    if let Some(e) = &a.embed.embeddings {
        inputs.push(e);
    }
    manifest::write("eval", a, &inputs, &[a.output.clone(), kv_path])
}

// ---------------------------------------------------------------- export-heatmap

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Semantic,
    Popularity,
    Multi,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub record_id: String,
    #[arg(long, value_enum, default_value = "multi")]
    pub attribute: Attribute,
    /// Matrix as headerless CSV, candidates in pool order.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub apdf: ApdfArgs,
}

pub fn heatmap_cmd(a: &HeatmapArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let record = records
        .iter()
        .find(|r| r.question_id == a.record_id)
        .ok_or_else(|| Error::invalid(format!("no record `{}`", a.record_id)))?;
    let source = EmbedSource::from_args(&a.embed)?;
    let cfg = a.apdf.prepare_config(&records)?;
    let p = prepare_all(std::slice::from_ref(record), &source, &cfg)?.remove(0);
    let m = match a.attribute {
        Attribute::Semantic => p.bundle.single(SEMANTIC),
        Attribute::Popularity => p.bundle.single(POPULARITY),
        Attribute::Multi => Some(&p.bundle.multi),
    }
    .context("attribute matrix missing")
    .map_err(invalid)?;
    write_text(&a.output, &m.to_csv())?;
    let mut inputs: Vec<&Path> = vec![&a.records];
    if let Some(e) = &a.embed.embeddings {
        inputs.push(e);
    }
    manifest::write("export-heatmap", a, &inputs, std::slice::from_ref(&a.output))
}
