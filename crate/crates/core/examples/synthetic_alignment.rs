//! Trains the toy policy on the synthetic suite and prints PrefHit@1 and the
//! mean objective at every checkpoint.
//!
//! cargo run --release -p apdf-rank --example synthetic_alignment -- [alpha] [mode] [lr] [epochs]

use std::collections::BTreeMap;

use apdf_rank::eval::{evaluate, EvalConfig, Generation};
use apdf_rank::policy::{record_objective, train, ToyPolicy, TrainConfig};
use apdf_rank::synthetic::{generate, SyntheticConfig};
use apdf_rank::{ComparisonMode, HashedNgramEmbedder, PrepareConfig};

fn main() -> apdf_rank::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let alpha: f64 = args.first().map_or(Ok(1.0), |s| s.parse()).expect("alpha");
    let mode: ComparisonMode = args.get(1).map_or(Ok(ComparisonMode::TopAnchored), |s| s.parse())?;
    let lr: f64 = args.get(2).map_or(Ok(2.0), |s| s.parse()).expect("lr");
    let epochs: usize = args.get(3).map_or(Ok(3), |s| s.parse()).expect("epochs");

    let embedder = HashedNgramEmbedder::default();
    let suite = generate(&SyntheticConfig::default(), &embedder, &PrepareConfig::default())?;
    let (records, prepared): (Vec<_>, Vec<_>) = suite.into_iter().unzip();

    let cfg = TrainConfig {
        epochs,
        alpha,
        mode,
        checkpoint_every: Some(50),
    };
    let outcome = train(ToyPolicy::random(lr, 7, 0.01), &prepared, &cfg)?;
    for (step, policy) in &outcome.checkpoints {
        let mut gens = BTreeMap::new();
        let mut loss = 0.0;
        for p in &prepared {
            let pick = policy.select(&p.question, &p.candidates)?;
            gens.insert(
                p.record_id.clone(),
                Generation {
                    record_id: p.record_id.clone(),
                    text: p.candidates[pick].clone(),
                    score: None,
                },
            );
            loss += record_objective(policy, p, alpha, mode)?.total;
        }
        let report = evaluate(&records, &gens, &embedder, &EvalConfig::default())?;
        println!(
            "step {step:5}  pref_hit@1 {:.3}  mean_loss {:.5}",
            report.pref_hit[&1],
            loss / prepared.len() as f64
        );
    }
    println!("epoch means {:?}", outcome.epoch_means());
    Ok(())
}
