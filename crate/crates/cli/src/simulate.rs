use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fedxlat_core::adapters::{DEFAULT_ALPHA, DEFAULT_RANK};
use fedxlat_core::aggregation::AggregationMethod;
use fedxlat_core::corpus::load_pairs;
use fedxlat_core::federation::{
    run_simulation, train_individuals, FederationConfig, RunManifest, DEFAULT_ROUNDS,
};
use fedxlat_core::metrics::HEADLINE_METRICS;
use fedxlat_core::toytrainer::{pair_to_sample, Sample, SyntheticTaskSpec, ToyModel};
use serde::Serialize;

use crate::{create_out, write_json};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Synthetic,
    Corpus,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    clients: usize,
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: usize,
    #[arg(long, default_value = "fedavg")]
    method: AggregationMethod,
    #[arg(long, value_enum, default_value = "synthetic")]
    task: Task,
    #[arg(long, env = "FEDXLAT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    /// Source tokens owned by each client (synthetic task).
    #[arg(long, default_value_t = 20)]
    subset: usize,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    #[arg(long, default_value_t = 200)]
    test_samples: usize,
    /// Per-client toy JSONL files (corpus task), in client order.
    #[arg(long, num_args = 1..)]
    client_files: Vec<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RANK)]
    rank: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Skip training the per-client baselines.
    #[arg(long)]
    no_baselines: bool,
}

#[derive(Serialize)]
struct Files {
    manifest: String,
    rounds_csv: String,
    rounds_json: String,
    plot_csv: String,
}

#[derive(Serialize)]
struct CliManifest<'a> {
    tool_version: &'static str,
    seed: u64,
    task: Task,
    files: Files,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic: Option<&'a SyntheticTaskSpec>,
    #[serde(flatten)]
    run: &'a RunManifest,
}

fn load_samples(path: &PathBuf) -> Result<Vec<Sample>> {
    load_pairs(path)?
        .iter()
        .map(|p| pair_to_sample(p).with_context(|| format!("in {}", path.display())))
        .collect()
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let (clients_data, test, spec) = match args.task {
        Task::Synthetic => {
            let spec = SyntheticTaskSpec::generate(
                args.vocab,
                args.clients,
                args.subset,
                args.seq_len,
                args.samples,
                args.test_samples,
                args.seed,
            )?;
            let corpus = spec.sample(args.seed.wrapping_add(1));
            (corpus.clients, corpus.test, Some(spec))
        }
        Task::Corpus => {
            if args.client_files.len() != args.clients {
                bail!(
                    "--clients is {} but {} --client-files were given",
                    args.clients,
                    args.client_files.len()
                );
            }
            let test_file = args
                .test_file
                .as_ref()
                .context("--task corpus needs --test-file")?;
            let data = args
                .client_files
                .iter()
                .map(load_samples)
                .collect::<Result<Vec<_>>>()?;
            (data, load_samples(test_file)?, None)
        }
    };

    let mut config = FederationConfig::new(args.method, args.clients, args.seed);
    config.rounds = args.rounds;
    config.rank = args.rank;
    config.alpha = args.alpha;
    if let Some(lr) = args.learning_rate {
        config.train.learning_rate = lr;
    }
    if let Some(e) = args.epochs {
        config.train.epochs_per_round = e;
    }
    let model = ToyModel::zeros(args.vocab)?;
    let records = run_simulation(&config, &model, &clients_data, &test)?;
    let individuals = if args.no_baselines {
        Vec::new()
    } else {
        train_individuals(&config, &model, &clients_data, &test)?
    };
    let run = RunManifest::new(config, records, individuals)?;

    create_out(&args.out)?;
    let files = Files {
        manifest: "manifest.json".into(),
        rounds_csv: "rounds.csv".into(),
        rounds_json: "rounds.json".into(),
        plot_csv: "plot.csv".into(),
    };

    let mut table = csv::Writer::from_path(args.out.join(&files.rounds_csv))?;
    let mut header = vec!["round".to_string(), "method".into(), "direction".into()];
    header.extend(HEADLINE_METRICS.iter().map(|s| s.to_string()));
    header.extend(
        [
            "ngram",
            "weighted_ngram",
            "syntax",
            "dataflow",
            "token_accuracy",
            "aggregate_checksum",
        ]
        .map(String::from),
    );
    table.write_record(&header)?;
    let mut plot = csv::Writer::from_path(args.out.join(&files.plot_csv))?;
    plot.write_record(["series", "round", "metric", "value"])?;
    for r in &run.records {
        for d in &r.metrics {
            let p = d.report.codebleu_parts;
            let mut row = vec![
                r.round_index.to_string(),
                r.method.to_string(),
                d.direction.clone(),
            ];
            row.extend(d.report.headline().iter().map(|v| format!("{v:.6}")));
            row.extend(
                [
                    p.ngram,
                    p.weighted_ngram,
                    p.syntax,
                    p.dataflow,
                    d.token_accuracy,
                ]
                .iter()
                .map(|v| format!("{v:.6}")),
            );
            row.push(r.aggregate_checksum.to_hex());
            table.write_record(&row)?;
            let series = format!("{}:{}", r.method, d.direction);
            for (name, v) in HEADLINE_METRICS.iter().zip(d.report.headline()) {
                plot.write_record([
                    series.as_str(),
                    &r.round_index.to_string(),
                    name,
                    &format!("{v:.6}"),
                ])?;
            }
            plot.write_record([
                series.as_str(),
                &r.round_index.to_string(),
                "token_accuracy",
                &format!("{:.6}", d.token_accuracy),
            ])?;
        }
    }
    table.flush()?;
    plot.flush()?;
    write_json(&args.out.join(&files.rounds_json), &run.records)?;
    let manifest = CliManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: args.seed,
        task: args.task,
        files,
        synthetic: spec.as_ref(),
        run: &run,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;

    println!("round\tbleu\tmeteor\trouge_l\tcodebleu\ttoken_acc");
    for r in &run.records {
        let d = &r.metrics[0];
        let [b, m, rl, c] = d.report.headline();
        println!(
            "{}\t{b:.4}\t{m:.4}\t{rl:.4}\t{c:.4}\t{:.4}",
            r.round_index, d.token_accuracy
        );
    }
    for ind in &run.individuals {
        println!(
            "individual {}\ttoken_acc {:.4}",
            ind.client_id, ind.metrics.token_accuracy
        );
    }
    let best = &run.records[run.best_round];
    println!(
        "best round {} ({}@{}) token_acc {:.4}",
        run.best_round,
        best.method,
        run.best_round,
        best.token_accuracy()
    );
    Ok(())
}
