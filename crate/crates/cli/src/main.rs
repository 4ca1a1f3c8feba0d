use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fedxlat_core::corpus::{
    import_aligned, length_stats, load_pairs, partition, write_pairs, LengthUnit, PartitionSpec,
    ProjectSelector,
};
use fedxlat_core::metrics::{evaluate_corpus, Language, MetricConfig};
use fedxlat_core::stats::{mann_whitney_u, wilcoxon_signed_rank};
use serde::Deserialize;

mod simulate;

#[derive(Parser)]
#[command(
    name = "fedxlat",
    version,
    about = "Federated LoRA code-translation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a JSONL corpus into per-client files.
    Partition {
        #[arg(long)]
        corpus: PathBuf,
        /// Exact per-client record counts, e.g. 1800,8993.
        #[arg(long, value_delimiter = ',', conflicts_with = "by_project")]
        ratio: Option<Vec<usize>>,
        /// One client's projects, comma separated; repeat per client. `*` takes the rest.
        #[arg(long)]
        by_project: Vec<String>,
        #[arg(long, env = "FEDXLAT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build JSONL pairs from two line-aligned source files.
    Import {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value = "java")]
        source_lang: String,
        #[arg(long, default_value = "csharp")]
        target_lang: String,
        #[arg(long, default_value = "default")]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a federated simulation with the toy translator.
    Simulate(simulate::SimulateArgs),
    /// Score candidate translations against references.
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value = "csharp")]
        language: Language,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mann-Whitney U or Wilcoxon signed-rank test.
    Stats {
        #[arg(long = "test")]
        test: StatTest,
        /// JSON file: {"x": [...], "y": [...]} or {"pairs": [[a, b], ...]}.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        y: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Code length distribution per language.
    LengthStats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "chars")]
        unit: Unit,
        #[arg(long, default_value_t = 50)]
        bin_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the round coordinator.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatTest {
    Mannwhitney,
    Wilcoxon,
}

#[derive(Clone, Copy, ValueEnum)]
enum Unit {
    Chars,
    Tokens,
}

#[derive(Deserialize)]
struct StatsInput {
    #[serde(default)]
    x: Vec<f64>,
    #[serde(default)]
    y: Vec<f64>,
    #[serde(default)]
    pairs: Vec<(f64, f64)>,
}

pub(crate) fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn parse_selector(group: &str) -> ProjectSelector {
    if group.trim() == "*" {
        return ProjectSelector::Remaining;
    }
    ProjectSelector::Projects(
        group
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect::<BTreeSet<_>>(),
    )
}

/// One snippet per line: a JSON object with `code`, a full pair (its
/// `target` is used), or a bare JSON string.
fn read_snippets(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let v: serde_json::Value = serde_json::from_str(line)
                .with_context(|| format!("{}:{}: invalid JSON", path.display(), i + 1))?;
            let code = match &v {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Object(o) => o
                    .get("code")
                    .or_else(|| o.get("target"))
                    .and_then(|c| c.as_str())
                    .map(str::to_string),
                _ => None,
            };
            code.with_context(|| {
                format!(
                    "{}:{}: expected a string or an object with 'code'",
                    path.display(),
                    i + 1
                )
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition {
            corpus,
            ratio,
            by_project,
            seed,
            out,
        } => {
            let pairs = load_pairs(&corpus)?;
            let spec = match (ratio, by_project.is_empty()) {
                (Some(counts), true) => PartitionSpec::ByRatio(counts),
                (None, false) => {
                    PartitionSpec::ByProject(by_project.iter().map(|g| parse_selector(g)).collect())
                }
                _ => bail!("give exactly one of --ratio or --by-project"),
            };
            let parts = partition(&pairs, &spec, seed)?;
            create_out(&out)?;
            for (i, part) in parts.iter().enumerate() {
                let path = out.join(format!("client_{i}.jsonl"));
                write_pairs(&path, part)?;
                println!("{}\t{}", path.display(), part.len());
            }
        }
        Command::Import {
            source,
            target,
            source_lang,
            target_lang,
            project,
            out,
        } => {
            let read = |p: &Path| {
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
            };
            let pairs = import_aligned(
                &read(&source)?,
                &read(&target)?,
                &source_lang,
                &target_lang,
                &project,
            )?;
            create_out(&out)?;
            let path = out.join("pairs.jsonl");
            write_pairs(&path, &pairs)?;
            println!("{}\t{}", path.display(), pairs.len());
        }
        Command::Simulate(args) => simulate::run(args)?,
        Command::Evaluate {
            candidates,
            references,
            language,
            out,
        } => {
            let cands = read_snippets(&candidates)?;
            let refs = read_snippets(&references)?;
            let report = evaluate_corpus(&cands, &refs, language, &MetricConfig::default())?;
            create_out(&out)?;
            write_json(&out.join("metrics.json"), &report)?;
            let m = report.mean;
            println!("records\t{}", report.per_record.len());
            println!(
                "bleu\t{:.6}\nmeteor\t{:.6}\nrouge_l\t{:.6}\ncodebleu\t{:.6}",
                m.bleu, m.meteor, m.rouge_l, m.codebleu
            );
        }
        Command::Stats {
            test,
            input,
            x,
            y,
            out,
        } => {
            let mut data = StatsInput {
                x,
                y,
                pairs: Vec::new(),
            };
            if let Some(path) = input {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                data = serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
            }
            let result = match test {
                StatTest::Mannwhitney => mann_whitney_u(&data.x, &data.y)?,
                StatTest::Wilcoxon => {
                    let pairs = if data.pairs.is_empty() {
                        if data.x.len() != data.y.len() {
                            bail!("--x and --y must have equal length for paired tests");
                        }
                        data.x.iter().copied().zip(data.y.iter().copied()).collect()
                    } else {
                        data.pairs
                    };
                    wilcoxon_signed_rank(&pairs)?
                }
            };
            if let Some(out) = out {
                create_out(&out)?;
                write_json(&out.join("stats.json"), &result)?;
            }
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::LengthStats {
            corpus,
            unit,
            bin_width,
            out,
        } => {
            let pairs = load_pairs(&corpus)?;
            let unit = match unit {
                Unit::Chars => LengthUnit::Chars,
                Unit::Tokens => LengthUnit::Tokens,
            };
            let stats = length_stats(&pairs, unit, bin_width);
            create_out(&out)?;
            write_json(&out.join("length_stats.json"), &stats)?;
            for (lang, s) in &stats {
                println!(
                    "{lang}\tn={}\tmean={:.1}\tmedian={:.1}\tmin={}\tmax={}",
                    s.count, s.mean, s.median, s.min, s.max
                );
            }
        }
        Command::Serve { bind } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(bind).await?;
                println!("listening on {}", listener.local_addr()?);
                fedxlat_coordinator::serve(listener, fedxlat_coordinator::Coordinator::new()).await
            })?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
