//! Translation-pair ingestion, client partitioning and length statistics.
//!
//! Pairs are stored one JSON object per line:
//!
//! ```json
//! {"id": "0", "project": "lucene", "source_lang": "java", "target_lang": "csharp", "source": "...", "target": "..."}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize_code;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub id: String,
    pub project: String,
    pub source_lang: String,
    pub target_lang: String,
    pub source: String,
    pub target: String,
}

impl TranslationPair {
    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.source.trim().is_empty() {
            return Err("empty source code".into());
        }
        if self.target.trim().is_empty() {
            return Err("empty target code".into());
        }
        if self.source_lang == self.target_lang {
            return Err(format!(
                "source and target language are both '{}'",
                self.source_lang
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    #[default]
    FailFast,
    /// Skip malformed lines and report them alongside the good pairs.
    SkipInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub pairs: Vec<TranslationPair>,
    pub skipped: Vec<LineIssue>,
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<TranslationPair>> {
    Ok(load_pairs_with(path, LoadMode::FailFast)?.pairs)
}

pub fn load_pairs_with(path: impl AsRef<Path>, mode: LoadMode) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(std::io::BufReader::new(file), mode).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses JSONL from any reader. Blank lines are ignored.
pub fn parse_pairs(reader: impl BufRead, mode: LoadMode) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<TranslationPair>(&line)
            .map_err(|e| e.to_string())
            .and_then(|p| p.check().map(|_| p))
            .and_then(|p| {
                if seen.contains(&p.id) {
                    Err(format!("duplicate id '{}'", p.id))
                } else {
                    Ok(p)
                }
            });
        match (parsed, mode) {
            (Ok(p), _) => {
                seen.insert(p.id.clone());
                report.pairs.push(p);
            }
            (Err(reason), LoadMode::FailFast) => {
                return Err(Error::Parse {
                    line: line_no,
                    reason,
                })
            }
            (Err(reason), LoadMode::SkipInvalid) => report.skipped.push(LineIssue {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(report)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TranslationPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pair serialises");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Builds pairs from two line-aligned files (one snippet per line), the layout
/// of the CodeXGLUE code-to-code translation release.
pub fn import_aligned(
    source_text: &str,
    target_text: &str,
    source_lang: &str,
    target_lang: &str,
    project: &str,
) -> Result<Vec<TranslationPair>> {
    let sources: Vec<&str> = source_text.lines().collect();
    let targets: Vec<&str> = target_text.lines().collect();
    if sources.len() != targets.len() {
        return Err(Error::Argument(format!(
            "aligned files differ in length: {} vs {} lines",
            sources.len(),
            targets.len()
        )));
    }
    sources
        .iter()
        .zip(&targets)
        .enumerate()
        .map(|(i, (s, t))| {
            let pair = TranslationPair {
                id: i.to_string(),
                project: project.to_string(),
                source_lang: source_lang.to_string(),
                target_lang: target_lang.to_string(),
                source: s.to_string(),
                target: t.to_string(),
            };
            pair.check().map_err(|reason| Error::Parse {
                line: i + 1,
                reason,
            })?;
            Ok(pair)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectSelector {
    Projects(BTreeSet<String>),
    /// Every project not claimed by another client.
    Remaining,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSpec {
    ByProject(Vec<ProjectSelector>),
    /// Exact per-client counts, cut from a seeded shuffle; must sum to the corpus size.
    ByRatio(Vec<usize>),
}

/// Splits `pairs` into disjoint per-client lists covering the whole input.
/// Input order is preserved within each client for `ByProject`.
pub fn partition(
    pairs: &[TranslationPair],
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<TranslationPair>>> {
    let clients = match spec {
        PartitionSpec::ByRatio(counts) => {
            if counts.is_empty() {
                return Err(Error::Argument("ratio needs at least one client".into()));
            }
            let total: usize = counts.iter().sum();
            if total > pairs.len() {
                return Err(Error::Argument(format!(
                    "ratio counts sum to {total} but the corpus has {} pairs",
                    pairs.len()
                )));
            }
            if total < pairs.len() {
                return Err(Error::Argument(format!(
                    "ratio counts sum to {total} and would leave {} of {} pairs unassigned",
                    pairs.len() - total,
                    pairs.len()
                )));
            }
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut start = 0;
            counts
                .iter()
                .map(|&c| {
                    let chunk = order[start..start + c]
                        .iter()
                        .map(|&i| pairs[i].clone())
                        .collect();
                    start += c;
                    chunk
                })
                .collect::<Vec<Vec<_>>>()
        }
        PartitionSpec::ByProject(selectors) => partition_by_project(pairs, selectors)?,
    };
    if let Some(i) = clients.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!(
            "client {i} would receive no pairs"
        )));
    }
    Ok(clients)
}

fn partition_by_project(
    pairs: &[TranslationPair],
    selectors: &[ProjectSelector],
) -> Result<Vec<Vec<TranslationPair>>> {
    let known: BTreeSet<&str> = pairs.iter().map(|p| p.project.as_str()).collect();
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    let mut remaining_client = None;
    for (client, sel) in selectors.iter().enumerate() {
        match sel {
            ProjectSelector::Remaining => {
                if remaining_client.replace(client).is_some() {
                    return Err(Error::Argument(
                        "only one client may take the remaining projects".into(),
                    ));
                }
            }
            ProjectSelector::Projects(projects) => {
                for p in projects {
                    if !known.contains(p.as_str()) {
                        return Err(Error::Argument(format!(
                            "unknown project '{p}'; known projects: {}",
                            known.iter().copied().collect::<Vec<_>>().join(", ")
                        )));
                    }
                    if let Some(prev) = owner.insert(p.as_str(), client) {
                        return Err(Error::Argument(format!(
                            "project '{p}' assigned to clients {prev} and {client}"
                        )));
                    }
                }
            }
        }
    }
    let mut clients = vec![Vec::new(); selectors.len()];
    for pair in pairs {
        let client = owner
            .get(pair.project.as_str())
            .copied()
            .or(remaining_client)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "project '{}' is not assigned to any client",
                    pair.project
                ))
            })?;
        clients[client].push(pair.clone());
    }
    Ok(clients)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Chars,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
    pub bin_width: usize,
    /// Counts per bin; bin `i` covers lengths `[i·w, (i+1)·w)`.
    pub histogram: Vec<usize>,
}

fn measure(text: &str, unit: LengthUnit) -> usize {
    match unit {
        LengthUnit::Chars => text.chars().count(),
        LengthUnit::Tokens => tokenize_code(text).len(),
    }
}

/// Per-language code length summary. Each pair contributes its source length
/// under `source_lang` and its target length under `target_lang`.
pub fn length_stats(
    pairs: &[TranslationPair],
    unit: LengthUnit,
    bin_width: usize,
) -> BTreeMap<String, LengthStats> {
    let bin_width = bin_width.max(1);
    let mut lengths: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for p in pairs {
        lengths
            .entry(p.source_lang.clone())
            .or_default()
            .push(measure(&p.source, unit));
        lengths
            .entry(p.target_lang.clone())
            .or_default()
            .push(measure(&p.target, unit));
    }
    lengths
        .into_iter()
        .map(|(lang, mut ls)| {
            ls.sort_unstable();
            let n = ls.len();
            let mean = ls.iter().sum::<usize>() as f64 / n as f64;
            let median = if n % 2 == 1 {
                ls[n / 2] as f64
            } else {
                (ls[n / 2 - 1] + ls[n / 2]) as f64 / 2.0
            };
            let max = ls[n - 1];
            let mut histogram = vec![0usize; max / bin_width + 1];
            for &l in &ls {
                histogram[l / bin_width] += 1;
            }
            let stats = LengthStats {
                count: n,
                mean,
                median,
                min: ls[0],
                max,
                bin_width,
                histogram,
            };
            (lang, stats)
        })
        .collect()
}
