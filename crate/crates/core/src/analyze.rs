//! Gating-weight statistics and feature export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_all, AugmentConfig, AugmentedBundle, Method};
use crate::error::{Error, Result};
use crate::model::{Batch, BatchOutput, GatedModel};
use crate::nn::Mode;
use crate::rng::RngStream;
use crate::series::TimeSeries;

const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub sample_index: usize,
    pub label: usize,
    pub alphas: Vec<f64>,
}

impl AlphaRecord {
    /// Weight of the identity expert.
    pub fn identity(&self) -> f64 {
        self.alphas[0]
    }
}

/// Augmented bundle of sample `i`, drawn from substream `i` of `seed`.
pub fn analysis_bundle(
    x: &TimeSeries,
    i: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<AugmentedBundle> {
    apply_all(x, cfg, &mut RngStream::substream(seed, i as u64))
}

/// Eval-mode outputs over `split`, chunked; `f` sees each chunk's start index.
fn for_each_chunk(
    model: &GatedModel,
    split: &[TimeSeries],
    cfg: &AugmentConfig,
    seed: u64,
    mut f: impl FnMut(usize, &BatchOutput),
) -> Result<()> {
    for (c, chunk) in split.chunks(CHUNK).enumerate() {
        let start = c * CHUNK;
        let bundles = chunk
            .iter()
            .enumerate()
            .map(|(j, x)| {
                if model.variant.uses_augmentation() {
                    analysis_bundle(x, start + j, cfg, seed)
                } else {
                    Ok(AugmentedBundle::identity(x, model.n_views()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::from_bundles(&bundles, model.n_views())?;
        let (out, _) = model.forward_batch(&batch, Mode::Eval)?;
        f(start, &out);
    }
    Ok(())
}

/// Gating weights for every sample, each seeing a fixed-seed augmented
/// bundle.
pub fn collect_alphas(
    model: &GatedModel,
    split: &[TimeSeries],
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<AlphaRecord>> {
    if model.gate.is_none() {
        return Err(Error::NoGate(model.variant.to_string()));
    }
    let mut records = Vec::with_capacity(split.len());
    for_each_chunk(model, split, cfg, seed, |start, out| {
        let alphas = out.alphas.as_ref().expect("gated model");
        for (j, row) in alphas.rows().into_iter().enumerate() {
            records.push(AlphaRecord {
                sample_index: start + j,
                label: split[start + j].label(),
                alphas: row.to_vec(),
            });
        }
    })?;
    Ok(records)
}

/// Columnwise mean of the gating weights.
pub fn alpha_table(records: &[AlphaRecord]) -> Result<Vec<f64>> {
    let first = records.first().ok_or(Error::Empty("alpha records"))?;
    let n = first.alphas.len();
    let mut sum = vec![0.0; n];
    for r in records {
        if r.alphas.len() != n {
            return Err(Error::shape(n, r.alphas.len()));
        }
        for (s, a) in sum.iter_mut().zip(&r.alphas) {
            *s += a;
        }
    }
    Ok(sum.into_iter().map(|s| s / records.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub class: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Bin of `v` among `bins` equal-width bins over `[0, 1]`; 1 goes in the top
/// bin.
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Per-class histogram of the identity weight. Every class present in the
/// records gets all `bins` rows, in class then bin order.
pub fn alpha_histogram(records: &[AlphaRecord], bins: usize) -> Result<Vec<HistogramRow>> {
    if records.is_empty() {
        return Err(Error::Empty("alpha records"));
    }
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    let n_classes = records.iter().map(|r| r.label).max().expect("nonempty") + 1;
    let mut counts = vec![vec![0usize; bins]; n_classes];
    for r in records {
        counts[r.label][bin_index(r.identity(), bins)] += 1;
    }
    let width = 1.0 / bins as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&n| n > 0))
        .flat_map(|(class, c)| {
            c.into_iter()
                .enumerate()
                .map(move |(b, count)| HistogramRow {
                    class,
                    bin_lo: b as f64 * width,
                    bin_hi: if b + 1 == bins {
                        1.0
                    } else {
                        (b + 1) as f64 * width
                    },
                    count,
                })
        })
        .collect())
}

/// `(top_k, bottom_k)` by identity weight. The ranking is descending with
/// ties going to the lower sample index; the bottom set lists the lowest
/// weight first.
pub fn extreme_samples(
    records: &[AlphaRecord],
    k: usize,
) -> Result<(Vec<AlphaRecord>, Vec<AlphaRecord>)> {
    if k > records.len() {
        return Err(Error::TooFew {
            k,
            n: records.len(),
        });
    }
    let mut ranked: Vec<&AlphaRecord> = records.iter().collect();
    ranked.sort_by(|a, b| {
        b.identity()
            .total_cmp(&a.identity())
            .then(a.sample_index.cmp(&b.sample_index))
    });
    let top = ranked[..k].iter().map(|r| (*r).clone()).collect();
    let bottom = ranked[ranked.len() - k..]
        .iter()
        .rev()
        .map(|r| (*r).clone())
        .collect();
    Ok((top, bottom))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureStage {
    /// Each expert's feature before fusion.
    PreGate,
    /// The gated sum fed to the classifier.
    Fused,
}

impl FeatureStage {
    pub fn name(self) -> &'static str {
        match self {
            FeatureStage::PreGate => "pre_gate",
            FeatureStage::Fused => "fused",
        }
    }
}

impl std::str::FromStr for FeatureStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_gate" | "pre-gate" => Ok(FeatureStage::PreGate),
            "fused" => Ok(FeatureStage::Fused),
            _ => Err(Error::Config(format!("unknown feature stage '{s}'"))),
        }
    }
}

/// One exported feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_index: usize,
    pub label: usize,
    /// Augmentation name for pre-gate rows, `fused` otherwise.
    pub method: String,
    pub values: Vec<f64>,
}

pub fn collect_features(
    model: &GatedModel,
    split: &[TimeSeries],
    stage: FeatureStage,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for_each_chunk(model, split, cfg, seed, |start, out| {
        for i in 0..out.fused.nrows() {
            let idx = start + i;
            let label = split[idx].label();
            match stage {
                FeatureStage::Fused => rows.push(FeatureRow {
                    sample_index: idx,
                    label,
                    method: "fused".into(),
                    values: out.fused.row(i).to_vec(),
                }),
                FeatureStage::PreGate => {
                    for (n, f) in out.features.iter().enumerate() {
                        rows.push(FeatureRow {
                            sample_index: idx,
                            label,
                            method: Method::ALL[n].name().into(),
                            values: f.row(i).to_vec(),
                        });
                    }
                }
            }
        }
    })?;
    Ok(rows)
}

pub fn features_to_csv(rows: &[FeatureRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("sample_index,label,method");
    for d in 0..dim {
        write!(out, ",f{d}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.sample_index, r.label, r.method).unwrap();
        for v in &r.values {
            // Shortest representation that parses back to the same bits.
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines().enumerate();
    lines.next().ok_or(Error::Empty("feature file"))?;
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, line)| {
            let err = |m: String| Error::Parse {
                line: ln + 1,
                message: m,
            };
            let mut f = line.split(',');
            let mut next = |what: &str| f.next().ok_or_else(|| err(format!("missing {what}")));
            let sample_index = next("sample_index")?
                .parse()
                .map_err(|e| err(format!("{e}")))?;
            let label = next("label")?.parse().map_err(|e| err(format!("{e}")))?;
            let method = next("method")?.to_string();
            let values = f
                .map(|v| v.parse::<f64>().map_err(|e| err(format!("'{v}': {e}"))))
                .collect::<Result<_>>()?;
            Ok(FeatureRow {
                sample_index,
                label,
                method,
                values,
            })
        })
        .collect()
}

/// Writes `features_<stage>.csv` into `dir` and returns its path.
pub fn export_features(
    model: &GatedModel,
    split: &[TimeSeries],
    stage: FeatureStage,
    cfg: &AugmentConfig,
    seed: u64,
    dir: &Path,
) -> Result<std::path::PathBuf> {
    let rows = collect_features(model, split, stage, cfg, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("features_{}.csv", stage.name()));
    fs::write(&path, features_to_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn method_header(n: usize) -> String {
    Method::ALL[..n]
        .iter()
        .map(|m| m.name())
        .collect::<Vec<_>>()
        .join(",")
}

/// `alphas.csv`: one row per sample.
pub fn alphas_to_csv(records: &[AlphaRecord], seed: u64) -> String {
    let n = records
        .first()
        .map_or(Method::ALL.len(), |r| r.alphas.len());
    let mut out = format!("# seed={seed}\nsample_index,label,{}\n", method_header(n));
    for r in records {
        let a: Vec<String> = r.alphas.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{},{},{}", r.sample_index, r.label, a.join(",")).unwrap();
    }
    out
}

pub fn alpha_table_to_csv(means: &[f64], seed: u64) -> String {
    let vals: Vec<String> = means.iter().map(|v| format!("{v:?}")).collect();
    format!(
        "# seed={seed}\n{}\n{}\n",
        method_header(means.len()),
        vals.join(",")
    )
}

pub fn histogram_to_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("class,bin_lo,bin_hi,count\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.class, r.bin_lo, r.bin_hi, r.count).unwrap();
    }
    out
}

pub fn extremes_to_csv(top: &[AlphaRecord], bottom: &[AlphaRecord]) -> String {
    let mut out = String::from("set,rank,sample_index,label,alpha_identity\n");
    for (set, recs) in [("top", top), ("bottom", bottom)] {
        for (rank, r) in recs.iter().enumerate() {
            writeln!(
                out,
                "{set},{rank},{},{},{:?}",
                r.sample_index,
                r.label,
                r.identity()
            )
            .unwrap();
        }
    }
    out
}
