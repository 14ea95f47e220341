//! Time-series data model and UCR-archive ingestion.
//!
//! Files follow the UCR 2018 convention: one series per line, class label in
//! the first field, values after it, tab- or comma-separated. Missing values
//! (`NaN` or an empty field) are carried as `f64::NAN` until
//! [`impute_missing`] replaces them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One fixed-length sequence, `channels x length`, with a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Array2<f64>,
    label: usize,
}

impl TimeSeries {
    pub fn new(values: Array2<f64>, label: usize) -> Result<Self> {
        let (c, t) = values.dim();
        if c < 1 || t < 2 {
            return Err(Error::shape("C >= 1 and T >= 2", format!("[{c} x {t}]")));
        }
        Ok(Self { values, label })
    }

    /// Single-channel series.
    pub fn univariate(values: Vec<f64>, label: usize) -> Result<Self> {
        let t = values.len();
        let arr = Array2::from_shape_vec((1, t), values).expect("1 x T shape");
        Self::new(arr, label)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.row(c)
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.mapv(f),
            label: self.label,
        }
    }
}

/// Archive-provided train/test splits of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        train: Vec<TimeSeries>,
        test: Vec<TimeSeries>,
        n_classes: usize,
    ) -> Result<Self> {
        let Some(first) = train.first().or(test.first()) else {
            return Err(Error::Empty("dataset has no series"));
        };
        let shape = first.values.dim();
        for s in train.iter().chain(&test) {
            if s.values.dim() != shape {
                return Err(Error::shape(
                    format!("{:?}", shape),
                    format!("{:?}", s.values.dim()),
                ));
            }
            if s.label >= n_classes {
                return Err(Error::Label {
                    label: s.label,
                    n_classes,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            train,
            test,
            n_classes,
        })
    }

    /// `(channels, length)` shared by every series.
    pub fn shape(&self) -> (usize, usize) {
        let s = self.train.first().or(self.test.first()).expect("nonempty");
        (s.channels(), s.len())
    }

    /// Reads `<train>` and `<test>` with a label mapping shared across both
    /// files, so that test labels agree with train labels.
    pub fn from_files(name: &str, train: &Path, test: &Path) -> Result<Self> {
        let train_text = fs::read_to_string(train).map_err(|e| Error::io(train, e))?;
        let test_text = fs::read_to_string(test).map_err(|e| Error::io(test, e))?;
        let mut labels = LabelMap::default();
        let train = parse_with_labels(&train_text, &mut labels)?;
        let test = parse_with_labels(&test_text, &mut labels)?;
        Dataset::new(name, train, test, labels.len())
    }

    /// Fit a normalizer on the training split, apply it to both splits and
    /// zero-fill missing values.
    pub fn prepare(&self) -> Result<(Dataset, Normalizer)> {
        let norm = fit_normalizer(&self.train)?;
        let d = impute_missing(&apply_normalizer(&norm, self));
        Ok((d, norm))
    }
}

/// Label remapping in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelMap {
    fn key(token: &str) -> String {
        match token.parse::<f64>() {
            Ok(v) => format!("{v}"),
            Err(_) => token.to_string(),
        }
    }

    pub fn get_or_insert(&mut self, token: &str) -> usize {
        let key = Self::key(token);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.names.len();
        self.names.push(token.to_string());
        self.index.insert(key, i);
        i
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Original label tokens, indexed by remapped class.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Parses a UCR-format text into univariate series with labels remapped to
/// contiguous indices in order of first appearance.
pub fn parse_ucr_tsv(text: &str) -> Result<Vec<TimeSeries>> {
    parse_with_labels(text, &mut LabelMap::default())
}

/// Like [`parse_ucr_tsv`], also returning the original label tokens.
pub fn parse_ucr_tsv_labeled(text: &str) -> Result<(Vec<TimeSeries>, LabelMap)> {
    let mut labels = LabelMap::default();
    let series = parse_with_labels(text, &mut labels)?;
    Ok((series, labels))
}

pub fn parse_with_labels(text: &str, labels: &mut LabelMap) -> Result<Vec<TimeSeries>> {
    let mut out = Vec::new();
    let mut width: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let delim = if line.contains('\t') { '\t' } else { ',' };
        let mut fields = line.split(delim);
        let label_tok = fields.next().unwrap_or("").trim();
        if label_tok.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "missing class label".into(),
            });
        }
        let values = fields
            .map(|f| parse_value(f.trim()))
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("ragged row: {} values, expected {w}", values.len()),
                })
            }
            _ => {}
        }
        let label = labels.get_or_insert(label_tok);
        let series = TimeSeries::univariate(values, label).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(series);
    }
    if out.is_empty() {
        return Err(Error::Empty("no series in input"));
    }
    Ok(out)
}

fn parse_value(field: &str) -> std::result::Result<f64, String> {
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("non-numeric value '{field}'")),
    }
}

/// Writes series back in the tab-separated convention. Labels are written as
/// the original tokens when `names` is given, otherwise as class indices.
/// Only univariate series can be represented; extra channels are written as
/// consecutive rows with the same label.
pub fn to_ucr_tsv(series: &[TimeSeries], names: Option<&[String]>) -> String {
    let mut out = String::new();
    for s in series {
        for row in s.values.rows() {
            match names {
                Some(n) => out.push_str(&n[s.label]),
                None => write!(out, "{}", s.label).unwrap(),
            }
            for v in row {
                if v.is_nan() {
                    out.push_str("\tNaN");
                } else {
                    write!(out, "\t{v}").unwrap();
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Global min/max over the training split, mapping it onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min_val: f64,
    pub max_val: f64,
}

impl Normalizer {
    pub fn new(min_val: f64, max_val: f64) -> Result<Self> {
        if !(max_val > min_val) || !min_val.is_finite() || !max_val.is_finite() {
            return Err(Error::DegenerateRange { value: min_val });
        }
        Ok(Self { min_val, max_val })
    }

    #[inline]
    pub fn apply_value(&self, x: f64) -> f64 {
        2.0 * (x - self.min_val) / (self.max_val - self.min_val) - 1.0
    }

    pub fn apply_series(&self, s: &TimeSeries) -> TimeSeries {
        // NaN propagates through the affine map unchanged.
        s.map_values(|x| self.apply_value(x))
    }
}

pub fn fit_normalizer(train: &[TimeSeries]) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let (lo, hi) = train
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return Err(Error::Empty("training split has no finite values"));
    }
    if hi <= lo {
        return Err(Error::DegenerateRange { value: lo });
    }
    Ok(Normalizer {
        min_val: lo,
        max_val: hi,
    })
}

pub fn apply_normalizer(n: &Normalizer, d: &Dataset) -> Dataset {
    Dataset {
        name: d.name.clone(),
        train: d.train.iter().map(|s| n.apply_series(s)).collect(),
        test: d.test.iter().map(|s| n.apply_series(s)).collect(),
        n_classes: d.n_classes,
    }
}

pub fn impute_series(s: &TimeSeries) -> TimeSeries {
    s.map_values(|x| if x.is_nan() { 0.0 } else { x })
}

/// Replaces every missing value with 0.0, the center of the normalized range.
pub fn impute_missing(d: &Dataset) -> Dataset {
    Dataset {
        name: d.name.clone(),
        train: d.train.iter().map(impute_series).collect(),
        test: d.test.iter().map(impute_series).collect(),
        n_classes: d.n_classes,
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    #[serde(default)]
    datasets: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    train: PathBuf,
    test: PathBuf,
}

/// Where to look for datasets by name.
#[derive(Debug, Clone, Default)]
pub struct DatasetSource {
    /// TOML manifest with `[datasets.<Name>] train = "..." test = "..."`
    /// entries; relative paths resolve against the manifest's directory.
    pub manifest: Option<PathBuf>,
    /// Archive root holding `<Name>/<Name>_TRAIN.tsv` and `<Name>_TEST.tsv`.
    pub data_root: Option<PathBuf>,
}

/// Name of the built-in sine-vs-square toy dataset.
pub const SYNTHETIC_SINE_SQUARE: &str = "synthetic:sine_square";

impl DatasetSource {
    pub fn resolve(&self, name: &str) -> Result<(PathBuf, PathBuf)> {
        let mut searched = Vec::new();
        if let Some(m) = &self.manifest {
            let text = fs::read_to_string(m).map_err(|e| Error::io(m, e))?;
            let parsed: Manifest = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", m.display())))?;
            if let Some(entry) = parsed.datasets.get(name) {
                let base = m.parent().unwrap_or(Path::new("."));
                return Ok((base.join(&entry.train), base.join(&entry.test)));
            }
            searched.push(m.display().to_string());
        }
        if let Some(root) = &self.data_root {
            for dir in [root.join(name), root.clone()] {
                let train = dir.join(format!("{name}_TRAIN.tsv"));
                let test = dir.join(format!("{name}_TEST.tsv"));
                if train.is_file() && test.is_file() {
                    return Ok((train, test));
                }
                searched.push(dir.display().to_string());
            }
        }
        Err(Error::UnknownDataset {
            name: name.to_string(),
            searched: if searched.is_empty() {
                "nowhere: no manifest or data root given".into()
            } else {
                searched.join(", ")
            },
        })
    }

    /// Loads a raw (unnormalized) dataset by name.
    pub fn load(&self, name: &str) -> Result<Dataset> {
        if name == SYNTHETIC_SINE_SQUARE {
            return sine_square(64, 64, 32, 0);
        }
        let (train, test) = self.resolve(name)?;
        Dataset::from_files(name, &train, &test)
    }
}

/// Two-class toy set: class 0 is a sine, class 1 a square wave with the same
/// random frequency/phase distribution. Labels alternate so both splits are
/// balanced.
pub fn sine_square(n_train: usize, n_test: usize, length: usize, seed: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed);
    let mut make = |n: usize| -> Result<Vec<TimeSeries>> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let cycles = rng.uniform(1.0, 3.0);
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                let vals = (0..length)
                    .map(|t| {
                        let s = (std::f64::consts::TAU * cycles * t as f64 / length as f64 + phase)
                            .sin();
                        let base = if label == 0 { s } else { s.signum() };
                        0.8 * base + rng.normal(0.0, 0.05)
                    })
                    .collect();
                TimeSeries::univariate(vals, label)
            })
            .collect()
    };
    let train = make(n_train)?;
    let test = make(n_test)?;
    Dataset::new(SYNTHETIC_SINE_SQUARE, train, test, 2)
}
