//! SSD telemetry records, CSV I/O, the synthetic generator, feature
//! standardisation, sequence encoding and stratified splitting.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const NUM_FEATURES: usize = 8;
pub const NUM_CLASSES: usize = 3;

/// CSV column names, features first in canonical order, then the label.
pub const CSV_HEADER: [&str; NUM_FEATURES + 1] = [
    "usage_hours",
    "avg_erase_count",
    "total_write_tb",
    "bad_blocks",
    "remaining_life_pct",
    "temperature_c",
    "rw_error_rate",
    "power_on_count",
    "health_status",
];

pub const LABEL_COLUMN: &str = "health_status";

/// Three-way device condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HealthState {
    Normal,
    Warning,
    Failure,
}

impl HealthState {
    pub const ALL: [HealthState; NUM_CLASSES] = [HealthState::Normal, HealthState::Warning, HealthState::Failure];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HealthState::Normal => "Normal",
            HealthState::Warning => "Warning",
            HealthState::Failure => "Failure",
        }
    }
}

impl fmt::Display for HealthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HealthState {
    type Err = String;

    /// Accepts the canonical names plus the spellings seen in field exports
    /// ("normalcy", "early warning", "malfunction"), case-insensitively and
    /// ignoring a trailing period.
    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().trim_end_matches('.').trim().to_ascii_lowercase();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        match norm.as_str() {
            "normal" | "normalcy" => Ok(HealthState::Normal),
            "warning" | "early warning" => Ok(HealthState::Warning),
            "failure" | "malfunction" => Ok(HealthState::Failure),
            _ => Err(format!("unknown health status {s:?}")),
        }
    }
}

/// One device snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdRecord {
    pub usage_hours: f64,
    pub avg_erase_count: f64,
    pub total_write_tb: f64,
    pub bad_blocks: u32,
    pub remaining_life_pct: f64,
    pub temperature_c: f64,
    pub rw_error_rate: f64,
    pub power_on_count: u32,
    pub label: HealthState,
}

impl SsdRecord {
    /// Feature values in canonical column order.
    pub fn features(&self) -> [f64; NUM_FEATURES] {
        [
            self.usage_hours,
            self.avg_erase_count,
            self.total_write_tb,
            self.bad_blocks as f64,
            self.remaining_life_pct,
            self.temperature_c,
            self.rw_error_rate,
            self.power_on_count as f64,
        ]
    }

    /// Checks the field invariants, naming the first violated column.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let nonneg = [
            ("usage_hours", self.usage_hours),
            ("avg_erase_count", self.avg_erase_count),
            ("total_write_tb", self.total_write_tb),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err((name, format!("expected a finite non-negative value, got {v}")));
            }
        }
        if !self.temperature_c.is_finite() {
            return Err(("temperature_c", "temperature must be finite".into()));
        }
        if !(0.0..=100.0).contains(&self.remaining_life_pct) {
            return Err((
                "remaining_life_pct",
                format!("{} is outside [0, 100]", self.remaining_life_pct),
            ));
        }
        if !(0.0..=1.0).contains(&self.rw_error_rate) {
            return Err(("rw_error_rate", format!("{} is outside [0, 1]", self.rw_error_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Loaded(PathBuf),
    Generated { seed: u64 },
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SsdRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// A parsed CSV row whose label column may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub features: [f64; NUM_FEATURES],
    pub label: Option<HealthState>,
}

fn parse_error(line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Parses rows from any reader. The header must name every feature column;
/// the label column is mandatory only when `require_label` is set.
fn parse_rows<R: Read>(reader: R, require_label: bool) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(1, "<header>", e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let mut columns = [0usize; NUM_FEATURES];
    for (slot, name) in columns.iter_mut().zip(&CSV_HEADER[..NUM_FEATURES]) {
        *slot = find(name).ok_or_else(|| parse_error(1, name, "missing column"))?;
    }
    let label_col = find(LABEL_COLUMN);
    if require_label && label_col.is_none() {
        return Err(parse_error(1, LABEL_COLUMN, "missing column"));
    }

    let mut rows = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, "<row>", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<&str> {
            rec.get(idx).ok_or_else(|| parse_error(line, name, "missing field"))
        };

        let mut features = [0.0; NUM_FEATURES];
        for (i, (&col, name)) in columns.iter().zip(&CSV_HEADER).enumerate() {
            let raw = field(col, name)?;
            features[i] = if i == 3 || i == 7 {
                raw.parse::<u32>()
                    .map_err(|_| parse_error(line, name, format!("expected a non-negative integer, got {raw:?}")))?
                    as f64
            } else {
                let v = raw
                    .parse::<f64>()
                    .map_err(|_| parse_error(line, name, format!("expected a number, got {raw:?}")))?;
                if !v.is_finite() {
                    return Err(parse_error(line, name, format!("non-finite value {raw:?}")));
                }
                v
            };
        }
        let label = match label_col {
            Some(idx) => {
                let raw = field(idx, LABEL_COLUMN)?;
                if raw.is_empty() && !require_label {
                    None
                } else {
                    Some(raw.parse::<HealthState>().map_err(|m| parse_error(line, LABEL_COLUMN, m))?)
                }
            }
            None => None,
        };
        let probe = record_from_features(&features, label.unwrap_or(HealthState::Normal));
        probe
            .validate()
            .map_err(|(column, message)| parse_error(line, column, message))?;
        rows.push(FeatureRow { features, label });
    }
    Ok(rows)
}

fn record_from_features(f: &[f64; NUM_FEATURES], label: HealthState) -> SsdRecord {
    SsdRecord {
        usage_hours: f[0],
        avg_erase_count: f[1],
        total_write_tb: f[2],
        bad_blocks: f[3] as u32,
        remaining_life_pct: f[4],
        temperature_c: f[5],
        rw_error_rate: f[6],
        power_on_count: f[7] as u32,
        label,
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads a labelled dataset.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SsdRecord>> {
    let rows = parse_rows(reader, true)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows
        .into_iter()
        .map(|r| record_from_features(&r.features, r.label.expect("label required")))
        .collect())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let records = read_csv(open(path)?)?;
    Ok(Dataset {
        records,
        provenance: Provenance::Loaded(path.to_path_buf()),
    })
}

/// Reads feature rows for inference; the label column is optional and an
/// empty body is not an error.
pub fn load_feature_rows(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    parse_rows(open(path)?, false)
}

pub fn write_csv<W: Write>(records: &[SsdRecord], writer: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in records {
        w.write_record([
            r.usage_hours.to_string(),
            r.avg_erase_count.to_string(),
            r.total_write_tb.to_string(),
            r.bad_blocks.to_string(),
            r.remaining_life_pct.to_string(),
            r.temperature_c.to_string(),
            r.rw_error_rate.to_string(),
            r.power_on_count.to_string(),
            r.label.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(&ds.records, std::io::BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Standard deviation of the Gaussian term in the latent health score.
pub const LATENT_NOISE_SIGMA: f64 = 0.005;
/// Score thresholds for the default priors and label noise.
pub const WARNING_THRESHOLD: f64 = 0.5676;
pub const FAILURE_THRESHOLD: f64 = 0.6513;
pub const DEFAULT_PRIORS: [f64; NUM_CLASSES] = [0.65, 0.15, 0.20];
pub const DEFAULT_LABEL_NOISE: f64 = 0.05;

/// Seed of the pilot simulation that places thresholds for non-default priors.
const CALIBRATION_SEED: u64 = 0x5344_4341_4c49_4252;
const CALIBRATION_DRAWS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    /// Target frequencies of the emitted (post-noise) labels.
    pub priors: [f64; NUM_CLASSES],
    /// Probability that a label is replaced by one of the other two classes.
    pub label_noise: f64,
    pub sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 593,
            seed: 42,
            priors: DEFAULT_PRIORS,
            label_noise: DEFAULT_LABEL_NOISE,
            sigma: LATENT_NOISE_SIGMA,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("record count must be at least 1".into()));
        }
        if self.priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config(format!("priors must be non-negative, got {:?}", self.priors)));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("priors must sum to 1, got {sum}")));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label noise must lie in [0, 0.5), got {}",
                self.label_noise
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        self.clean_priors().map(|_| ())
    }

    /// Label frequencies before noise, chosen so that after resampling a
    /// fraction `label_noise` uniformly among the other two classes the
    /// emitted frequencies equal `priors`.
    pub fn clean_priors(&self) -> Result<[f64; NUM_CLASSES]> {
        let p = self.label_noise;
        let mut q = [0.0; NUM_CLASSES];
        for (qc, &pc) in q.iter_mut().zip(&self.priors) {
            *qc = (pc - p / 2.0) / (1.0 - 1.5 * p);
            if *qc < -1e-12 {
                return Err(Error::Config(format!(
                    "prior {pc} is below label_noise/2 = {}; unattainable",
                    p / 2.0
                )));
            }
            *qc = qc.max(0.0);
        }
        Ok(q)
    }

    /// `(warning, failure)` score thresholds for this configuration.
    pub fn thresholds(&self) -> Result<(f64, f64)> {
        let defaults = GeneratorConfig::default();
        if self.priors == defaults.priors && self.label_noise == defaults.label_noise && self.sigma == defaults.sigma {
            return Ok((WARNING_THRESHOLD, FAILURE_THRESHOLD));
        }
        calibrate_thresholds(&self.clean_priors()?, self.sigma)
    }
}

/// The noiseless part of a record's snapshot: everything except the latent
/// noise term and the label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    pub usage_hours: f64,
    pub avg_erase_count: f64,
    pub total_write_tb: f64,
    pub bad_blocks: u32,
    pub remaining_life_pct: f64,
    pub temperature_c: f64,
    pub rw_error_rate: f64,
    pub power_on_count: u32,
}

impl Telemetry {
    /// Deterministic part of the latent health score; higher is worse.
    pub fn base_score(&self) -> f64 {
        0.45 * (1.0 - self.remaining_life_pct / 100.0)
            + 0.20 * if self.temperature_c > 55.0 { 1.0 } else { 0.0 }
            + 0.20 * (self.rw_error_rate / 0.26)
            + 0.15 * (self.bad_blocks as f64 / 40.0).min(1.0)
    }

    pub fn wear(&self) -> f64 {
        wear_index(self.avg_erase_count, self.total_write_tb)
    }

    fn into_record(self, label: HealthState) -> SsdRecord {
        SsdRecord {
            usage_hours: self.usage_hours,
            avg_erase_count: self.avg_erase_count,
            total_write_tb: self.total_write_tb,
            bad_blocks: self.bad_blocks,
            remaining_life_pct: self.remaining_life_pct,
            temperature_c: self.temperature_c,
            rw_error_rate: self.rw_error_rate,
            power_on_count: self.power_on_count,
            label,
        }
    }
}

/// Combined wear in `[0, 1]` from erase cycles and write volume.
pub fn wear_index(avg_erase_count: f64, total_write_tb: f64) -> f64 {
    0.5 * (avg_erase_count - 8.0) / 9.0 + 0.5 * (total_write_tb - 20.0) / 160.0
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

/// Exact CDF of the wear mix: 0.5·U{0..9}/9 + 0.5·U(0,1).
fn wear_cdf(w: f64) -> f64 {
    (0..10)
        .map(|a| ((w - a as f64 / 18.0) * 2.0).clamp(0.0, 1.0))
        .sum::<f64>()
        / 10.0
}

/// Lower and upper terciles of the wear distribution.
pub fn wear_terciles() -> (f64, f64) {
    let solve = |target: f64| {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if wear_cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (solve(1.0 / 3.0), solve(2.0 / 3.0))
}

/// Draws one device's telemetry.
pub fn sample_telemetry<R: Rng>(rng: &mut R, terciles: (f64, f64)) -> Telemetry {
    let cool = Normal::new(43.0, 4.0).expect("valid normal");
    let hot = Normal::new(62.0, 5.0).expect("valid normal");

    let usage_hours = round_to(rng.random_range(5000.0..30000.0), 0);
    let avg_erase_count = rng.random_range(8u32..=17) as f64;
    let total_write_tb = round_to(rng.random_range(20.0..180.0), 2);
    let temp: f64 = if rng.random::<f64>() < 0.7 {
        cool.sample(rng)
    } else {
        hot.sample(rng)
    };
    let temperature_c = round_to(temp.clamp(30.0, 75.0), 1);
    let rw_error_rate = round_to(rng.random_range(0.0..0.26), 2);
    let power_on_count = rng.random_range(200u32..=4800);

    let wear = wear_index(avg_erase_count, total_write_tb);
    let (lo, hi): (f64, f64) = if wear >= terciles.1 {
        (0.0, 33.0)
    } else if wear >= terciles.0 {
        (33.0, 67.0)
    } else {
        (67.0, 100.0)
    };
    let remaining_life_pct = round_to(rng.random_range(lo..hi), 1).clamp(lo, hi);

    let rate = 2.0 + 40.0 * (1.0 - remaining_life_pct / 100.0);
    let bad_blocks = Poisson::new(rate).expect("positive rate").sample(rng) as u32;

    Telemetry {
        usage_hours,
        avg_erase_count,
        total_write_tb,
        bad_blocks,
        remaining_life_pct,
        temperature_c,
        rw_error_rate,
        power_on_count,
    }
}

fn label_for(score: f64, thresholds: (f64, f64)) -> HealthState {
    if score < thresholds.0 {
        HealthState::Normal
    } else if score < thresholds.1 {
        HealthState::Warning
    } else {
        HealthState::Failure
    }
}

/// Places the two score thresholds at the quantiles of a pilot simulation
/// that reproduce the requested clean priors.
pub fn calibrate_thresholds(clean_priors: &[f64; NUM_CLASSES], sigma: f64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
    let terciles = wear_terciles();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("sigma: {e}")))?;
    let mut scores: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| sample_telemetry(&mut rng, terciles).base_score() + noise.sample(&mut rng))
        .collect();
    scores.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let idx = ((q * CALIBRATION_DRAWS as f64).round() as usize).min(CALIBRATION_DRAWS - 1);
        match idx {
            0 => f64::NEG_INFINITY,
            i => 0.5 * (scores[i - 1] + scores[i]),
        }
    };
    let w = if clean_priors[0] >= 1.0 { f64::INFINITY } else { quantile(clean_priors[0]) };
    let f = if clean_priors[0] + clean_priors[1] >= 1.0 {
        f64::INFINITY
    } else {
        quantile(clean_priors[0] + clean_priors[1])
    };
    Ok((w, f.max(w)))
}

/// Generates `cfg.n` labelled records from the documented generative rule.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let thresholds = cfg.thresholds()?;
    let terciles = wear_terciles();
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::Config(format!("sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut records = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let t = sample_telemetry(&mut rng, terciles);
        let score = t.base_score() + noise.sample(&mut rng);
        let mut label = label_for(score, thresholds);
        let flip = rng.random::<f64>();
        let pick = rng.random_range(0..2usize);
        if flip < cfg.label_noise {
            let others: Vec<HealthState> = HealthState::ALL.into_iter().filter(|&s| s != label).collect();
            label = others[pick];
        }
        records.push(t.into_record(label));
    }
    Ok(Dataset {
        records,
        provenance: Provenance::Generated { seed: cfg.seed },
    })
}

// ---------------------------------------------------------------------------
// Standardisation, encoding, splitting

/// Smallest standard deviation used when dividing; flatter columns map to 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score statistics, fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(records: &[SsdRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = records.len() as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for r in records {
            for (m, v) in mean.iter_mut().zip(r.features()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; NUM_FEATURES];
        for r in records {
            for ((s, v), m) in var.iter_mut().zip(r.features()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, features: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for (i, o) in out.iter_mut().enumerate() {
            if self.std[i] > STD_FLOOR {
                *o = (features[i] - self.mean[i]) / self.std[i];
            }
        }
        out
    }

    pub fn apply(&self, record: &SsdRecord) -> [f64; NUM_FEATURES] {
        self.transform(&record.features())
    }
}

pub fn fit_standardizer(train: &Dataset) -> Result<Standardizer> {
    Standardizer::fit(&train.records)
}

/// How a standardised snapshot becomes a model input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// Each feature is one time step: `8 × 1`.
    Features,
    /// Per-device histories (`T × 8`); the generator emits snapshots only.
    Timeseries,
}

pub fn encode_sequence(std_features: &[f64; NUM_FEATURES], mode: EncodingMode) -> Result<Matrix> {
    match mode {
        EncodingMode::Features => Matrix::from_vec(NUM_FEATURES, 1, std_features.to_vec()),
        EncodingMode::Timeseries => Err(Error::Config(
            "timeseries encoding needs per-device histories, which this dataset does not carry".into(),
        )),
    }
}

/// Per-class shuffled split; each class contributes
/// `round(count × test_fraction)` records to the test side. Both sides keep
/// the input order.
pub fn split_stratified(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, r) in ds.records.iter().enumerate() {
        by_class[r.label.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ds.len()];
    for (class, idx) in HealthState::ALL.iter().zip(by_class.iter_mut()) {
        if idx.len() < 2 {
            return Err(Error::Stratification {
                class: class.to_string(),
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        for &i in &idx[..n_test] {
            in_test[i] = true;
        }
    }
    let pick = |want: bool| Dataset {
        records: ds
            .records
            .iter()
            .zip(&in_test)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect(),
        provenance: Provenance::Derived,
    };
    Ok((pick(false), pick(true)))
}
