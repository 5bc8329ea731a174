//! Trial ingestion and the canonical on-disk dataset format.
//!
//! A dataset is a directory with a `manifest.toml` and one two-column CSV
//! per trial (`time_s,voltage_V`, header required). The manifest carries
//! everything the files do not: the sample rate, the column mapping for
//! non-canonical files, stimulus timing, and per-gas dilution metadata.
//! Loading never repairs data; any inconsistency fails with the offending
//! file and row.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{mix_seed, synth_trapezoid, StimulusWindow, TimeSeries, TrapezoidSpec};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_SCHEMA: &str = "enose-trials-v1";

/// Number of concentration levels in the recording protocol.
pub const LEVELS: u8 = 5;

/// Required trace coverage around stimulus onset, in seconds.
const REQUIRED_PRE: f64 = 2.0;
const REQUIRED_POST: f64 = 5.0;

/// Acceptable deviation of successive time stamps from the declared
/// sample interval.
const JITTER_TOLERANCE: f64 = 0.01;

/// The four odorants of the recording protocol.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Gas {
    #[serde(rename = "EB")]
    Eb,
    #[serde(rename = "Eu")]
    Eu,
    #[serde(rename = "IA")]
    Ia,
    #[serde(rename = "2H")]
    TwoH,
}

impl Gas {
    pub const ALL: [Gas; 4] = [Gas::Eb, Gas::Eu, Gas::Ia, Gas::TwoH];

    pub fn name(&self) -> &'static str {
        match self {
            Gas::Eb => "EB",
            Gas::Eu => "Eu",
            Gas::Ia => "IA",
            Gas::TwoH => "2H",
        }
    }
}

impl fmt::Display for Gas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gas {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "EB" => Ok(Gas::Eb),
            "Eu" => Ok(Gas::Eu),
            "IA" => Ok(Gas::Ia),
            "2H" => Ok(Gas::TwoH),
            other => Err(Error::invalid(format!("unknown gas `{other}`"))),
        }
    }
}

/// Identity of one recording within the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrialKey {
    pub gas: Gas,
    pub level: u8,
    pub trial: u32,
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/c{}/t{}", self.gas, self.level, self.trial)
    }
}

/// One recording plus its metadata, time axis re-referenced so the
/// stimulus onset is at t = 0.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub gas: Gas,
    pub level: u8,
    pub trial: u32,
    pub series: TimeSeries,
    pub stimulus: StimulusWindow,
    pub load_resistance: f64,
}

impl TrialRecord {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            gas: self.gas,
            level: self.level,
            trial: self.trial,
        }
    }
}

/// How to locate time and voltage in trial files. Column fields accept a
/// header name or a 0-based index; an empty time column means the file
/// has no time axis and it is synthesized from the sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: String,
    pub voltage: String,
    /// Multiplier converting raw time values to seconds.
    pub time_scale: f64,
    /// Multiplier converting raw voltage values to volts.
    pub voltage_scale: f64,
    /// Stimulus onset position on the raw time axis, in seconds.
    pub onset_time_s: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: "time_s".to_string(),
            voltage: "voltage_V".to_string(),
            time_scale: 1.0,
            voltage_scale: 1.0,
            onset_time_s: 0.0,
        }
    }
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub file: String,
    pub gas: Gas,
    pub level: u8,
    pub trial: u32,
    pub sample_rate_hz: f64,
    /// Per-trial override of the column map's onset position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_time_s: Option<f64>,
}

impl ManifestTrial {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            gas: self.gas,
            level: self.level,
            trial: self.trial,
        }
    }
}

/// Dataset description: trial list plus global recording metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub load_resistance_ohms: f64,
    /// Stimulus duration after onset, seconds (window is `[0, duration]`).
    pub stimulus_duration_s: f64,
    /// Per-gas dilution ratio metadata, informational only.
    #[serde(default)]
    pub dilution: BTreeMap<String, String>,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub trials: Vec<ManifestTrial>,
}

impl DatasetManifest {
    pub fn stimulus(&self) -> Result<StimulusWindow> {
        StimulusWindow::new(0.0, self.stimulus_duration_s)
    }

    fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Manifest(format!(
                "unsupported schema `{}` (expected `{MANIFEST_SCHEMA}`)",
                self.schema
            )));
        }
        if !(self.stimulus_duration_s > 0.0) {
            return Err(Error::Manifest("stimulus_duration_s must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.trials {
            if t.level < 1 || t.level > LEVELS {
                return Err(Error::Manifest(format!(
                    "trial {} has level {} outside 1..={LEVELS}",
                    t.file, t.level
                )));
            }
            if !(t.sample_rate_hz > 0.0) || !t.sample_rate_hz.is_finite() {
                return Err(Error::Manifest(format!(
                    "trial {} has invalid sample_rate_hz",
                    t.file
                )));
            }
            if !seen.insert(t.key()) {
                return Err(Error::Manifest(format!(
                    "duplicate trial key {}",
                    t.key()
                )));
            }
        }
        Ok(())
    }
}

/// Parse and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ingestion(path, format!("cannot read manifest: {e}")))?;
    let manifest: DatasetManifest = toml::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Resolve a column spec (name or 0-based index) against a header row.
fn resolve_column(headers: &csv::StringRecord, spec: &str, path: &Path) -> Result<usize> {
    if let Ok(idx) = spec.parse::<usize>() {
        if idx < headers.len() {
            return Ok(idx);
        }
        return Err(Error::ingestion(
            path,
            format!("column index {idx} out of range ({} columns)", headers.len()),
        ));
    }
    headers
        .iter()
        .position(|h| h == spec)
        .ok_or_else(|| Error::ingestion(path, format!("column `{spec}` not found in header")))
}

/// Load one trial file into a validated, onset-referenced record.
pub fn load_trial(
    manifest: &DatasetManifest,
    base_dir: &Path,
    entry: &ManifestTrial,
) -> Result<TrialRecord> {
    let path = base_dir.join(&entry.file);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| Error::ingestion(&path, format!("cannot open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::ingestion(&path, format!("cannot read header: {e}")))?
        .clone();

    let columns = &manifest.columns;
    let time_col = if columns.time.is_empty() {
        None
    } else {
        Some(resolve_column(&headers, &columns.time, &path)?)
    };
    let voltage_col = resolve_column(&headers, &columns.voltage, &path)?;

    let mut times = Vec::new();
    let mut volts = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::ingestion(&path, format!("data row {}: {e}", row + 1)))?;
        let parse = |col: usize, what: &str| -> Result<f64> {
            record
                .get(col)
                .ok_or_else(|| {
                    Error::ingestion(&path, format!("data row {}: missing {what}", row + 1))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| {
                    Error::ingestion(&path, format!("data row {}: bad {what}: {e}", row + 1))
                })
        };
        if let Some(tc) = time_col {
            times.push(parse(tc, "time")? * columns.time_scale);
        }
        let v = parse(voltage_col, "voltage")? * columns.voltage_scale;
        if !v.is_finite() {
            return Err(Error::ingestion(
                &path,
                format!("non-finite voltage at data row {}", row + 1),
            ));
        }
        volts.push(v);
    }
    if volts.len() < 2 {
        return Err(Error::ingestion(&path, "trial needs at least two samples"));
    }

    let dt = 1.0 / entry.sample_rate_hz;
    let onset = entry.onset_time_s.unwrap_or(columns.onset_time_s);
    let t0 = match &times[..] {
        [] => -onset,
        [first, ..] => {
            for (i, pair) in times.windows(2).enumerate() {
                let step = pair[1] - pair[0];
                if (step - dt).abs() > JITTER_TOLERANCE * dt {
                    return Err(Error::ingestion(
                        &path,
                        format!(
                            "sampling jitter beyond {}% at data row {}: step {step} s vs declared {dt} s",
                            JITTER_TOLERANCE * 100.0,
                            i + 2
                        ),
                    ));
                }
            }
            first - onset
        }
    };

    let series = TimeSeries::new(t0, dt, volts)
        .map_err(|e| Error::ingestion(&path, format!("invalid series: {e}")))?;
    let stimulus = manifest.stimulus()?;

    // Protocol coverage: at least [-2 s, +5 s] around onset.
    let slack = dt / 2.0;
    if series.t0() > stimulus.onset - REQUIRED_PRE + slack
        || series.end_time() < stimulus.onset + REQUIRED_POST - slack
    {
        return Err(Error::ingestion(
            &path,
            format!(
                "trace [{} s, {} s] does not cover the protocol window [{} s, {} s]",
                series.t0(),
                series.end_time(),
                stimulus.onset - REQUIRED_PRE,
                stimulus.onset + REQUIRED_POST
            ),
        ));
    }

    Ok(TrialRecord {
        gas: entry.gas,
        level: entry.level,
        trial: entry.trial,
        series,
        stimulus,
        load_resistance: manifest.load_resistance_ohms,
    })
}

/// Load every trial in the manifest, in manifest order.
pub fn load_all(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<TrialRecord>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        manifest
            .trials
            .par_iter()
            .map(|entry| load_trial(manifest, base_dir, entry))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        manifest
            .trials
            .iter()
            .map(|entry| load_trial(manifest, base_dir, entry))
            .collect()
    }
}

/// Synthetic dataset layout: the full protocol grid of trapezoid
/// responses with per-gas amplitude ranges and seeded noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub trials_per_cell: u32,
    pub sample_rate_hz: f64,
    pub noise_sigma: f64,
    pub base: f64,
    pub lead: f64,
    pub rise: f64,
    pub hold: f64,
    pub fall: f64,
    pub tail: f64,
    /// Peak amplitude at level 1 and level 5, per gas; levels interpolate
    /// linearly between them.
    pub amplitude_ranges: [(Gas, f64, f64); 4],
    pub load_resistance_ohms: f64,
    pub stimulus_duration_s: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            trials_per_cell: 20,
            sample_rate_hz: 1000.0,
            noise_sigma: 5e-4,
            base: 0.8,
            lead: 2.0,
            rise: 1.0,
            hold: 0.5,
            fall: 3.0,
            tail: 0.6,
            amplitude_ranges: [
                (Gas::Eb, 0.20, 1.00),
                (Gas::Eu, 0.30, 1.20),
                (Gas::Ia, 0.15, 0.80),
                (Gas::TwoH, 0.10, 0.60),
            ],
            load_resistance_ohms: 27_000.0,
            stimulus_duration_s: 1.0,
        }
    }
}

impl SyntheticSpec {
    /// Peak amplitude for a (gas, level) cell.
    pub fn amplitude(&self, gas: Gas, level: u8) -> Result<f64> {
        if level < 1 || level > LEVELS {
            return Err(Error::invalid(format!("level {level} outside 1..={LEVELS}")));
        }
        let (_, lo, hi) = self
            .amplitude_ranges
            .iter()
            .find(|(g, _, _)| *g == gas)
            .ok_or_else(|| Error::invalid(format!("no amplitude range for gas {gas}")))?;
        let frac = (level - 1) as f64 / (LEVELS - 1) as f64;
        Ok(lo + frac * (hi - lo))
    }

    fn trapezoid(&self, amplitude: f64) -> TrapezoidSpec {
        TrapezoidSpec {
            base: self.base,
            amplitude,
            lead: self.lead,
            rise: self.rise,
            hold: self.hold,
            fall: self.fall,
            tail: self.tail,
            dt_sample: 1.0 / self.sample_rate_hz,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Per-trial seed, mixed from the dataset seed and the trial identity.
fn trial_seed(seed: u64, gas_idx: u64, level: u8, trial: u32) -> u64 {
    mix_seed(mix_seed(mix_seed(seed, gas_idx), level as u64), trial as u64)
}

/// Generate the trace for one synthetic grid cell. This is exactly what
/// [`write_synthetic_dataset`] stores on disk.
pub fn synth_trial(spec: &SyntheticSpec, seed: u64, gas: Gas, level: u8, trial: u32) -> Result<TimeSeries> {
    let amplitude = spec.amplitude(gas, level)?;
    let gas_idx = Gas::ALL.iter().position(|g| *g == gas).unwrap() as u64;
    synth_trapezoid(
        &spec.trapezoid(amplitude),
        trial_seed(seed, gas_idx, level, trial),
    )
}

/// Write a synthetic dataset (trial CSVs plus manifest) under `dir`.
/// Deterministic: the same spec and seed produce byte-identical files.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(spec.sample_rate_hz > 0.0) || !spec.sample_rate_hz.is_finite() {
        return Err(Error::invalid("sample_rate_hz must be positive"));
    }
    if spec.trials_per_cell == 0 {
        return Err(Error::invalid("trials_per_cell must be at least 1"));
    }
    fs::create_dir_all(dir)?;

    let mut dilution = BTreeMap::new();
    dilution.insert("EB".to_string(), "1:5".to_string());
    dilution.insert("Eu".to_string(), "1:5".to_string());
    dilution.insert("IA".to_string(), "1:5".to_string());
    dilution.insert("2H".to_string(), "1:50".to_string());

    let mut trials = Vec::new();
    for gas in Gas::ALL {
        for level in 1..=LEVELS {
            let cell_dir = dir.join(gas.name()).join(format!("c{level}"));
            fs::create_dir_all(&cell_dir)?;
            for trial in 0..spec.trials_per_cell {
                let series = synth_trial(spec, seed, gas, level, trial)?;
                let rel = format!("{}/c{}/t{:03}.csv", gas.name(), level, trial);
                write_trial_csv(&dir.join(&rel), &series)?;
                trials.push(ManifestTrial {
                    file: rel,
                    gas,
                    level,
                    trial,
                    sample_rate_hz: spec.sample_rate_hz,
                    onset_time_s: None,
                });
            }
        }
    }

    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        load_resistance_ohms: spec.load_resistance_ohms,
        stimulus_duration_s: spec.stimulus_duration_s,
        dilution,
        columns: ColumnMap::default(),
        trials,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Manifest(format!("serialize manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Write one trial as canonical two-column CSV. Floats use the shortest
/// round-trip representation, so reading recovers them bit-exactly.
pub fn write_trial_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "time_s,voltage_V")?;
    for (i, v) in series.values().iter().enumerate() {
        writeln!(w, "{},{}", series.time_at(i), v)?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience: load manifest and all trials from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrialRecord>)> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let trials = load_all(&manifest, dir)?;
    Ok((manifest, trials))
}
