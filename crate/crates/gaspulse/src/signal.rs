//! Uniformly sampled voltage traces, window statistics, and seeded
//! synthetic stimulus generators.
//!
//! All values here are immutable after construction, so they can be shared
//! freely across parallel workers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance (in fractional sample indices) below which a query time is
/// snapped onto the nearest sample node, so interpolation is exact there.
const NODE_SNAP: f64 = 1e-9;

/// A uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Build a series from a start time, sample interval, and samples.
    /// Rejects non-positive `dt`, non-finite entries, and empty traces.
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::invalid("series start time must be finite"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("sample interval must be positive and finite"));
        }
        if values.is_empty() {
            return Err(Error::invalid("series must contain at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { t0, dt, values })
    }

    /// Sample the closure at `t0 + i*dt` for `n` points.
    pub fn from_fn(t0: f64, dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..n).map(|i| f(t0 + i as f64 * dt)).collect();
        Self::new(t0, dt, values)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty traces
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Time of sample `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// `(len - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.time_at(self.values.len() - 1)
    }

    /// Fractional sample index for `t`, or an out-of-domain error.
    fn index_of(&self, t: f64) -> Result<f64> {
        let x = (t - self.t0) / self.dt;
        let max = (self.values.len() - 1) as f64;
        if !x.is_finite() || x < -NODE_SNAP || x > max + NODE_SNAP {
            return Err(Error::OutOfDomain {
                t,
                start: self.t0,
                end: self.end_time(),
            });
        }
        Ok(x.clamp(0.0, max))
    }

    /// Linearly interpolated value at `t`. Exact at sample instants.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.value_at_index(self.index_of(t)?))
    }

    /// Like [`value_at`](Self::value_at) but clamps `t` into the domain.
    /// Used by solvers whose grid endpoints may overshoot by rounding.
    pub(crate) fn value_at_clamped(&self, t: f64) -> f64 {
        let max = (self.values.len() - 1) as f64;
        let x = ((t - self.t0) / self.dt).clamp(0.0, max);
        self.value_at_index(x)
    }

    fn value_at_index(&self, x: f64) -> f64 {
        let nearest = x.round();
        if (x - nearest).abs() <= NODE_SNAP {
            return self.values[nearest as usize];
        }
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Derivative of the piecewise-linear interpolant at `t`.
    /// At sample nodes the right-hand segment's slope is used.
    pub fn slope_at(&self, t: f64) -> Result<f64> {
        let x = self.index_of(t)?;
        Ok(self.slope_at_index(x))
    }

    pub(crate) fn slope_at_clamped(&self, t: f64) -> f64 {
        let max = (self.values.len() - 1) as f64;
        let x = ((t - self.t0) / self.dt).clamp(0.0, max);
        self.slope_at_index(x)
    }

    fn slope_at_index(&self, x: f64) -> f64 {
        if self.values.len() < 2 {
            return 0.0;
        }
        let nearest = x.round();
        let i = if (x - nearest).abs() <= NODE_SNAP {
            nearest as usize
        } else {
            x.floor() as usize
        }
        .min(self.values.len() - 2);
        (self.values[i + 1] - self.values[i]) / self.dt
    }

    /// Element-wise absolute value, on the same time grid.
    pub fn magnitude(&self) -> TimeSeries {
        TimeSeries {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    /// Same samples shifted by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> TimeSeries {
        TimeSeries {
            t0: self.t0 + offset,
            dt: self.dt,
            values: self.values.clone(),
        }
    }
}

/// Closed time interval used for window statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid("window requires finite start < end"));
        }
        Ok(Self { start, end })
    }
}

/// Interval during which the stimulus is delivered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusWindow {
    pub onset: f64,
    pub offset: f64,
}

impl StimulusWindow {
    pub fn new(onset: f64, offset: f64) -> Result<Self> {
        if !(onset < offset) || !onset.is_finite() || !offset.is_finite() {
            return Err(Error::invalid("stimulus requires finite onset < offset"));
        }
        Ok(Self { onset, offset })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

impl Default for StimulusWindow {
    /// The recording protocol's 1 s release starting at t = 0.
    fn default() -> Self {
        Self {
            onset: 0.0,
            offset: 1.0,
        }
    }
}

/// Mean and population standard deviation over a pre-stimulus window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean: f64,
    pub sigma: f64,
    pub window: TimeWindow,
}

/// Arithmetic mean and population standard deviation of the samples whose
/// time falls inside `window`. The window must lie inside the series
/// domain and contain at least one sample.
pub fn baseline_stats(series: &TimeSeries, window: TimeWindow) -> Result<BaselineStats> {
    if window.start < series.t0() - NODE_SNAP * series.dt()
        || window.end > series.end_time() + NODE_SNAP * series.dt()
    {
        return Err(Error::invalid("baseline window outside series domain"));
    }
    let dt = series.dt();
    let lo = ((window.start - series.t0()) / dt - NODE_SNAP).ceil().max(0.0) as usize;
    let hi_f = ((window.end - series.t0()) / dt + NODE_SNAP).floor();
    if hi_f < lo as f64 {
        return Err(Error::invalid("baseline window contains no samples"));
    }
    let hi = (hi_f as usize).min(series.len() - 1);
    let slice = &series.values()[lo..=hi];
    let n = slice.len() as f64;
    let mean = slice.iter().sum::<f64>() / n;
    let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(BaselineStats {
        mean,
        sigma: var.sqrt(),
        window,
    })
}

/// Shape of a synthetic sensor response: flat lead-in, linear rise during
/// the stimulus, plateau, linear recovery, flat tail. Additive Gaussian
/// noise with a per-trace seed when `noise_sigma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidSpec {
    pub base: f64,
    pub amplitude: f64,
    /// Baseline duration before the ramp starts; the trace begins at `-lead`.
    pub lead: f64,
    pub rise: f64,
    pub hold: f64,
    pub fall: f64,
    pub tail: f64,
    pub dt_sample: f64,
    pub noise_sigma: f64,
}

impl Default for TrapezoidSpec {
    fn default() -> Self {
        Self {
            base: 0.8,
            amplitude: 0.5,
            lead: 2.0,
            rise: 1.0,
            hold: 0.5,
            fall: 3.0,
            tail: 0.6,
            dt_sample: 1e-3,
            noise_sigma: 0.0,
        }
    }
}

impl TrapezoidSpec {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("base", self.base),
            ("amplitude", self.amplitude),
            ("lead", self.lead),
            ("rise", self.rise),
            ("hold", self.hold),
            ("fall", self.fall),
            ("tail", self.tail),
            ("dt_sample", self.dt_sample),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("trapezoid {name} must be finite")));
            }
        }
        if !(self.rise > 0.0) || !(self.fall > 0.0) {
            return Err(Error::invalid("trapezoid rise and fall must be positive"));
        }
        if !(self.dt_sample > 0.0) {
            return Err(Error::invalid("trapezoid dt_sample must be positive"));
        }
        if self.lead < 0.0 || self.hold < 0.0 || self.tail < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::invalid(
                "trapezoid lead, hold, tail, and noise_sigma must be non-negative",
            ));
        }
        Ok(())
    }

    /// Noiseless trace value at time `t` (ramp starts at t = 0).
    pub fn value(&self, t: f64) -> f64 {
        let b = self.base;
        let a = self.amplitude;
        if t < 0.0 {
            b
        } else if t < self.rise {
            b + a * (t / self.rise)
        } else if t < self.rise + self.hold {
            b + a
        } else if t < self.rise + self.hold + self.fall {
            b + a * (1.0 - (t - self.rise - self.hold) / self.fall)
        } else {
            b
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.lead + self.rise + self.hold + self.fall + self.tail
    }
}

/// Generate a trapezoid trace. Deterministic for a fixed seed; `noise_sigma
/// = 0` draws nothing from the generator so the seed is then irrelevant.
pub fn synth_trapezoid(spec: &TrapezoidSpec, seed: u64) -> Result<TimeSeries> {
    spec.validate()?;
    let t0 = -spec.lead;
    let n = grid_len(spec.total_duration(), spec.dt_sample);
    let mut values: Vec<f64> = (0..n)
        .map(|i| spec.value(t0 + i as f64 * spec.dt_sample))
        .collect();
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
        for v in &mut values {
            *v += rng.sample(noise);
        }
    }
    TimeSeries::new(t0, spec.dt_sample, values)
}

/// One trapezoid per amplitude with shared timing, mimicking linearly
/// spaced concentration levels. Amplitudes must be strictly increasing.
/// Trace `i` uses a seed derived from `seed` and `i`.
pub fn synth_concentration_family(
    template: &TrapezoidSpec,
    amplitudes: &[f64],
    seed: u64,
) -> Result<Vec<TimeSeries>> {
    if amplitudes.is_empty() {
        return Err(Error::invalid("amplitude list must not be empty"));
    }
    if amplitudes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("amplitudes must be strictly increasing"));
    }
    amplitudes
        .iter()
        .enumerate()
        .map(|(i, &amplitude)| {
            let spec = TrapezoidSpec {
                amplitude,
                ..*template
            };
            synth_trapezoid(&spec, mix_seed(seed, i as u64))
        })
        .collect()
}

/// Number of grid points covering `[0, duration]` at spacing `step`,
/// including both endpoints when `duration` is an exact multiple.
pub(crate) fn grid_len(duration: f64, step: f64) -> usize {
    (duration / step + NODE_SNAP).floor() as usize + 1
}

/// SplitMix64 step, used to derive independent per-trace seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
