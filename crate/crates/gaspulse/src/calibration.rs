//! Parameter selection from a small set of calibration trials: the
//! change-detection threshold comes from pooled baseline noise of the
//! differentiator output, the integrator drive is scaled back if any
//! calibration trial approaches the rail, and the exposure threshold is
//! set to a fraction of the weakest calibration peak so every calibrated
//! level fires.

use serde::{Deserialize, Serialize};

use crate::batch::{encode_batch, TrialOutcome};
use crate::circuit::{comparator, differentiator_response, CircuitParams};
use crate::dataset::{Gas, TrialRecord};
use crate::encoder::{merge_chatter, run_pipeline, EncodeOptions};
use crate::error::{Error, Result};
use crate::signal::{baseline_stats, TimeWindow};

/// Search space and policy knobs for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Starting parameter set; thresholds in it are placeholders and are
    /// replaced by the calibrated values.
    pub base: CircuitParams,
    /// CD threshold in units of pooled baseline noise sigma.
    pub noise_multiplier: f64,
    /// Lower bound on the CD threshold, volts.
    pub threshold_floor: f64,
    /// Allowed fraction of the integrator rail at the strongest
    /// calibration trial.
    pub rail_margin: f64,
    /// Exposure threshold as a fraction of the weakest calibration peak.
    pub em_fraction: f64,
    /// Comparator hysteresis as a fraction of each threshold.
    pub hysteresis_fraction: f64,
    pub encode: EncodeOptions,
}

impl CalibrationConfig {
    pub fn new(base: CircuitParams) -> Self {
        Self {
            base,
            noise_multiplier: 6.0,
            threshold_floor: 1e-3,
            rail_margin: 0.9,
            em_fraction: 0.5,
            hysteresis_fraction: 0.05,
            encode: EncodeOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_multiplier > 0.0) {
            return Err(Error::invalid("noise_multiplier must be positive"));
        }
        if !(self.threshold_floor > 0.0) {
            return Err(Error::invalid("threshold_floor must be positive"));
        }
        if !(self.rail_margin > 0.0 && self.rail_margin <= 1.0) {
            return Err(Error::invalid("rail_margin must be in (0, 1]"));
        }
        if !(self.em_fraction > 0.0 && self.em_fraction < 1.0) {
            return Err(Error::invalid("em_fraction must be in (0, 1)"));
        }
        if !(self.hysteresis_fraction >= 0.0 && self.hysteresis_fraction < 1.0) {
            return Err(Error::invalid("hysteresis_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-trial measurements backing a calibration decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDiagnostic {
    pub gas: Gas,
    pub level: u8,
    pub trial: u32,
    /// Max |differentiator output| over the trace, volts.
    pub peak_differentiator: f64,
    /// Max |integrator output| over the trace, volts.
    pub peak_integrator: f64,
    /// Distance from the integrator peak to the rail, volts.
    pub rail_margin: f64,
    /// CD pulses rising before the guard window.
    pub baseline_false_triggers: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_t: Option<f64>,
}

/// Outcome of a successful calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: CircuitParams,
    /// Pooled baseline standard deviation of the differentiator output.
    pub sigma_d: f64,
    pub theta_cd: f64,
    pub theta_em: f64,
    /// Factor applied to `tau_in` to respect the rail margin (1 = none).
    pub tau_in_scale: f64,
    pub diagnostics: Vec<TrialDiagnostic>,
}

/// Diagnostics carried by an infeasible-calibration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFailure {
    pub sigma_d: f64,
    pub theta_cd: f64,
    pub diagnostics: Vec<TrialDiagnostic>,
}

/// Flag tallies over a validation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub n_total: u32,
    pub n_valid: u32,
    pub n_no_cd: u32,
    pub n_no_em: u32,
    pub n_multiple_cd: u32,
    pub n_unterminated: u32,
}

impl ValidationSummary {
    pub fn fraction_valid(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_valid as f64 / self.n_total as f64
        }
    }

    pub fn tally(outcomes: &[TrialOutcome]) -> Self {
        let mut s = ValidationSummary {
            n_total: outcomes.len() as u32,
            ..Default::default()
        };
        for o in outcomes {
            if o.is_valid() {
                s.n_valid += 1;
            }
            s.n_no_cd += o.flags.no_cd as u32;
            s.n_no_em += o.flags.no_em as u32;
            s.n_multiple_cd += o.flags.multiple_cd as u32;
            s.n_unterminated += o.flags.unterminated as u32;
        }
        s
    }
}

/// Baseline window of a trial: everything from trace start to the guard
/// boundary before stimulus onset.
fn baseline_window(trial: &TrialRecord, guard: f64) -> Result<TimeWindow> {
    TimeWindow::new(trial.series.t0(), trial.stimulus.onset - guard)
}

/// CD pulses rising inside the baseline window, after chatter merging.
pub fn count_baseline_triggers(
    trial: &TrialRecord,
    params: &CircuitParams,
    opts: &EncodeOptions,
) -> Result<u32> {
    let diff = differentiator_response(&trial.series, &params.diff, params.solver_step)?;
    let cd = merge_chatter(&comparator(&diff, &params.cd_cmp)?, opts.min_gap)?;
    let boundary = trial.stimulus.onset - opts.guard;
    Ok(cd.intervals().iter().filter(|iv| iv.rise < boundary).count() as u32)
}

/// Select circuit parameters from the calibration trials.
///
/// The change-detection threshold is `max(k * sigma_d, floor)` with
/// `sigma_d` pooled over the trials' pre-stimulus differentiator output.
/// `tau_in` is scaled up if the strongest trial would exceed the rail
/// margin, and the exposure threshold is `em_fraction` of the weakest
/// trial's integrator peak. Fails with diagnostics when the constraints
/// cannot all hold.
pub fn calibrate(trials: &[TrialRecord], cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    cfg.base.validate()?;
    if trials.is_empty() {
        return Err(Error::invalid("calibration needs at least one trial"));
    }

    // Pooled baseline noise of the differentiator output: second moments
    // around each trial's own baseline mean, weighted by sample count.
    let mut sum_sq = 0.0;
    let mut total = 0.0;
    for trial in trials {
        let diff = differentiator_response(&trial.series, &cfg.base.diff, cfg.base.solver_step)?;
        let window = baseline_window(trial, cfg.encode.guard)?;
        let stats = baseline_stats(&diff, window)?;
        let n = count_samples(&diff, window) as f64;
        sum_sq += stats.sigma * stats.sigma * n;
        total += n;
    }
    let sigma_d = (sum_sq / total).sqrt();
    let theta_cd = (cfg.noise_multiplier * sigma_d).max(cfg.threshold_floor);

    let mut candidate = cfg.base;
    candidate.cd_cmp.threshold = theta_cd;
    candidate.cd_cmp.hysteresis = cfg.hysteresis_fraction * theta_cd;

    // Integrator peaks with the calibrated CD path. The reset release
    // level only shapes the post-gate tail, never the peak, so the base
    // exposure threshold serves as a placeholder here.
    let mut peaks = Vec::with_capacity(trials.len());
    for trial in trials {
        let run = run_pipeline(&trial.series, &candidate, &trial.stimulus, &cfg.encode)?;
        let peak = run
            .integrator
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        peaks.push(peak);
    }

    let rail_limit = cfg.rail_margin * candidate.integ.v_rail;
    let max_peak = peaks.iter().cloned().fold(0.0f64, f64::max);
    let tau_in_scale = if max_peak > rail_limit {
        max_peak / rail_limit
    } else {
        1.0
    };
    candidate.integ.tau_in *= tau_in_scale;
    // |v| is exactly linear in 1/tau_in for a fixed gate, so the peaks
    // rescale without re-simulation.
    for p in &mut peaks {
        *p /= tau_in_scale;
    }

    let failure = |reason: String, diagnostics: Vec<TrialDiagnostic>| Error::CalibrationInfeasible {
        reason,
        details: Box::new(CalibrationFailure {
            sigma_d,
            theta_cd,
            diagnostics,
        }),
    };

    if candidate.integ.tau_in >= candidate.integ.tau_leak {
        return Err(failure(
            format!(
                "rail margin needs tau_in scaled by {tau_in_scale:.3}, which breaks tau_leak > tau_in"
            ),
            Vec::new(),
        ));
    }

    let min_peak = peaks.iter().cloned().fold(f64::MAX, f64::min);
    let theta_em = cfg.em_fraction * min_peak;
    if !(theta_em > 0.0) || !theta_em.is_finite() {
        return Err(failure(
            "no positive exposure threshold fires on every calibration trial (a trial produced no integrator response)"
                .to_string(),
            Vec::new(),
        ));
    }
    candidate.em_cmp.threshold = theta_em;
    candidate.em_cmp.hysteresis = cfg.hysteresis_fraction * theta_em;
    candidate.validate()?;

    // Final diagnostics with the accepted parameters.
    let mut diagnostics = Vec::with_capacity(trials.len());
    for trial in trials {
        let run = run_pipeline(&trial.series, &candidate, &trial.stimulus, &cfg.encode)?;
        let peak_differentiator = run
            .differentiator
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let peak_integrator = run
            .integrator
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        diagnostics.push(TrialDiagnostic {
            gas: trial.gas,
            level: trial.level,
            trial: trial.trial,
            peak_differentiator,
            peak_integrator,
            rail_margin: candidate.integ.v_rail - peak_integrator,
            baseline_false_triggers: count_baseline_triggers(trial, &candidate, &cfg.encode)?,
            delta_t: run.trace.delta_t,
        });
    }

    if let Some(d) = diagnostics.iter().find(|d| d.baseline_false_triggers > 0) {
        return Err(failure(
            format!(
                "calibrated threshold {theta_cd} V still triggers {} time(s) in the baseline of {}/c{}/t{}; raise noise_multiplier",
                d.baseline_false_triggers, d.gas, d.level, d.trial
            ),
            diagnostics.clone(),
        ));
    }
    let eps = 1e-9 * candidate.integ.v_rail;
    if let Some(d) = diagnostics
        .iter()
        .find(|d| d.peak_integrator > rail_limit + eps)
    {
        return Err(failure(
            format!(
                "integrator peak {} V exceeds the rail margin {} V on {}/c{}/t{}",
                d.peak_integrator, rail_limit, d.gas, d.level, d.trial
            ),
            diagnostics.clone(),
        ));
    }

    Ok(CalibrationReport {
        params: candidate,
        sigma_d,
        theta_cd,
        theta_em,
        tau_in_scale,
        diagnostics,
    })
}

fn count_samples(series: &crate::signal::TimeSeries, window: TimeWindow) -> usize {
    let dt = series.dt();
    let lo = ((window.start - series.t0()) / dt - 1e-9).ceil().max(0.0) as usize;
    let hi = (((window.end - series.t0()) / dt + 1e-9).floor() as usize).min(series.len() - 1);
    hi.saturating_sub(lo) + 1
}

/// Encode held-out trials with calibrated parameters and tally the flags.
pub fn validate(
    params: &CircuitParams,
    held_out: &[TrialRecord],
    opts: &EncodeOptions,
) -> Result<(ValidationSummary, Vec<TrialOutcome>)> {
    let outcomes = encode_batch(held_out, params, opts)?;
    Ok((ValidationSummary::tally(&outcomes), outcomes))
}
