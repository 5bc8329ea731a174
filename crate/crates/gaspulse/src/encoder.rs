//! Full two-pathway pipeline: differentiator -> change-detection
//! comparator -> gated integrator with reset -> exposure-measurement
//! comparator, and extraction of the inter-pulse time code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circuit::{
    comparator, differentiator_response, gated_integrator, CircuitParams, PulseInterval,
    PulseTrain,
};
use crate::error::{Error, Result};
use crate::signal::{StimulusWindow, TimeSeries};

/// Fraction of the exposure threshold below which the reset discharge is
/// considered complete and the integrator returns to its leak constant.
pub const RESET_RELEASE_FRACTION: f64 = 0.01;

/// Degenerate-outcome markers. Trials never fail just because the circuit
/// produced no usable events; they are flagged and discarded downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventFlags {
    /// No change-detection pulse at or after the guard window.
    pub no_cd: bool,
    /// Gate opened but the integrator never crossed the exposure threshold.
    pub no_em: bool,
    /// More than one change-detection pulse survived chatter merging; the
    /// first one was used.
    pub multiple_cd: bool,
    /// The used CD pulse or the EM pulse was still high at trace end.
    pub unterminated: bool,
}

impl EventFlags {
    pub fn any(&self) -> bool {
        self.no_cd || self.no_em || self.multiple_cd || self.unterminated
    }

    fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_cd {
            out.push("no_cd");
        }
        if self.no_em {
            out.push("no_em");
        }
        if self.multiple_cd {
            out.push("multiple_cd");
        }
        if self.unterminated {
            out.push("unterminated");
        }
        out
    }
}

impl fmt::Display for EventFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names().join(";"))
    }
}

impl FromStr for EventFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = EventFlags::default();
        for name in s.split(';').filter(|p| !p.is_empty()) {
            match name {
                "no_cd" => flags.no_cd = true,
                "no_em" => flags.no_em = true,
                "multiple_cd" => flags.multiple_cd = true,
                "unterminated" => flags.unterminated = true,
                other => return Err(Error::invalid(format!("unknown event flag `{other}`"))),
            }
        }
        Ok(flags)
    }
}

/// Pulse trains plus the extracted rising-flank times and their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    pub cd: PulseTrain,
    pub em: PulseTrain,
    /// First CD rise at or after `stimulus.onset - guard`.
    pub cd_rise: Option<f64>,
    /// First EM rise after `cd_rise`.
    pub em_rise: Option<f64>,
    /// `em_rise - cd_rise`; present iff both rises are present.
    pub delta_t: Option<f64>,
    pub flags: EventFlags,
}

/// Strictly increasing spike times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeTrain {
    times: Vec<f64>,
}

impl SpikeTrain {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Rising,
    Falling,
}

/// Encoder-level knobs, separate from the analog parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    /// How far before stimulus onset a CD rise is still accepted.
    pub guard: f64,
    /// Gaps shorter than this merge adjacent comparator pulses.
    pub min_gap: f64,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            guard: 0.05,
            min_gap: 0.02,
        }
    }
}

impl EncodeOptions {
    fn validate(&self) -> Result<()> {
        if !(self.guard >= 0.0) || !self.guard.is_finite() {
            return Err(Error::invalid("guard must be non-negative"));
        }
        if !(self.min_gap >= 0.0) || !self.min_gap.is_finite() {
            return Err(Error::invalid("min_gap must be non-negative"));
        }
        Ok(())
    }
}

/// Internal waveforms alongside the extracted events, for diagnostics and
/// waveform dumps.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub differentiator: TimeSeries,
    pub integrator: TimeSeries,
    pub trace: EventTrace,
}

/// Run the full pipeline and keep the internal waveforms.
pub fn run_pipeline(
    input: &TimeSeries,
    params: &CircuitParams,
    stimulus: &StimulusWindow,
    opts: &EncodeOptions,
) -> Result<PipelineRun> {
    params.validate()?;
    opts.validate()?;
    if input.t0() > stimulus.onset - opts.guard {
        return Err(Error::invalid(format!(
            "input must start at or before the guard window ({} s before onset)",
            opts.guard
        )));
    }
    if input.end_time() < stimulus.offset {
        return Err(Error::invalid("input must cover the stimulus window"));
    }

    let diff = differentiator_response(input, &params.diff, params.solver_step)?;
    let cd = merge_chatter(&comparator(&diff, &params.cd_cmp)?, opts.min_gap)?;

    let earliest = stimulus.onset - opts.guard;
    let candidates: Vec<PulseInterval> = cd
        .intervals()
        .iter()
        .copied()
        .filter(|iv| iv.rise >= earliest)
        .collect();

    let mut flags = EventFlags::default();
    let (gate, cd_rise) = match candidates.first() {
        Some(first) => {
            flags.multiple_cd = candidates.len() > 1;
            flags.unterminated = first.fall.is_none();
            (
                PulseTrain::from_intervals(vec![*first])?,
                Some(first.rise),
            )
        }
        None => {
            flags.no_cd = true;
            (PulseTrain::empty(), None)
        }
    };

    let reset_release = RESET_RELEASE_FRACTION * params.em_cmp.threshold;
    let integ = gated_integrator(input, &gate, &params.integ, reset_release, params.solver_step)?;

    let (em, em_rise) = if let Some(cd_rise) = cd_rise {
        let em = merge_chatter(&comparator(&integ.magnitude(), &params.em_cmp)?, opts.min_gap)?;
        let rise = em
            .intervals()
            .iter()
            .find(|iv| iv.rise >= cd_rise)
            .map(|iv| {
                flags.unterminated |= iv.fall.is_none();
                iv.rise
            });
        if rise.is_none() {
            flags.no_em = true;
        }
        (em, rise)
    } else {
        (PulseTrain::empty(), None)
    };

    let delta_t = match (cd_rise, em_rise) {
        (Some(cd), Some(em)) => Some(em - cd),
        _ => None,
    };
    debug_assert!(delta_t.is_none_or(|dt| dt > 0.0));

    Ok(PipelineRun {
        differentiator: diff,
        integrator: integ,
        trace: EventTrace {
            cd,
            em,
            cd_rise,
            em_rise,
            delta_t,
            flags,
        },
    })
}

/// Run the pipeline and return only the extracted events.
pub fn encode_trial(
    input: &TimeSeries,
    params: &CircuitParams,
    stimulus: &StimulusWindow,
    opts: &EncodeOptions,
) -> Result<EventTrace> {
    Ok(run_pipeline(input, params, stimulus, opts)?.trace)
}

/// One spike per selected edge, in order. Unterminated intervals simply
/// contribute no falling spike.
pub fn edges_to_spikes(pulses: &PulseTrain, edge: Edge) -> SpikeTrain {
    let times = match edge {
        Edge::Rising => pulses.rising_edges(),
        Edge::Falling => pulses.falling_edges(),
    };
    SpikeTrain { times }
}

/// Merge consecutive intervals separated by less than `min_gap`.
/// Idempotent; `min_gap = 0` returns the input unchanged.
pub fn merge_chatter(pulses: &PulseTrain, min_gap: f64) -> Result<PulseTrain> {
    if !(min_gap >= 0.0) || !min_gap.is_finite() {
        return Err(Error::invalid("min_gap must be non-negative"));
    }
    let mut merged: Vec<PulseInterval> = Vec::with_capacity(pulses.len());
    for iv in pulses.intervals() {
        match merged.last_mut() {
            Some(prev) => match prev.fall {
                Some(fall) if iv.rise - fall < min_gap => prev.fall = iv.fall,
                _ => merged.push(*iv),
            },
            None => merged.push(*iv),
        }
    }
    PulseTrain::from_intervals(merged)
}
