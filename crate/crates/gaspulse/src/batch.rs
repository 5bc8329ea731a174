//! Batch encoding over trial collections. Trials are independent, so the
//! default build fans them out with rayon; the sequential path is always
//! available and produces identical results, and is the only path when
//! the `parallel` feature is disabled.

use crate::circuit::CircuitParams;
use crate::dataset::{Gas, TrialKey, TrialRecord};
use crate::encoder::{encode_trial, EncodeOptions, EventFlags};
use crate::error::Result;

/// Extracted events for one trial, keyed by its grid position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub gas: Gas,
    pub level: u8,
    pub trial: u32,
    pub cd_rise: Option<f64>,
    pub em_rise: Option<f64>,
    pub delta_t: Option<f64>,
    pub flags: EventFlags,
}

impl TrialOutcome {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            gas: self.gas,
            level: self.level,
            trial: self.trial,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.delta_t.is_some()
    }
}

fn encode_one(
    record: &TrialRecord,
    params: &CircuitParams,
    opts: &EncodeOptions,
) -> Result<TrialOutcome> {
    let trace = encode_trial(&record.series, params, &record.stimulus, opts)
        .map_err(|e| e.in_trial(record.gas, record.level, record.trial))?;
    Ok(TrialOutcome {
        gas: record.gas,
        level: record.level,
        trial: record.trial,
        cd_rise: trace.cd_rise,
        em_rise: trace.em_rise,
        delta_t: trace.delta_t,
        flags: trace.flags,
    })
}

/// Encode every trial sequentially, sorted by (gas, level, trial).
pub fn encode_batch_seq(
    trials: &[TrialRecord],
    params: &CircuitParams,
    opts: &EncodeOptions,
) -> Result<Vec<TrialOutcome>> {
    let mut out = trials
        .iter()
        .map(|t| encode_one(t, params, opts))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|o| o.key());
    Ok(out)
}

/// Encode every trial on the rayon pool, sorted by (gas, level, trial).
#[cfg(feature = "parallel")]
pub fn encode_batch_par(
    trials: &[TrialRecord],
    params: &CircuitParams,
    opts: &EncodeOptions,
) -> Result<Vec<TrialOutcome>> {
    use rayon::prelude::*;
    let mut out = trials
        .par_iter()
        .map(|t| encode_one(t, params, opts))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|o| o.key());
    Ok(out)
}

/// Encode every trial, in parallel when the `parallel` feature is on.
/// Output order is always sorted by (gas, level, trial).
pub fn encode_batch(
    trials: &[TrialRecord],
    params: &CircuitParams,
    opts: &EncodeOptions,
) -> Result<Vec<TrialOutcome>> {
    #[cfg(feature = "parallel")]
    {
        encode_batch_par(trials, params, opts)
    }
    #[cfg(not(feature = "parallel"))]
    {
        encode_batch_seq(trials, params, opts)
    }
}

/// Bound the rayon worker count. A no-op on sequential builds and after
/// the global pool has already started.
pub fn configure_threads(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
    }
}
