//! Behavioral simulation and analysis for a spike-time gas-concentration
//! readout.
//!
//! A MOx sensor's load voltage feeds two pathways: a change-detection
//! path (inverting differentiator + comparator) that pulses while the
//! signal rises, and an exposure-measurement path (gated lossy integrator
//! + comparator) that pulses once the accumulated excursion crosses a
//! threshold. The delay between the two rising flanks shrinks as the gas
//! concentration grows, so the inverse delay orders concentration levels.
//!
//! Modules follow the pipeline: [`signal`] holds traces and synthetic
//! stimuli, [`circuit`] the analog block models and the fixed-step
//! solver, [`encoder`] the end-to-end pipeline and event extraction,
//! [`dataset`] ingestion and the canonical on-disk format, [`calibration`]
//! threshold/time-constant selection, [`analysis`] aggregation and
//! exports, and [`batch`] the data-parallel trial loop (rayon under the
//! default `parallel` feature, plain iteration otherwise).

pub mod analysis;
pub mod batch;
pub mod calibration;
pub mod circuit;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod signal;

pub use analysis::{aggregate, monotonicity, ConcentrationCurve, LevelStats};
pub use batch::{configure_threads, encode_batch, encode_batch_seq, TrialOutcome};
pub use calibration::{calibrate, CalibrationConfig, CalibrationReport, ValidationSummary};
pub use circuit::{
    comparator, differentiator_response, gated_integrator, rk4_step, CircuitParams,
    ComparatorParams, DifferentiatorParams, IntegratorParams, Polarity, PulseInterval, PulseTrain,
};
pub use dataset::{
    load_dataset, load_manifest, load_trial, write_synthetic_dataset, DatasetManifest, Gas,
    SyntheticSpec, TrialKey, TrialRecord,
};
pub use encoder::{
    encode_trial, edges_to_spikes, merge_chatter, run_pipeline, Edge, EncodeOptions, EventFlags,
    EventTrace, SpikeTrain,
};
pub use error::{Error, Result};
pub use signal::{
    baseline_stats, synth_concentration_family, synth_trapezoid, BaselineStats, StimulusWindow,
    TimeSeries, TimeWindow, TrapezoidSpec,
};
