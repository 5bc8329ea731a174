//! Behavioral models of the analog blocks: inverting differentiator,
//! threshold comparators with hysteresis, and a gated lossy integrator
//! with a fast-discharge reset path, all driven by a fixed-step RK4
//! solver with linear crossing-time refinement.
//!
//! Event times are therefore resolved to better than one solver step, and
//! identical inputs always produce bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{grid_len, TimeSeries};

/// Inverting differentiator: `v_out = -tau_d * du/dt`, low-passed by the
/// parasitic input constant and clamped to the supply rails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentiatorParams {
    /// Gain constant (R*C) in seconds.
    pub tau_d: f64,
    /// Input high-frequency roll-off constant; 0 gives an ideal derivative.
    pub tau_parasitic: f64,
    /// Output saturation magnitude in volts.
    pub v_rail: f64,
}

impl DifferentiatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_d > 0.0) || !self.tau_d.is_finite() {
            return Err(Error::invalid("tau_d must be positive"));
        }
        if !(self.tau_parasitic >= 0.0) || !self.tau_parasitic.is_finite() {
            return Err(Error::invalid("tau_parasitic must be non-negative"));
        }
        if self.tau_parasitic > self.tau_d / 10.0 {
            return Err(Error::invalid("tau_parasitic must be at most tau_d/10"));
        }
        if !(self.v_rail > 0.0) {
            return Err(Error::invalid("differentiator v_rail must be positive"));
        }
        Ok(())
    }
}

/// Gated lossy integrator constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorParams {
    /// Input constant R_in*C in seconds.
    pub tau_in: f64,
    /// Feedback (leak) constant R_f*C in seconds; must exceed `tau_in`.
    pub tau_leak: f64,
    /// Discharge constant while the reset switch is closed; fast
    /// (`< tau_in/10`).
    pub tau_reset: f64,
    /// Output saturation magnitude in volts.
    pub v_rail: f64,
}

impl IntegratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_in > 0.0) || !self.tau_in.is_finite() {
            return Err(Error::invalid("tau_in must be positive"));
        }
        if !(self.tau_leak > self.tau_in) || !self.tau_leak.is_finite() {
            return Err(Error::invalid("tau_leak must exceed tau_in"));
        }
        if !(self.tau_reset > 0.0) || !(self.tau_reset < self.tau_in / 10.0) {
            return Err(Error::invalid("tau_reset must be positive and below tau_in/10"));
        }
        if !(self.v_rail > 0.0) {
            return Err(Error::invalid("integrator v_rail must be positive"));
        }
        Ok(())
    }
}

/// Which side of the threshold asserts the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Above,
    Below,
}

/// Comparator threshold, hysteresis, and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorParams {
    pub threshold: f64,
    pub hysteresis: f64,
    pub polarity: Polarity,
}

impl ComparatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::invalid("comparator threshold must be positive"));
        }
        if !(self.hysteresis >= 0.0) || self.hysteresis >= self.threshold {
            return Err(Error::invalid(
                "comparator hysteresis must be in [0, threshold)",
            ));
        }
        Ok(())
    }
}

/// Full parameter set for the two-pathway circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitParams {
    pub diff: DifferentiatorParams,
    pub cd_cmp: ComparatorParams,
    pub integ: IntegratorParams,
    pub em_cmp: ComparatorParams,
    /// Fixed solver step in seconds; must resolve the fastest dynamics.
    pub solver_step: f64,
}

impl CircuitParams {
    pub fn validate(&self) -> Result<()> {
        self.diff.validate()?;
        self.cd_cmp.validate()?;
        self.integ.validate()?;
        self.em_cmp.validate()?;
        if !(self.solver_step > 0.0) || !self.solver_step.is_finite() {
            return Err(Error::invalid("solver_step must be positive"));
        }
        let diff_fast = if self.diff.tau_parasitic > 0.0 {
            self.diff.tau_parasitic
        } else {
            self.diff.tau_d
        };
        let fastest = diff_fast
            .min(self.integ.tau_in)
            .min(10.0 * self.integ.tau_reset);
        if self.solver_step > fastest / 20.0 {
            return Err(Error::invalid(format!(
                "solver_step {} too coarse for fastest time constant {} (need <= {})",
                self.solver_step,
                fastest,
                fastest / 20.0
            )));
        }
        Ok(())
    }
}

/// One comparator assertion; `fall` is `None` when the pulse is still high
/// at the end of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseInterval {
    pub rise: f64,
    pub fall: Option<f64>,
}

/// Ordered, disjoint comparator on-intervals. Only the last interval may
/// be open (unterminated).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseTrain {
    intervals: Vec<PulseInterval>,
}

impl PulseTrain {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_intervals(intervals: Vec<PulseInterval>) -> Result<Self> {
        let mut prev_fall = f64::NEG_INFINITY;
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.rise >= prev_fall) {
                return Err(Error::invalid("pulse intervals must be sorted and disjoint"));
            }
            match iv.fall {
                Some(f) => {
                    if !(iv.rise < f) {
                        return Err(Error::invalid("pulse interval requires rise < fall"));
                    }
                    prev_fall = f;
                }
                None => {
                    if i + 1 != intervals.len() {
                        return Err(Error::invalid(
                            "only the last pulse interval may be unterminated",
                        ));
                    }
                }
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[PulseInterval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn has_unterminated(&self) -> bool {
        self.intervals.last().is_some_and(|iv| iv.fall.is_none())
    }

    pub fn rising_edges(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.rise).collect()
    }

    pub fn falling_edges(&self) -> Vec<f64> {
        self.intervals.iter().filter_map(|iv| iv.fall).collect()
    }
}

/// One classical 4th-order Runge-Kutta step for `dv/dt = deriv(t, v)`.
/// Local truncation error is O(h^5). Errors on non-finite state.
pub fn rk4_step<F>(state: f64, t: f64, h: f64, deriv: F) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if !state.is_finite() {
        return Err(Error::NonFinite {
            context: format!("solver state at t = {t}"),
        });
    }
    let k1 = deriv(t, state);
    let k2 = deriv(t + h / 2.0, state + h * k1 / 2.0);
    let k3 = deriv(t + h / 2.0, state + h * k2 / 2.0);
    let k4 = deriv(t + h, state + h * k3);
    let next = state + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: format!("solver step at t = {t}"),
        });
    }
    Ok(next)
}

/// Response of the inverting differentiator to `input`, sampled on a
/// uniform grid of spacing `step` over the input domain.
///
/// With `tau_parasitic = 0` the output is the exact derivative of the
/// piecewise-linear interpolant, `-tau_d * du/dt`. Otherwise the
/// first-order lag is integrated through the substitution
/// `w = tau_p*v + tau_d*u`, which turns the derivative forcing into
/// `dw/dt = (tau_d*u - w)/tau_p` with `v = (w - tau_d*u)/tau_p`.
/// Output samples are clamped to the rails.
pub fn differentiator_response(
    input: &TimeSeries,
    p: &DifferentiatorParams,
    step: f64,
) -> Result<TimeSeries> {
    p.validate()?;
    if input.len() < 2 {
        return Err(Error::invalid("differentiator input needs duration > 0"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("solver step must be positive"));
    }
    let n = grid_len(input.duration(), step);
    let t0 = input.t0();
    let mut out = Vec::with_capacity(n);

    if p.tau_parasitic == 0.0 {
        for k in 0..n {
            let t = t0 + k as f64 * step;
            let v = -p.tau_d * input.slope_at_clamped(t);
            out.push(v.clamp(-p.v_rail, p.v_rail));
        }
    } else {
        let tau_p = p.tau_parasitic;
        let u = |t: f64| input.value_at_clamped(t);
        let deriv = |t: f64, w: f64| (p.tau_d * u(t) - w) / tau_p;
        // Start with zero differentiator output: w(t0) = tau_d * u(t0).
        let mut w = p.tau_d * u(t0);
        for k in 0..n {
            let t = t0 + k as f64 * step;
            let v = (w - p.tau_d * u(t)) / tau_p;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("differentiator output at t = {t}"),
                });
            }
            out.push(v.clamp(-p.v_rail, p.v_rail));
            if k + 1 < n {
                w = rk4_step(w, t, step, deriv)?;
            }
        }
    }
    TimeSeries::new(t0, step, out)
}

/// Threshold the input into a pulse train.
///
/// With `polarity = Below` the pulse asserts while `v <= -threshold` and
/// de-asserts once `v >= -(threshold - hysteresis)`; `Above` is symmetric
/// around `+threshold`. Rise and fall instants are refined by linear
/// interpolation between the bracketing samples, so their resolution is
/// better than one sample interval.
pub fn comparator(input: &TimeSeries, p: &ComparatorParams) -> Result<PulseTrain> {
    p.validate()?;
    let (assert_level, deassert_level, sign) = match p.polarity {
        Polarity::Below => (-p.threshold, -(p.threshold - p.hysteresis), -1.0),
        Polarity::Above => (p.threshold, p.threshold - p.hysteresis, 1.0),
    };
    // With sign applied, "beyond" means signed value >= signed level.
    let beyond_assert = |v: f64| sign * v >= sign * assert_level;
    let within_deassert = |v: f64| sign * v <= sign * deassert_level;

    let values = input.values();
    let dt = input.dt();
    let mut intervals = Vec::new();
    let mut high = beyond_assert(values[0]);
    let mut rise = if high { Some(input.t0()) } else { None };

    for k in 1..values.len() {
        let prev = values[k - 1];
        let cur = values[k];
        let t_prev = input.time_at(k - 1);
        if high {
            if within_deassert(cur) {
                let frac = cross_fraction(prev, cur, deassert_level);
                let fall = t_prev + frac * dt;
                intervals.push(PulseInterval {
                    rise: rise.take().expect("high state always has a rise"),
                    fall: Some(fall),
                });
                high = false;
            }
        } else if beyond_assert(cur) {
            let frac = cross_fraction(prev, cur, assert_level);
            rise = Some(t_prev + frac * dt);
            high = true;
        }
    }
    if let Some(rise) = rise {
        intervals.push(PulseInterval { rise, fall: None });
    }
    PulseTrain::from_intervals(intervals)
}

/// Fraction of the step at which a linear segment from `a` to `b` crosses
/// `level`. Falls back to 1.0 when the segment is degenerate.
fn cross_fraction(a: f64, b: f64, level: f64) -> f64 {
    if a == b {
        return 1.0;
    }
    ((level - a) / (b - a)).clamp(0.0, 1.0)
}

/// Gated lossy integrator with a reset path, solved on a uniform grid of
/// spacing `step` over the input domain.
///
/// While the gate is high the input drives the state through
/// `dv/dt = -u(t)/tau_in - v/tau_leak`, with `u` the input referenced to
/// its value at the gate's rising edge. On the gate's falling edge the
/// decay constant switches to `tau_reset` (the discharge switch) until
/// `|v|` drops below `reset_release`, after which it returns to
/// `tau_leak`. The state saturates at the rails.
pub fn gated_integrator(
    input: &TimeSeries,
    gate: &PulseTrain,
    p: &IntegratorParams,
    reset_release: f64,
    step: f64,
) -> Result<TimeSeries> {
    integrate_gated(input, gate, p, reset_release, None, step)
}

/// [`gated_integrator`] with an explicit input reference instead of the
/// sampled value at each gate onset. Useful when the drive is defined
/// relative to a known baseline.
pub fn gated_integrator_referenced(
    input: &TimeSeries,
    gate: &PulseTrain,
    p: &IntegratorParams,
    reset_release: f64,
    reference: f64,
    step: f64,
) -> Result<TimeSeries> {
    integrate_gated(input, gate, p, reset_release, Some(reference), step)
}

struct IntegratorRun<'a> {
    input: &'a TimeSeries,
    p: IntegratorParams,
    reset_release: f64,
    fixed_reference: Option<f64>,
    /// (time, is_rise, reference-at-rise) for every gate edge, sorted.
    edges: Vec<(f64, bool, f64)>,
    gate_high: bool,
    reset_pending: bool,
    reference: f64,
    v: f64,
}

impl<'a> IntegratorRun<'a> {
    fn new(
        input: &'a TimeSeries,
        gate: &PulseTrain,
        p: &IntegratorParams,
        reset_release: f64,
        fixed_reference: Option<f64>,
    ) -> Result<Self> {
        p.validate()?;
        if !(reset_release >= 0.0) || !reset_release.is_finite() {
            return Err(Error::invalid("reset_release must be non-negative"));
        }
        let t_start = input.t0();
        let t_end = input.end_time();
        let slack = input.dt() * 1e-9;
        let mut edges = Vec::with_capacity(gate.len() * 2);
        for iv in gate.intervals() {
            if iv.rise < t_start - slack || iv.rise > t_end + slack {
                return Err(Error::invalid("gate interval outside input domain"));
            }
            let reference = match fixed_reference {
                Some(r) => r,
                None => input.value_at_clamped(iv.rise),
            };
            edges.push((iv.rise, true, reference));
            if let Some(fall) = iv.fall {
                if fall > t_end + slack {
                    return Err(Error::invalid("gate interval outside input domain"));
                }
                edges.push((fall, false, 0.0));
            }
        }
        Ok(Self {
            input,
            p: *p,
            reset_release,
            fixed_reference,
            edges,
            gate_high: false,
            reset_pending: false,
            reference: fixed_reference.unwrap_or(0.0),
            v: 0.0,
        })
    }
}

fn integrate_gated(
    input: &TimeSeries,
    gate: &PulseTrain,
    p: &IntegratorParams,
    reset_release: f64,
    fixed_reference: Option<f64>,
    step: f64,
) -> Result<TimeSeries> {
    let mut run = IntegratorRun::new(input, gate, p, reset_release, fixed_reference)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("solver step must be positive"));
    }
    let n = grid_len(input.duration(), step);
    let t0 = input.t0();
    let mut out = Vec::with_capacity(n);
    out.push(run.v);
    let mut edge_idx = advance_edges(&mut run, t0, 0);

    for k in 1..n {
        let seg_start = t0 + (k - 1) as f64 * step;
        let seg_end = t0 + k as f64 * step;
        let mut t = seg_start;
        // Split the step at any gate edge falling inside it so the RHS
        // stays smooth within each RK4 sub-step.
        while edge_idx < run.edges.len() && run.edges[edge_idx].0 < seg_end {
            let (edge_t, is_rise, reference) = run.edges[edge_idx];
            if edge_t > t {
                substep(&mut run, t, edge_t - t)?;
                t = edge_t;
            }
            apply_edge(&mut run, is_rise, reference);
            edge_idx += 1;
        }
        if seg_end > t {
            substep(&mut run, t, seg_end - t)?;
        }
        if !run.v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("integrator output at t = {seg_end}"),
            });
        }
        out.push(run.v);
    }
    TimeSeries::new(t0, step, out)
}

fn advance_edges(run: &mut IntegratorRun, t: f64, mut idx: usize) -> usize {
    while idx < run.edges.len() && run.edges[idx].0 <= t {
        let (_, is_rise, reference) = run.edges[idx];
        apply_edge(run, is_rise, reference);
        idx += 1;
    }
    idx
}

fn apply_edge(run: &mut IntegratorRun, is_rise: bool, reference: f64) {
    if is_rise {
        run.gate_high = true;
        run.reset_pending = false;
        run.reference = run.fixed_reference.unwrap_or(reference);
    } else {
        run.gate_high = false;
        run.reset_pending = true;
    }
}

fn substep(run: &mut IntegratorRun, t: f64, h: f64) -> Result<()> {
    if h <= 0.0 {
        return Ok(());
    }
    let tau_eff = if run.gate_high {
        run.p.tau_leak
    } else if run.reset_pending {
        run.p.tau_reset
    } else {
        run.p.tau_leak
    };
    let gate_high = run.gate_high;
    let reference = run.reference;
    let input = run.input;
    let tau_in = run.p.tau_in;
    let deriv = |t: f64, v: f64| {
        let drive = if gate_high {
            (input.value_at_clamped(t) - reference) / tau_in
        } else {
            0.0
        };
        -drive - v / tau_eff
    };
    run.v = rk4_step(run.v, t, h, deriv)?;
    run.v = run.v.clamp(-run.p.v_rail, run.p.v_rail);
    if run.reset_pending && !run.gate_high && run.v.abs() < run.reset_release {
        run.reset_pending = false;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TrapezoidSpec;

    fn diff_params(tau_d: f64, tau_p: f64, rail: f64) -> DifferentiatorParams {
        DifferentiatorParams {
            tau_d,
            tau_parasitic: tau_p,
            v_rail: rail,
        }
    }

    fn integ_params() -> IntegratorParams {
        IntegratorParams {
            tau_in: 0.1,
            tau_leak: 10.0,
            tau_reset: 1e-3,
            v_rail: 100.0,
        }
    }

    fn ramp(slope: f64, duration: f64, dt: f64) -> TimeSeries {
        TimeSeries::from_fn(0.0, dt, grid_len(duration, dt), |t| slope * t).unwrap()
    }

    #[test]
    fn differentiator_steady_ramp() {
        // closed form: steady output is -tau_d * slope
        let input = ramp(2.0, 1.0, 1e-3);
        for tau_p in [0.0, 5e-3] {
            let out = differentiator_response(&input, &diff_params(0.05, tau_p, 10.0), 1e-4)
                .unwrap();
            let v_end = *out.values().last().unwrap();
            assert!(
                (v_end - (-0.1)).abs() < 1e-6,
                "tau_p {tau_p}: steady output {v_end}"
            );
        }
    }

    #[test]
    fn differentiator_constant_input_is_zero() {
        let input = TimeSeries::new(0.0, 1e-3, vec![0.7; 1001]).unwrap();
        let out =
            differentiator_response(&input, &diff_params(0.05, 5e-3, 10.0), 1e-4).unwrap();
        assert!(out.values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn differentiator_clamps_at_rail() {
        // closed form -tau_d*m = -5 V exceeds the 4 V rail
        let input = ramp(100.0, 0.2, 1e-3);
        let out =
            differentiator_response(&input, &diff_params(0.05, 0.0, 4.0), 1e-4).unwrap();
        let min = out.values().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(min, -4.0);
        assert!(out.values().iter().all(|&v| v.abs() <= 4.0));
    }

    #[test]
    fn differentiator_linearity_in_input() {
        let spec = TrapezoidSpec {
            base: 0.0,
            amplitude: 0.5,
            lead: 0.2,
            rise: 0.3,
            hold: 0.1,
            fall: 0.3,
            tail: 0.1,
            dt_sample: 1e-3,
            noise_sigma: 0.0,
        };
        let p = diff_params(0.05, 5e-3, 100.0);
        let a = synth_trapezoid(&spec, 0).unwrap();
        let b = synth_trapezoid(
            &TrapezoidSpec {
                amplitude: 1.0,
                ..spec
            },
            0,
        )
        .unwrap();
        let da = differentiator_response(&a, &p, 1e-4).unwrap();
        let db = differentiator_response(&b, &p, 1e-4).unwrap();
        for (va, vb) in da.values().iter().zip(db.values()) {
            assert!((vb - 2.0 * va).abs() < 1e-9);
        }
    }

    use crate::signal::synth_trapezoid;

    #[test]
    fn differentiator_sign_property() {
        // increasing input segment -> output <= 0; decreasing -> >= 0
        let input = TimeSeries::from_fn(0.0, 1e-3, 2001, |t| 0.3 * t + 0.05 * t * t).unwrap();
        let out =
            differentiator_response(&input, &diff_params(0.05, 5e-3, 10.0), 1e-4).unwrap();
        assert!(out.values().iter().all(|&v| v <= 1e-12));
        let falling = TimeSeries::from_fn(0.0, 1e-3, 2001, |t| 1.0 - 0.3 * t).unwrap();
        let out =
            differentiator_response(&falling, &diff_params(0.05, 5e-3, 10.0), 1e-4).unwrap();
        assert!(out.values().iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn comparator_quiet_input_empty() {
        let input = TimeSeries::new(0.0, 1e-3, vec![0.0; 1001]).unwrap();
        let p = ComparatorParams {
            threshold: 0.1,
            hysteresis: 0.0,
            polarity: Polarity::Below,
        };
        assert!(comparator(&input, &p).unwrap().is_empty());
    }

    #[test]
    fn comparator_linear_crossing_time() {
        // input ramps 0 -> -1 V over 1 s; crossing -0.5 V at t = 0.5 s
        let input = TimeSeries::from_fn(0.0, 1e-3, 1001, |t| -t).unwrap();
        let p = ComparatorParams {
            threshold: 0.5,
            hysteresis: 0.0,
            polarity: Polarity::Below,
        };
        let train = comparator(&input, &p).unwrap();
        assert_eq!(train.len(), 1);
        let iv = train.intervals()[0];
        assert!((iv.rise - 0.5).abs() <= 1e-3, "rise at {}", iv.rise);
        assert!(iv.fall.is_none(), "stays beyond threshold to trace end");
        assert!(train.has_unterminated());
    }

    #[test]
    fn comparator_above_polarity_with_hysteresis() {
        // rises past 1.0, dips to 0.92 (inside hysteresis band), then drops
        let values = vec![0.0, 0.5, 1.1, 0.92, 1.2, 0.5, 0.0];
        let input = TimeSeries::new(0.0, 1.0, values).unwrap();
        let p = ComparatorParams {
            threshold: 1.0,
            hysteresis: 0.1,
            polarity: Polarity::Above,
        };
        let train = comparator(&input, &p).unwrap();
        assert_eq!(train.len(), 1, "dip within hysteresis must not split");
        let iv = train.intervals()[0];
        assert!(iv.fall.is_some());
        assert!(iv.rise > 1.0 && iv.rise < 2.0);
    }

    #[test]
    fn pulse_train_rejects_disorder() {
        assert!(PulseTrain::from_intervals(vec![
            PulseInterval {
                rise: 1.0,
                fall: Some(0.5)
            },
        ])
        .is_err());
        assert!(PulseTrain::from_intervals(vec![
            PulseInterval {
                rise: 0.0,
                fall: None
            },
            PulseInterval {
                rise: 2.0,
                fall: Some(3.0)
            },
        ])
        .is_err());
        assert!(PulseTrain::from_intervals(vec![
            PulseInterval {
                rise: 0.0,
                fall: Some(2.0)
            },
            PulseInterval {
                rise: 1.5,
                fall: Some(3.0)
            },
        ])
        .is_err());
    }

    #[test]
    fn rk4_pure_decay_matches_exponential() {
        let mut v = 1.0;
        let h = 1e-3;
        for k in 0..1000 {
            v = rk4_step(v, k as f64 * h, h, |_, y| -y).unwrap();
        }
        let expect = (-1.0f64).exp();
        assert!(
            ((v - expect) / expect).abs() < 1e-9,
            "v(1) = {v}, expected {expect}"
        );
    }

    #[test]
    fn rk4_zero_stays_zero() {
        let mut v = 0.0;
        for k in 0..100 {
            v = rk4_step(v, k as f64 * 1e-3, 1e-3, |_, y| -y / 0.5).unwrap();
        }
        assert_eq!(v, 0.0);
    }

    #[test]
    fn rk4_rejects_non_finite() {
        assert!(rk4_step(f64::NAN, 0.0, 1e-3, |_, y| y).is_err());
        assert!(rk4_step(1.0, 0.0, 1e-3, |_, _| f64::INFINITY).is_err());
    }

    #[test]
    fn rk4_constant_forcing_matches_closed_form() {
        // dv/dt = -1/tau_in - v/tau_leak with v(0) = 0
        let (tau_in, tau_leak) = (0.1, 10.0);
        let mut v = 0.0;
        let h = 1e-4;
        for k in 0..2000 {
            v = rk4_step(v, k as f64 * h, h, |_, y| -1.0 / tau_in - y / tau_leak).unwrap();
        }
        let expect = -100.0 * (1.0 - (-0.2f64 / 10.0).exp());
        assert!(((v - expect) / expect).abs() < 1e-6);
    }

    #[test]
    fn gated_integrator_constant_drive_closed_form() {
        // |v(t)| = 100*(1 - e^(-t/10)) for u = 1 V from t = 0
        let input = TimeSeries::new(0.0, 1e-3, vec![1.0; 1001]).unwrap();
        let gate = PulseTrain::from_intervals(vec![PulseInterval {
            rise: 0.0,
            fall: None,
        }])
        .unwrap();
        let out = integrate_gated(&input, &gate, &integ_params(), 0.0, Some(0.0), 1e-4).unwrap();
        let at = |t: f64| out.value_at(t).unwrap().abs();
        let expect = |t: f64| 100.0 * (1.0 - (-t / 10.0f64).exp());
        for t in [0.1005, 0.5, 1.0] {
            let rel = (at(t) - expect(t)).abs() / expect(t);
            assert!(rel < 1e-6, "t = {t}: |v| = {}, expected {}", at(t), expect(t));
        }
        assert!((at(0.1005) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gated_integrator_idle_gate_stays_zero() {
        let input = TimeSeries::new(0.0, 1e-3, vec![1.0; 1001]).unwrap();
        let out =
            integrate_gated(&input, &PulseTrain::empty(), &integ_params(), 0.0, None, 1e-4)
                .unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gated_integrator_reset_discharges_within_five_tau() {
        let input = TimeSeries::new(0.0, 1e-3, vec![1.0; 1001]).unwrap();
        let gate = PulseTrain::from_intervals(vec![PulseInterval {
            rise: 0.0,
            fall: Some(0.5),
        }])
        .unwrap();
        let p = integ_params(); // tau_reset = 1 ms
        let out = integrate_gated(&input, &gate, &p, 0.0, Some(0.0), 1e-4).unwrap();
        let at_fall = out.value_at(0.5).unwrap().abs();
        let later = out.value_at(0.505).unwrap().abs();
        assert!(at_fall > 1.0);
        assert!(
            later < 0.01 * at_fall,
            "|v| {later} not below 1% of {at_fall} after 5 tau_reset"
        );
    }

    #[test]
    fn gated_integrator_rejects_gate_outside_domain() {
        let input = TimeSeries::new(0.0, 1e-3, vec![1.0; 101]).unwrap();
        let gate = PulseTrain::from_intervals(vec![PulseInterval {
            rise: -1.0,
            fall: Some(0.05),
        }])
        .unwrap();
        assert!(integrate_gated(&input, &gate, &integ_params(), 0.0, None, 1e-4).is_err());
    }

    #[test]
    fn gated_integrator_crossing_time_monotone_in_drive() {
        // closed-form crossing t* = -tau_leak * ln(1 - theta*tau_in/(u*tau_leak))
        let p = integ_params();
        let theta = 1.0;
        let mut previous = f64::MAX;
        for u in [0.5, 1.0, 2.0] {
            let input = TimeSeries::new(0.0, 1e-3, vec![u; 2001]).unwrap();
            let gate = PulseTrain::from_intervals(vec![PulseInterval {
                rise: 0.0,
                fall: None,
            }])
            .unwrap();
            let out = integrate_gated(&input, &gate, &p, 0.0, Some(0.0), 1e-4).unwrap();
            let cmp = ComparatorParams {
                threshold: theta,
                hysteresis: 0.0,
                polarity: Polarity::Above,
            };
            let train = comparator(&out.magnitude(), &cmp).unwrap();
            let rise = train.intervals()[0].rise;
            let expect = -p.tau_leak * (1.0 - theta * p.tau_in / (u * p.tau_leak)).ln();
            assert!(
                (rise - expect).abs() <= 1e-4,
                "u = {u}: rise {rise} vs closed form {expect}"
            );
            assert!(rise < previous, "crossing time must decrease with drive");
            previous = rise;
        }
    }

    #[test]
    fn clamp_safety_on_hard_drive() {
        let p = IntegratorParams {
            v_rail: 2.0,
            ..integ_params()
        };
        let input = TimeSeries::new(0.0, 1e-3, vec![5.0; 2001]).unwrap();
        let gate = PulseTrain::from_intervals(vec![PulseInterval {
            rise: 0.0,
            fall: Some(1.0),
        }])
        .unwrap();
        let out = integrate_gated(&input, &gate, &p, 0.0, Some(0.0), 1e-4).unwrap();
        assert!(out.values().iter().all(|&v| v.abs() <= 2.0));
        let min = out.values().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(min, -2.0, "drive this hard must reach the rail");
    }

    #[test]
    fn determinism_bitwise() {
        let spec = TrapezoidSpec {
            noise_sigma: 1e-3,
            ..TrapezoidSpec::default()
        };
        let input = synth_trapezoid(&spec, 5).unwrap();
        let p = diff_params(0.1, 0.01, 12.0);
        let a = differentiator_response(&input, &p, 1e-4).unwrap();
        let b = differentiator_response(&input, &p, 1e-4).unwrap();
        let bits = |s: &TimeSeries| s.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn params_validation() {
        assert!(diff_params(0.1, 0.02, 12.0).validate().is_err()); // tau_p > tau_d/10
        assert!(diff_params(0.0, 0.0, 12.0).validate().is_err());
        let bad_integ = IntegratorParams {
            tau_in: 0.1,
            tau_leak: 0.05,
            tau_reset: 1e-3,
            v_rail: 12.0,
        };
        assert!(bad_integ.validate().is_err());
        let bad_reset = IntegratorParams {
            tau_reset: 0.02,
            ..integ_params()
        };
        assert!(bad_reset.validate().is_err());
        let cmp = ComparatorParams {
            threshold: 0.1,
            hysteresis: 0.1,
            polarity: Polarity::Above,
        };
        assert!(cmp.validate().is_err());
    }

    #[test]
    fn circuit_params_step_constraint() {
        let params = CircuitParams {
            diff: diff_params(0.1, 0.01, 12.0),
            cd_cmp: ComparatorParams {
                threshold: 0.05,
                hysteresis: 0.002,
                polarity: Polarity::Below,
            },
            integ: integ_params(),
            em_cmp: ComparatorParams {
                threshold: 0.5,
                hysteresis: 0.02,
                polarity: Polarity::Above,
            },
            solver_step: 1e-4,
        };
        assert!(params.validate().is_ok());
        let coarse = CircuitParams {
            solver_step: 1e-2,
            ..params
        };
        assert!(coarse.validate().is_err());
    }
}
