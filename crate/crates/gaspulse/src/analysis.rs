//! Aggregation of trial outcomes into per-gas concentration curves, rank
//! statistics, and deterministic CSV/SVG exports.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::TrialOutcome;
use crate::dataset::{Gas, LEVELS};
use crate::error::{Error, Result};

/// Statistics for one (gas, level) cell. Flagged trials count as
/// discarded; all statistics cover valid trials only. Two inverse
/// variants are kept: `inv_mean_dt` (1 / mean Δt, the curve the readout
/// plots) and the mean/std of per-trial 1/Δt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u8,
    pub n_valid: u32,
    pub n_discarded: u32,
    pub mean_dt: Option<f64>,
    pub std_dt: Option<f64>,
    /// 1 / mean(delta_t).
    pub inv_mean_dt: Option<f64>,
    /// Mean of per-trial 1/delta_t.
    pub mean_trial_inv_dt: Option<f64>,
    /// Population std of per-trial 1/delta_t.
    pub std_trial_inv_dt: Option<f64>,
}

impl LevelStats {
    fn empty(level: u8) -> Self {
        Self {
            level,
            n_valid: 0,
            n_discarded: 0,
            mean_dt: None,
            std_dt: None,
            inv_mean_dt: None,
            mean_trial_inv_dt: None,
            std_trial_inv_dt: None,
        }
    }
}

/// Per-gas curve over the five protocol levels, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCurve {
    pub gas: Gas,
    pub levels: Vec<LevelStats>,
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group outcomes by gas and level. Every gas present in the input gets a
/// curve with all five level rows; cells without valid trials stay empty.
/// Trial order does not affect the result.
pub fn aggregate(outcomes: &[TrialOutcome]) -> Vec<ConcentrationCurve> {
    let mut curves = Vec::new();
    for gas in Gas::ALL {
        if !outcomes.iter().any(|o| o.gas == gas) {
            continue;
        }
        let mut levels = Vec::with_capacity(LEVELS as usize);
        for level in 1..=LEVELS {
            let mut stats = LevelStats::empty(level);
            let mut dts: Vec<f64> = Vec::new();
            for o in outcomes.iter().filter(|o| o.gas == gas && o.level == level) {
                match o.delta_t {
                    Some(dt) => {
                        stats.n_valid += 1;
                        dts.push(dt);
                    }
                    None => stats.n_discarded += 1,
                }
            }
            if !dts.is_empty() {
                // deterministic reduction independent of input order
                dts.sort_by(f64::total_cmp);
                let (mean_dt, std_dt) = population_stats(&dts);
                let inv: Vec<f64> = dts.iter().map(|dt| 1.0 / dt).collect();
                let (mean_inv, std_inv) = population_stats(&inv);
                stats.mean_dt = Some(mean_dt);
                stats.std_dt = Some(std_dt);
                stats.inv_mean_dt = Some(1.0 / mean_dt);
                stats.mean_trial_inv_dt = Some(mean_inv);
                stats.std_trial_inv_dt = Some(std_inv);
            }
            levels.push(stats);
        }
        curves.push(ConcentrationCurve { gas, levels });
    }
    curves
}

/// Spearman rank correlation between two equal-length samples, with
/// midranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("spearman needs equal-length samples"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    let rx = midranks(xs);
    let ry = midranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::invalid("spearman undefined for constant samples"));
    }
    if vx == vy && cov == vx {
        return Ok(1.0); // identical rank vectors
    }
    if vx == vy && cov == -vx {
        return Ok(-1.0);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation between level index and `inv_mean_dt` over the
/// non-empty levels of a curve. Needs at least two non-empty levels.
pub fn monotonicity(curve: &ConcentrationCurve) -> Result<f64> {
    let mut levels = Vec::new();
    let mut inv = Vec::new();
    for stats in &curve.levels {
        if let Some(v) = stats.inv_mean_dt {
            levels.push(stats.level as f64);
            inv.push(v);
        }
    }
    if levels.len() < 2 {
        return Err(Error::invalid(format!(
            "monotonicity of {} needs at least two non-empty levels",
            curve.gas
        )));
    }
    spearman(&levels, &inv)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Canonical per-cell CSV:
/// `gas,level,n_valid,n_discarded,mean_dt_s,std_dt_s,mean_inv_dt_per_s`.
/// Empty cells leave the statistics blank.
pub fn curves_csv(curves: &[ConcentrationCurve]) -> String {
    let mut out = String::from("gas,level,n_valid,n_discarded,mean_dt_s,std_dt_s,mean_inv_dt_per_s\n");
    for curve in curves {
        for s in &curve.levels {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                curve.gas,
                s.level,
                s.n_valid,
                s.n_discarded,
                fmt_opt(s.mean_dt),
                fmt_opt(s.std_dt),
                fmt_opt(s.inv_mean_dt),
            ));
        }
    }
    out
}

/// Extended CSV with both inverse variants.
pub fn curves_full_csv(curves: &[ConcentrationCurve]) -> String {
    let mut out = String::from(
        "gas,level,n_valid,n_discarded,mean_dt_s,std_dt_s,inv_mean_dt_per_s,mean_trial_inv_dt_per_s,std_trial_inv_dt_per_s\n",
    );
    for curve in curves {
        for s in &curve.levels {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                curve.gas,
                s.level,
                s.n_valid,
                s.n_discarded,
                fmt_opt(s.mean_dt),
                fmt_opt(s.std_dt),
                fmt_opt(s.inv_mean_dt),
                fmt_opt(s.mean_trial_inv_dt),
                fmt_opt(s.std_trial_inv_dt),
            ));
        }
    }
    out
}

/// Write the canonical and extended CSVs next to each other.
pub fn write_curves_csv(curves: &[ConcentrationCurve], path: &Path, full_path: &Path) -> Result<()> {
    fs::write(path, curves_csv(curves))?;
    fs::write(full_path, curves_full_csv(curves))?;
    Ok(())
}

const SVG_PANEL_W: f64 = 240.0;
const SVG_PANEL_H: f64 = 200.0;
const SVG_MARGIN: f64 = 42.0;

/// One panel per gas: dots at 1/mean(Δt) per level, error bars showing
/// the per-trial 1/Δt standard deviation. Fixed layout and fixed number
/// formatting keep the output byte-stable.
pub fn curves_svg(curves: &[ConcentrationCurve]) -> String {
    let width = SVG_MARGIN + curves.len() as f64 * (SVG_PANEL_W + SVG_MARGIN);
    let height = SVG_PANEL_H + 2.0 * SVG_MARGIN + 16.0;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    s.push_str("<style>text{font-family:sans-serif;font-size:11px}</style>\n");
    for (i, curve) in curves.iter().enumerate() {
        let x0 = SVG_MARGIN + i as f64 * (SVG_PANEL_W + SVG_MARGIN);
        let y0 = SVG_MARGIN;
        // y-range from data, padded; empty panels default to [0, 1]
        let mut y_max = f64::MIN;
        for s in &curve.levels {
            if let (Some(inv), Some(std)) = (s.inv_mean_dt, s.std_trial_inv_dt) {
                y_max = y_max.max(inv + std);
            }
        }
        let y_max = if y_max == f64::MIN { 1.0 } else { y_max * 1.15 };
        let x_of = |level: f64| x0 + (level - 1.0) / 4.0 * SVG_PANEL_W;
        let y_of = |v: f64| y0 + SVG_PANEL_H - (v / y_max) * SVG_PANEL_H;

        s.push_str(&format!(
            "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{SVG_PANEL_W:.1}\" height=\"{SVG_PANEL_H:.1}\" fill=\"none\" stroke=\"#444\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            x0 + SVG_PANEL_W / 2.0,
            y0 - 10.0,
            curve.gas
        ));
        for level in 1..=LEVELS {
            let x = x_of(level as f64);
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                x,
                y0 + SVG_PANEL_H + 14.0,
                level
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">level</text>\n",
            x0 + SVG_PANEL_W / 2.0,
            y0 + SVG_PANEL_H + 30.0
        ));
        for frac in [0.0, 0.5, 1.0] {
            let v = frac * y_max;
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.2}</text>\n",
                x0 - 4.0,
                y_of(v) + 4.0,
                v
            ));
        }
        // polyline through non-empty cells
        let points: Vec<String> = curve
            .levels
            .iter()
            .filter_map(|st| {
                st.inv_mean_dt
                    .map(|v| format!("{:.2},{:.2}", x_of(st.level as f64), y_of(v)))
            })
            .collect();
        if points.len() > 1 {
            s.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\"/>\n",
                points.join(" ")
            ));
        }
        for st in &curve.levels {
            let (Some(inv), Some(std)) = (st.inv_mean_dt, st.std_trial_inv_dt) else {
                continue;
            };
            let x = x_of(st.level as f64);
            s.push_str(&format!(
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#1f77b4\"/>\n",
                y_of(inv - std),
                y_of(inv + std),
            ));
            s.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>\n",
                y_of(inv)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_curves_svg(curves: &[ConcentrationCurve], path: &Path) -> Result<()> {
    fs::write(path, curves_svg(curves))?;
    Ok(())
}

/// Per-trial event table:
/// `gas,level,trial,cd_rise_s,em_rise_s,delta_t_s,flags`.
pub fn outcomes_csv(outcomes: &[TrialOutcome]) -> String {
    let mut out = String::from("gas,level,trial,cd_rise_s,em_rise_s,delta_t_s,flags\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.gas,
            o.level,
            o.trial,
            fmt_opt(o.cd_rise),
            fmt_opt(o.em_rise),
            fmt_opt(o.delta_t),
            o.flags,
        ));
    }
    out
}

pub fn write_outcomes_csv(outcomes: &[TrialOutcome], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(outcomes_csv(outcomes).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parse an event table written by [`write_outcomes_csv`].
pub fn read_outcomes_csv(path: &Path) -> Result<Vec<TrialOutcome>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::ingestion(path, format!("cannot open: {e}")))?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::ingestion(path, format!("data row {}: {e}", row + 1)))?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| {
                Error::ingestion(path, format!("data row {}: missing column {i}", row + 1))
            })
        };
        let bad = |what: &str, e: &dyn std::fmt::Display| {
            Error::ingestion(path, format!("data row {}: bad {what}: {e}", row + 1))
        };
        let opt_f64 = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| bad(what, &e))
            }
        };
        out.push(TrialOutcome {
            gas: field(0)?.parse().map_err(|e: Error| bad("gas", &e))?,
            level: field(1)?.parse().map_err(|e| bad("level", &e))?,
            trial: field(2)?.parse().map_err(|e| bad("trial", &e))?,
            cd_rise: opt_f64(field(3)?, "cd_rise_s")?,
            em_rise: opt_f64(field(4)?, "em_rise_s")?,
            delta_t: opt_f64(field(5)?, "delta_t_s")?,
            flags: field(6)?.parse().map_err(|e: Error| bad("flags", &e))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EventFlags;

    fn outcome(gas: Gas, level: u8, trial: u32, delta_t: Option<f64>) -> TrialOutcome {
        let flags = EventFlags {
            no_cd: delta_t.is_none(),
            ..Default::default()
        };
        TrialOutcome {
            gas,
            level,
            trial,
            cd_rise: delta_t.map(|_| 0.03),
            em_rise: delta_t.map(|dt| 0.03 + dt),
            delta_t,
            flags,
        }
    }

    #[test]
    fn aggregate_identical_trials() {
        let outcomes: Vec<_> = (0..20)
            .map(|t| outcome(Gas::Eb, 2, t, Some(0.5)))
            .collect();
        let curves = aggregate(&outcomes);
        assert_eq!(curves.len(), 1);
        let s = &curves[0].levels[1];
        assert_eq!(s.level, 2);
        assert_eq!(s.n_valid, 20);
        assert_eq!(s.mean_dt, Some(0.5));
        assert_eq!(s.std_dt, Some(0.0));
        assert_eq!(s.inv_mean_dt, Some(2.0));
        assert_eq!(s.mean_trial_inv_dt, Some(2.0));
    }

    #[test]
    fn aggregate_counts_discards() {
        let mut outcomes: Vec<_> = (0..19)
            .map(|t| outcome(Gas::TwoH, 1, t, Some(0.8)))
            .collect();
        outcomes.push(outcome(Gas::TwoH, 1, 19, None));
        let curves = aggregate(&outcomes);
        let s = &curves[0].levels[0];
        assert_eq!(s.n_valid, 19);
        assert_eq!(s.n_discarded, 1);
        assert_eq!(s.n_valid + s.n_discarded, 20, "trial count conserved");
    }

    #[test]
    fn aggregate_permutation_invariant() {
        let mut outcomes: Vec<_> = (0..10)
            .map(|t| outcome(Gas::Ia, 3, t, Some(0.1 + 0.01 * t as f64)))
            .collect();
        let forward = aggregate(&outcomes);
        outcomes.reverse();
        let backward = aggregate(&outcomes);
        assert_eq!(forward, backward);
    }

    #[test]
    fn aggregate_empty_cell_is_marked_not_error() {
        let outcomes = vec![outcome(Gas::Eb, 1, 0, None)];
        let curves = aggregate(&outcomes);
        let s = &curves[0].levels[0];
        assert_eq!(s.n_valid, 0);
        assert_eq!(s.n_discarded, 1);
        assert_eq!(s.mean_dt, None);
    }

    #[test]
    fn spearman_strictly_monotone_is_exactly_one() {
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [0.5, 0.9, 1.4, 2.0, 3.1];
        assert_eq!(spearman(&levels, &up).unwrap(), 1.0);
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        assert_eq!(spearman(&levels, &down).unwrap(), -1.0);
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let levels = [1.0, 2.0, 3.0, 4.0, 5.0];
        let dts = [0.9, 0.7, 0.5, 0.4, 0.2]; // decreasing
        let inv: Vec<f64> = dts.iter().map(|v| 1.0 / v).collect(); // increasing
        let r_dt = spearman(&levels, &dts).unwrap();
        let r_inv = spearman(&levels, &inv).unwrap();
        assert_eq!(r_dt, -1.0);
        assert_eq!(r_inv, 1.0, "1/x must flip the sign exactly");
    }

    #[test]
    fn monotonicity_needs_two_levels() {
        let outcomes = vec![outcome(Gas::Eu, 2, 0, Some(0.4))];
        let curves = aggregate(&outcomes);
        assert!(monotonicity(&curves[0]).is_err());
    }

    #[test]
    fn monotonicity_on_aggregated_curve() {
        let mut outcomes = Vec::new();
        for level in 1..=5u8 {
            for trial in 0..3 {
                let dt = 1.0 / (level as f64); // decreasing dt with level
                outcomes.push(outcome(Gas::Eu, level, trial, Some(dt)));
            }
        }
        let curves = aggregate(&outcomes);
        assert_eq!(monotonicity(&curves[0]).unwrap(), 1.0);
    }

    #[test]
    fn csv_has_full_grid_rows() {
        let mut outcomes = Vec::new();
        for gas in Gas::ALL {
            for level in 1..=5u8 {
                outcomes.push(outcome(gas, level, 0, Some(0.5)));
            }
        }
        let curves = aggregate(&outcomes);
        let csv = curves_csv(&curves);
        assert_eq!(csv.lines().count(), 1 + 20, "header plus 4x5 grid");
        assert!(csv.starts_with("gas,level,n_valid,n_discarded,mean_dt_s,std_dt_s,mean_inv_dt_per_s\n"));
    }

    #[test]
    fn csv_empty_cell_has_blank_stats() {
        let outcomes = vec![outcome(Gas::Eb, 2, 0, None)];
        let csv = curves_csv(&aggregate(&outcomes));
        let row = csv.lines().nth(2).unwrap(); // level-2 row
        assert_eq!(row, "EB,2,0,1,,,");
    }

    #[test]
    fn exports_are_deterministic() {
        let outcomes: Vec<_> = (0..5).map(|t| outcome(Gas::Ia, 4, t, Some(0.31))).collect();
        let curves = aggregate(&outcomes);
        assert_eq!(curves_csv(&curves), curves_csv(&curves));
        assert_eq!(curves_svg(&curves), curves_svg(&curves));
        assert!(curves_svg(&curves).starts_with("<svg"));
    }

    #[test]
    fn outcomes_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let outcomes = vec![
            outcome(Gas::Eb, 1, 0, Some(0.123456789012345)),
            outcome(Gas::TwoH, 5, 19, None),
        ];
        write_outcomes_csv(&outcomes, &path).unwrap();
        let back = read_outcomes_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].delta_t, outcomes[0].delta_t);
        assert_eq!(back[1].flags, outcomes[1].flags);
        assert_eq!(back[1].gas, Gas::TwoH);
    }
}
