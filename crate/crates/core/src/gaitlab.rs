//! Gait-cycle analysis: foot-strike detection, cycle segmentation and
//! normalization, cycle averaging, the experimental-match score and summary
//! metrics.
//!
//! Analysis signals per leg use clinical conventions: `hip` flexion, `knee`
//! flexion and `ankle` dorsiflexion are positive and in degrees, `grf` is the
//! vertical ground reaction force in body weights.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resample points per cycle.
pub const DEFAULT_POINTS: usize = 100;
/// Contact threshold as a fraction of body weight.
pub const CONTACT_THRESHOLD: f64 = 0.05;
/// Minimum time between two strikes of the same foot, s.
pub const DEBOUNCE: f64 = 0.1;

pub const GAIT_SIGNALS: [&str; 4] = ["hip", "knee", "ankle", "grf"];

/// Time series of one leg, in model units (rad, N).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LegSeries {
    pub name: String,
    pub hip: Vec<f64>,
    pub knee: Vec<f64>,
    pub ankle: Vec<f64>,
    pub grf: Vec<f64>,
}

/// Uniformly sampled rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub dt: f64,
    pub body_weight: f64,
    pub legs: Vec<LegSeries>,
    /// Activations per sample.
    pub activations: Vec<Vec<f64>>,
    pub com_x: Vec<f64>,
    pub com_vx: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.com_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.com_x.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.body_weight > 0.0) {
            return Err(Error::InvalidArgument("rollout needs positive dt and body weight".into()));
        }
        let n = self.len();
        let mut lens = vec![self.com_vx.len(), self.activations.len()];
        for l in &self.legs {
            lens.extend([l.hip.len(), l.knee.len(), l.ankle.len(), l.grf.len()]);
        }
        if let Some(&bad) = lens.iter().find(|&&k| k != n) {
            return Err(Error::DimensionMismatch { what: "rollout series", expected: n, got: bad });
        }
        Ok(())
    }

    /// Analysis signals of one leg.
    pub fn leg_signals(&self, leg: usize) -> Vec<(String, Vec<f64>)> {
        let l = &self.legs[leg];
        let deg = 180.0 / std::f64::consts::PI;
        vec![
            ("hip".into(), l.hip.iter().map(|x| x * deg).collect()),
            ("knee".into(), l.knee.iter().map(|x| -x * deg).collect()),
            ("ankle".into(), l.ankle.iter().map(|x| x * deg).collect()),
            ("grf".into(), l.grf.iter().map(|x| x / self.body_weight).collect()),
        ]
    }
}

/// Upward crossings of `threshold`, ignoring crossings within `min_gap`
/// samples of the previous event. A signal that starts above the threshold
/// has no event at sample 0.
pub fn detect_foot_strikes(grf: &[f64], threshold: f64, min_gap: usize) -> Vec<usize> {
    let mut events: Vec<usize> = Vec::new();
    let mut last_up: Option<usize> = None;
    for i in 1..grf.len() {
        if grf[i - 1] <= threshold && grf[i] > threshold {
            // any rise within the window of the previous rise is chatter
            let chatter = last_up.is_some_and(|p| i - p < min_gap);
            last_up = Some(i);
            if chatter {
                continue;
            }
            if events.last().is_none_or(|&e| i - e >= min_gap) {
                events.push(i);
            }
        }
    }
    events
}

/// Strikes of leg `leg` with the default threshold and debounce window.
pub fn leg_strikes(rollout: &Rollout, leg: usize) -> Vec<usize> {
    let gap = (DEBOUNCE / rollout.dt).round() as usize;
    detect_foot_strikes(&rollout.legs[leg].grf, CONTACT_THRESHOLD * rollout.body_weight, gap.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitCycle {
    pub leg: String,
    pub start: usize,
    pub end: usize,
    /// Signal name and its `P` resampled values from 0 % to 100 %.
    pub traces: Vec<(String, Vec<f64>)>,
}

/// Linear interpolation of `x` at fractional sample position `pos`.
fn interp(x: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let f = pos - i as f64;
    x[i] + f * (x[i + 1] - x[i])
}

/// Resamples `x[start..=end]` at `points` equally spaced fractions of the
/// cycle, both ends included.
pub fn resample(x: &[f64], start: usize, end: usize, points: usize) -> Vec<f64> {
    let span = (end - start) as f64;
    (0..points)
        .map(|j| {
            let frac = if points > 1 { j as f64 / (points - 1) as f64 } else { 0.0 };
            interp(x, start as f64 + frac * span)
        })
        .collect()
}

/// One cycle per consecutive strike pair; samples before the first and
/// after the last strike are dropped.
pub fn segment_and_normalize(
    leg: &str,
    signals: &[(String, Vec<f64>)],
    strikes: &[usize],
    points: usize,
) -> Result<Vec<GaitCycle>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least 2 resample points".into()));
    }
    let mut out = Vec::new();
    for w in strikes.windows(2) {
        let (s, e) = (w[0], w[1]);
        if e <= s {
            return Err(Error::InvalidArgument("strike indices must increase".into()));
        }
        let mut traces = Vec::with_capacity(signals.len());
        for (name, x) in signals {
            if e >= x.len() {
                return Err(Error::DimensionMismatch { what: "cycle end", expected: x.len(), got: e + 1 });
            }
            traces.push((name.clone(), resample(x, s, e, points)));
        }
        out.push(GaitCycle { leg: leg.to_string(), start: s, end: e, traces });
    }
    Ok(out)
}

/// All cycles of every leg of a rollout.
pub fn rollout_cycles(rollout: &Rollout, points: usize) -> Result<Vec<GaitCycle>> {
    rollout.validate()?;
    let mut all = Vec::new();
    for leg in 0..rollout.legs.len() {
        let strikes = leg_strikes(rollout, leg);
        all.extend(segment_and_normalize(
            &rollout.legs[leg].name,
            &rollout.leg_signals(leg),
            &strikes,
            points,
        )?);
    }
    Ok(all)
}

pub type MeanTrace = BTreeMap<String, Vec<f64>>;

/// Pointwise mean over cycles, each cycle weighted equally.
pub fn average_cycles(cycles: &[GaitCycle]) -> Result<MeanTrace> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::InvalidArgument("no gait cycles to average".into()))?;
    let mut acc: MeanTrace = first.traces.iter().map(|(n, t)| (n.clone(), vec![0.0; t.len()])).collect();
    for c in cycles {
        if c.traces.len() != acc.len() {
            return Err(Error::DimensionMismatch { what: "cycle signals", expected: acc.len(), got: c.traces.len() });
        }
        for (name, t) in &c.traces {
            let a = acc.get_mut(name).ok_or_else(|| Error::MissingSignal(name.clone()))?;
            if a.len() != t.len() {
                return Err(Error::DimensionMismatch { what: "cycle points", expected: a.len(), got: t.len() });
            }
            a.iter_mut().zip(t).for_each(|(a, v)| *a += v);
        }
    }
    let n = cycles.len() as f64;
    acc.values_mut().for_each(|t| t.iter_mut().for_each(|v| *v /= n));
    Ok(acc)
}

/// Mean and standard deviation over the gait cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceBand {
    pub signals: BTreeMap<String, Band>,
}

#[derive(Debug, Deserialize, Serialize)]
struct BandRow {
    signal: String,
    percent: f64,
    mean: f64,
    std: f64,
}

impl ReferenceBand {
    pub fn points(&self) -> Option<usize> {
        self.signals.values().next().map(|b| b.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.points().unwrap_or(0);
        for (name, b) in &self.signals {
            if b.mean.len() != p || b.std.len() != p {
                return Err(Error::DimensionMismatch { what: "reference band points", expected: p, got: b.mean.len() });
            }
            if b.std.iter().chain(&b.mean).any(|v| !v.is_finite()) || b.std.iter().any(|&s| s < 0.0) {
                return Err(Error::Parse(format!("reference band `{name}` has invalid values")));
            }
        }
        Ok(())
    }

    /// Reads `signal,percent,mean,std` rows; rows are ordered by percent
    /// within each signal.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
        let mut rows: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
        for rec in rdr.deserialize::<BandRow>() {
            let row = rec.map_err(|e| Error::Parse(format!("reference band: {e}")))?;
            rows.entry(row.signal).or_default().push((row.percent, row.mean, row.std));
        }
        let signals = rows
            .into_iter()
            .map(|(name, mut v)| {
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                let band = Band {
                    mean: v.iter().map(|r| r.1).collect(),
                    std: v.iter().map(|r| r.2).collect(),
                };
                (name, band)
            })
            .collect();
        let band = ReferenceBand { signals };
        band.validate()?;
        Ok(band)
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (name, b) in &self.signals {
            let p = b.mean.len();
            for j in 0..p {
                let percent = if p > 1 { 100.0 * j as f64 / (p - 1) as f64 } else { 0.0 };
                wtr.serialize(BandRow { signal: name.clone(), percent, mean: b.mean[j], std: b.std[j] })
                    .map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("reference band", e))
    }
}

/// Fraction of points where `|trace - mean| <= std`.
pub fn experimental_match(trace: &[f64], band: &Band) -> Result<f64> {
    if trace.len() != band.mean.len() || band.std.len() != band.mean.len() {
        return Err(Error::DimensionMismatch { what: "match points", expected: band.mean.len(), got: trace.len() });
    }
    if trace.is_empty() {
        return Ok(0.0);
    }
    let inside = trace
        .iter()
        .zip(&band.mean)
        .zip(&band.std)
        .filter(|((t, m), s)| (*t - *m).abs() <= **s)
        .count();
    Ok(inside as f64 / trace.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchReport {
    /// Match fraction per reference signal.
    pub per_signal: BTreeMap<String, f64>,
    /// Mean over signals; absent without cycles.
    pub aggregate: Option<f64>,
    pub avg_effort: f64,
    pub distance: f64,
    pub cycles: usize,
    /// Set when the rollout(s) contained no complete gait cycle.
    pub note: Option<String>,
}

impl MatchReport {
    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Parse(e.to_string());
        wtr.write_record(["metric", "value"]).map_err(err)?;
        for (k, v) in &self.per_signal {
            wtr.write_record([format!("match_{k}"), v.to_string()]).map_err(err)?;
        }
        let agg = self.aggregate.map(|v| v.to_string()).unwrap_or_default();
        wtr.write_record(["exp_match".to_string(), agg]).map_err(err)?;
        wtr.write_record(["avg_effort".to_string(), self.avg_effort.to_string()]).map_err(err)?;
        wtr.write_record(["distance".to_string(), self.distance.to_string()]).map_err(err)?;
        wtr.write_record(["cycles".to_string(), self.cycles.to_string()]).map_err(err)?;
        wtr.flush().map_err(|e| Error::io("match report", e))
    }
}

/// Scores a mean trace against every signal of the band.
pub fn match_against(mean: &MeanTrace, band: &ReferenceBand) -> Result<BTreeMap<String, f64>> {
    band.signals
        .iter()
        .map(|(name, b)| {
            let t = mean.get(name).ok_or_else(|| Error::MissingSignal(name.clone()))?;
            Ok((name.clone(), experimental_match(t, b)?))
        })
        .collect()
}

/// `(avg_effort, distance)`: mean of `a^3` over time and muscles, and the
/// COM displacement from the first to the last sample.
pub fn summary_metrics(rollout: &Rollout) -> Result<(f64, f64)> {
    if rollout.is_empty() {
        return Err(Error::InvalidArgument("empty rollout".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for a in &rollout.activations {
        sum += a.iter().map(|x| x * x * x).sum::<f64>();
        n += a.len();
    }
    let effort = if n > 0 { sum / n as f64 } else { 0.0 };
    let distance = rollout.com_x[rollout.len() - 1] - rollout.com_x[0];
    Ok((effort, distance))
}

/// Pools the cycles of several rollouts (each cycle weighted equally) and
/// scores the pooled mean. Effort and distance are averaged over rollouts.
pub fn analyze(rollouts: &[Rollout], band: Option<&ReferenceBand>, points: usize) -> Result<(MatchReport, Option<MeanTrace>)> {
    if rollouts.is_empty() {
        return Err(Error::InvalidArgument("no rollouts to analyze".into()));
    }
    let mut cycles = Vec::new();
    let (mut effort, mut distance) = (0.0, 0.0);
    for r in rollouts {
        cycles.extend(rollout_cycles(r, points)?);
        let (e, d) = summary_metrics(r)?;
        effort += e;
        distance += d;
    }
    let k = rollouts.len() as f64;
    let mut report = MatchReport {
        avg_effort: effort / k,
        distance: distance / k,
        cycles: cycles.len(),
        ..Default::default()
    };
    if cycles.is_empty() {
        report.note = Some("no cycles".into());
        return Ok((report, None));
    }
    let mean = average_cycles(&cycles)?;
    if let Some(band) = band {
        if band.points() != Some(points) && !band.signals.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "reference band points",
                expected: points,
                got: band.points().unwrap_or(0),
            });
        }
        report.per_signal = match_against(&mean, band)?;
        if !report.per_signal.is_empty() {
            report.aggregate = Some(report.per_signal.values().sum::<f64>() / report.per_signal.len() as f64);
        }
    }
    Ok((report, Some(mean)))
}

/// Writes mean traces as `percent,<signal>...` CSV.
pub fn mean_trace_csv<W: Write>(mean: &MeanTrace, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    let mut header = vec!["percent".to_string()];
    header.extend(mean.keys().cloned());
    wtr.write_record(&header).map_err(err)?;
    let p = mean.values().next().map_or(0, |v| v.len());
    for j in 0..p {
        let percent = if p > 1 { 100.0 * j as f64 / (p - 1) as f64 } else { 0.0 };
        let mut row = vec![percent.to_string()];
        row.extend(mean.values().map(|v| v[j].to_string()));
        wtr.write_record(&row).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("mean trace", e))
}
