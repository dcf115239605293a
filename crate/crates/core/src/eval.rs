//! Filter coefficient ε₁ and total variance ε₂ per channel.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{ChannelGroup, RunArtifacts};

/// Truth ranges at or below this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-9;

/// Σ(x̂−x⁺)² / Σ(x^M−x⁺)².
pub fn filter_coefficient(est: &[f64], meas: &[f64], truth: &[f64]) -> Result<f64> {
    if est.is_empty() || est.len() != meas.len() || est.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths {}, {}, {} must be equal and non-zero",
            est.len(),
            meas.len(),
            truth.len()
        )));
    }
    let num: f64 = est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    let den: f64 = meas.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::DegenerateDenominator);
    }
    Ok(num / den)
}

/// Σ(x̂−x⁺)² / S.
pub fn total_variance(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.is_empty() || est.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths {} and {} must be equal and non-zero",
            est.len(),
            truth.len()
        )));
    }
    Ok(est.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / est.len() as f64)
}

/// Reporting group of a metric: the real and imaginary voltage parts are
/// kept apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricGroup {
    E,
    F,
    Pressure,
    Flow,
}

impl MetricGroup {
    pub fn label(&self) -> &'static str {
        match self {
            MetricGroup::E => "e",
            MetricGroup::F => "f",
            MetricGroup::Pressure => "pressure",
            MetricGroup::Flow => "flow",
        }
    }

    fn of(name: &str, group: ChannelGroup) -> Option<Self> {
        match group {
            ChannelGroup::Voltage if name.ends_with(".e") => Some(MetricGroup::E),
            ChannelGroup::Voltage => Some(MetricGroup::F),
            ChannelGroup::Pressure => Some(MetricGroup::Pressure),
            ChannelGroup::Flow => Some(MetricGroup::Flow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    Ok,
    /// Truth constant over the window.
    Degenerate,
    /// Measurement equals truth on every step; ε₁ undefined.
    ZeroDenominator,
}

impl MetricFlag {
    pub fn label(&self) -> &'static str {
        match self {
            MetricFlag::Ok => "",
            MetricFlag::Degenerate => "degenerate",
            MetricFlag::ZeroDenominator => "zero_denominator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub group: MetricGroup,
    pub eps1: Option<f64>,
    pub eps2: f64,
    pub flag: MetricFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: MetricGroup,
    pub channels: usize,
    pub eps1_min: f64,
    pub eps1_max: f64,
    pub eps1_mean: f64,
    pub eps2_min: f64,
    pub eps2_max: f64,
    pub eps2_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub channels: Vec<ChannelMetrics>,
    pub groups: Vec<GroupSummary>,
}

/// Metrics over steps `warmup..S`.
pub fn report(art: &RunArtifacts, warmup: usize) -> Result<MetricsReport> {
    if art.n_steps() <= warmup {
        return Err(Error::Validation(format!(
            "run has {} steps, nothing left after {warmup} warm-up steps",
            art.n_steps()
        )));
    }
    let mut channels = Vec::new();
    for (k, name) in art.channel_names.iter().enumerate() {
        let Some(group) = MetricGroup::of(name, art.groups[k]) else { continue };
        let (t, m, e) = art.series(k);
        let (t, m, e) = (&t[warmup..], &m[warmup..], &e[warmup..]);
        let eps2 = total_variance(e, t)?;
        let range = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
        let (eps1, flag) = match filter_coefficient(e, m, t) {
            Ok(v) if range > DEGENERATE_RANGE => (Some(v), MetricFlag::Ok),
            Ok(v) => (Some(v), MetricFlag::Degenerate),
            Err(Error::DegenerateDenominator) => (None, MetricFlag::ZeroDenominator),
            Err(e) => return Err(e),
        };
        channels.push(ChannelMetrics { channel: name.clone(), group, eps1, eps2, flag });
    }
    let groups = summarize(&channels);
    Ok(MetricsReport { channels, groups })
}

/// Per-group min/max/mean over the unflagged channels.
pub fn summarize(channels: &[ChannelMetrics]) -> Vec<GroupSummary> {
    let mut out = Vec::new();
    for group in [MetricGroup::E, MetricGroup::F, MetricGroup::Pressure, MetricGroup::Flow] {
        let sel: Vec<&ChannelMetrics> =
            channels.iter().filter(|c| c.group == group && c.flag == MetricFlag::Ok).collect();
        if sel.is_empty() {
            continue;
        }
        let e1: Vec<f64> = sel.iter().filter_map(|c| c.eps1).collect();
        let e2: Vec<f64> = sel.iter().map(|c| c.eps2).collect();
        let (e1min, e1max, e1mean) = stats(&e1);
        let (e2min, e2max, e2mean) = stats(&e2);
        out.push(GroupSummary {
            group,
            channels: sel.len(),
            eps1_min: e1min,
            eps1_max: e1max,
            eps1_mean: e1mean,
            eps2_min: e2min,
            eps2_max: e2max,
            eps2_mean: e2mean,
        });
    }
    out
}

fn stats(v: &[f64]) -> (f64, f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max, v.iter().sum::<f64>() / v.len() as f64)
}

/// Channel-wise arithmetic mean of several reports over the same channels.
/// A channel keeps ε₁ only if every report has it; the first report's flag
/// wins unless another run marks it degenerate.
pub fn average(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::Validation("no reports to average".into()))?;
    let n = reports.len() as f64;
    let mut channels = Vec::with_capacity(first.channels.len());
    for (k, c) in first.channels.iter().enumerate() {
        let mut e1 = Some(0.0);
        let mut e2 = 0.0;
        let mut flag = c.flag;
        for r in reports {
            let other = r
                .channels
                .get(k)
                .filter(|o| o.channel == c.channel)
                .ok_or_else(|| Error::DimensionMismatch(format!("channel {} missing from a report", c.channel)))?;
            e1 = e1.zip(other.eps1).map(|(a, b)| a + b);
            e2 += other.eps2;
            if other.flag != MetricFlag::Ok && flag == MetricFlag::Ok {
                flag = other.flag;
            }
        }
        channels.push(ChannelMetrics {
            channel: c.channel.clone(),
            group: c.group,
            eps1: e1.map(|v| v / n),
            eps2: e2 / n,
            flag,
        });
    }
    let groups = summarize(&channels);
    Ok(MetricsReport { channels, groups })
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let io = |e: std::io::Error| Error::io(format!("writing {}", path.display()), e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "channel,group,eps1,eps2,flag").map_err(io)?;
    for c in &report.channels {
        let e1 = c.eps1.map(|v| format!("{v:?}")).unwrap_or_default();
        writeln!(f, "{},{},{},{:?},{}", c.channel, c.group.label(), e1, c.eps2, c.flag.label()).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Human-readable per-group table.
pub fn format_summary(report: &MetricsReport) -> String {
    let mut s = format!(
        "{:<9} {:>4} {:>10} {:>10} {:>10} {:>11} {:>11} {:>11}\n",
        "group", "n", "eps1 min", "eps1 mean", "eps1 max", "eps2 min", "eps2 mean", "eps2 max"
    );
    for g in &report.groups {
        s += &format!(
            "{:<9} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>11.3e} {:>11.3e} {:>11.3e}\n",
            g.group.label(),
            g.channels,
            g.eps1_min,
            g.eps1_mean,
            g.eps1_max,
            g.eps2_min,
            g.eps2_mean,
            g.eps2_max
        );
    }
    let flagged = report.channels.iter().filter(|c| c.flag != MetricFlag::Ok).count();
    if flagged > 0 {
        s += &format!("{flagged} flagged channel(s) excluded from the summary\n");
    }
    s
}

/// Median of the ε₂ values of unflagged channels.
pub fn median_eps2(report: &MetricsReport) -> f64 {
    median(report.channels.iter().filter(|c| c.flag == MetricFlag::Ok).map(|c| c.eps2).collect())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
