//! Cleaning and normalization of sensor series.
//!
//! Standard deviations use the population (1/n) formula everywhere. Quartiles
//! interpolate linearly between order statistics at zero-based positions
//! `0.25·(n−1)` and `0.75·(n−1)`.

use serde::{Deserialize, Serialize};

/// Default z-score cutoff for outlier flags.
pub const DEFAULT_ZSCORE_THRESHOLD: f64 = 3.0;
/// Boxplot fence multiplier.
pub const IQR_FENCE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("window has {len} points, at least {min} required")]
    WindowTooShort { len: usize, min: usize },
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("values and ticks differ in length ({values} vs {ticks})")]
    LengthMismatch { values: usize, ticks: usize },
    #[error("ticks are not strictly increasing at index {0}")]
    TicksNotIncreasing(usize),
    #[error("flags cover {flags} points but window has {len}")]
    FlagsMisaligned { flags: usize, len: usize },
    #[error("every point is flagged; nothing to anchor a repair")]
    AllFlagged,
    #[error("degenerate statistics: {0}")]
    Degenerate(&'static str),
}

/// An ordered run of samples from one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub channel: String,
    values: Vec<f64>,
    ticks: Vec<u64>,
}

impl SeriesWindow {
    pub fn new(
        channel: impl Into<String>,
        values: Vec<f64>,
        ticks: Vec<u64>,
    ) -> Result<Self, PipelineError> {
        if values.len() != ticks.len() {
            return Err(PipelineError::LengthMismatch {
                values: values.len(),
                ticks: ticks.len(),
            });
        }
        if let Some(i) = ticks.windows(2).position(|w| w[1] <= w[0]) {
            return Err(PipelineError::TicksNotIncreasing(i + 1));
        }
        Ok(Self {
            channel: channel.into(),
            values,
            ticks,
        })
    }

    /// Window with ticks `0..n`.
    pub fn from_values(channel: impl Into<String>, values: Vec<f64>) -> Self {
        let ticks = (0..values.len() as u64).collect();
        Self {
            channel: channel.into(),
            values,
            ticks,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ticks(&self) -> &[u64] {
        &self.ticks
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMethod {
    Zscore,
    Iqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlags {
    pub flags: Vec<bool>,
    pub method: OutlierMethod,
    pub threshold_used: f64,
}

impl OutlierFlags {
    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Flags points whose absolute standard score exceeds `threshold`.
/// A constant window yields no flags.
pub fn detect_outliers_zscore(
    w: &SeriesWindow,
    threshold: f64,
) -> Result<OutlierFlags, PipelineError> {
    if w.len() < 2 {
        return Err(PipelineError::WindowTooShort {
            len: w.len(),
            min: 2,
        });
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(PipelineError::BadThreshold(threshold));
    }
    let m = mean(&w.values);
    let sd = population_sd(&w.values);
    let flags = if sd == 0.0 {
        vec![false; w.len()]
    } else {
        w.values
            .iter()
            .map(|v| ((v - m) / sd).abs() > threshold)
            .collect()
    };
    Ok(OutlierFlags {
        flags,
        method: OutlierMethod::Zscore,
        threshold_used: threshold,
    })
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Boxplot fences `(Q1 − 1.5·IQR, Q3 + 1.5·IQR)`.
pub fn iqr_fences(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    (q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr)
}

/// Flags points outside the boxplot fences.
pub fn detect_outliers_iqr(w: &SeriesWindow) -> Result<OutlierFlags, PipelineError> {
    if w.len() < 4 {
        return Err(PipelineError::WindowTooShort {
            len: w.len(),
            min: 4,
        });
    }
    let (lower, upper) = iqr_fences(&w.values);
    Ok(OutlierFlags {
        flags: w.values.iter().map(|&v| v > upper || v < lower).collect(),
        method: OutlierMethod::Iqr,
        threshold_used: IQR_FENCE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairPolicy {
    #[default]
    Interpolate,
    HoldLast,
    Drop,
}

/// Replaces or removes flagged points.
///
/// `Interpolate` fills each flagged run linearly (in tick space) between its
/// nearest unflagged neighbours; runs touching an edge copy the nearest
/// unflagged value. `HoldLast` copies the previous unflagged value, falling
/// back to the next one for a leading run. `Drop` removes flagged points.
pub fn repair(
    w: &SeriesWindow,
    flags: &OutlierFlags,
    policy: RepairPolicy,
) -> Result<SeriesWindow, PipelineError> {
    if flags.flags.len() != w.len() {
        return Err(PipelineError::FlagsMisaligned {
            flags: flags.flags.len(),
            len: w.len(),
        });
    }
    let f = &flags.flags;
    if !f.iter().any(|x| *x) {
        return Ok(w.clone());
    }
    if f.iter().all(|x| *x) {
        return Err(PipelineError::AllFlagged);
    }

    let mut prev = vec![None; w.len()];
    let mut last = None;
    for i in 0..w.len() {
        prev[i] = last;
        if !f[i] {
            last = Some(i);
        }
    }
    let mut next = vec![None; w.len()];
    let mut upcoming = None;
    for i in (0..w.len()).rev() {
        next[i] = upcoming;
        if !f[i] {
            upcoming = Some(i);
        }
    }

    let v = &w.values;
    match policy {
        RepairPolicy::Drop => {
            let (values, ticks) = v
                .iter()
                .zip(&w.ticks)
                .zip(f)
                .filter(|(_, flagged)| !**flagged)
                .map(|((val, t), _)| (*val, *t))
                .unzip();
            Ok(SeriesWindow {
                channel: w.channel.clone(),
                values,
                ticks,
            })
        }
        RepairPolicy::HoldLast => {
            let values = (0..v.len())
                .map(|i| {
                    if !f[i] {
                        v[i]
                    } else {
                        v[prev[i].or(next[i]).expect("at least one unflagged point")]
                    }
                })
                .collect();
            Ok(SeriesWindow {
                values,
                ..w.clone()
            })
        }
        RepairPolicy::Interpolate => {
            let values = (0..v.len())
                .map(|i| {
                    if !f[i] {
                        return v[i];
                    }
                    match (prev[i], next[i]) {
                        (Some(a), Some(b)) => {
                            let (ta, tb, ti) =
                                (w.ticks[a] as f64, w.ticks[b] as f64, w.ticks[i] as f64);
                            v[a] + (v[b] - v[a]) * (ti - ta) / (tb - ta)
                        }
                        (Some(a), None) => v[a],
                        (None, Some(b)) => v[b],
                        (None, None) => unreachable!("checked not all flagged"),
                    }
                })
                .collect();
            Ok(SeriesWindow {
                values,
                ..w.clone()
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Minmax,
    Zscore,
}

/// Fitted normalization: `(a, b)` is `(x_min, x_max)` for min-max or
/// `(μ, σ)` for z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub kind: NormKind,
    pub a: f64,
    pub b: f64,
}

impl NormParams {
    pub fn new(kind: NormKind, a: f64, b: f64) -> Result<Self, PipelineError> {
        let ok = a.is_finite()
            && b.is_finite()
            && match kind {
                NormKind::Minmax => b > a,
                NormKind::Zscore => b > 0.0,
            };
        if ok {
            Ok(Self { kind, a, b })
        } else {
            Err(PipelineError::Degenerate(match kind {
                NormKind::Minmax => "min-max requires x_max > x_min",
                NormKind::Zscore => "z-score requires σ > 0",
            }))
        }
    }
}

pub fn fit_norm(w: &SeriesWindow, kind: NormKind) -> Result<NormParams, PipelineError> {
    fit_norm_values(&w.values, kind)
}

pub fn fit_norm_values(values: &[f64], kind: NormKind) -> Result<NormParams, PipelineError> {
    if values.len() < 2 {
        return Err(PipelineError::WindowTooShort {
            len: values.len(),
            min: 2,
        });
    }
    match kind {
        NormKind::Minmax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                NormParams::new(kind, lo, hi)
            } else {
                Err(PipelineError::Degenerate("constant window has no range"))
            }
        }
        NormKind::Zscore => {
            let sd = population_sd(values);
            if sd > 0.0 {
                NormParams::new(kind, mean(values), sd)
            } else {
                Err(PipelineError::Degenerate(
                    "constant window has zero deviation",
                ))
            }
        }
    }
}

/// Applies the fitted transform. Min-max output is not clamped.
pub fn apply_norm(x: f64, p: &NormParams) -> f64 {
    match p.kind {
        NormKind::Minmax => (x - p.a) / (p.b - p.a),
        NormKind::Zscore => (x - p.a) / p.b,
    }
}

/// Inverse of [`apply_norm`].
pub fn invert_norm(y: f64, p: &NormParams) -> f64 {
    match p.kind {
        NormKind::Minmax => p.a + y * (p.b - p.a),
        NormKind::Zscore => p.a + y * p.b,
    }
}
