//! Data-effectiveness scoring and budgeting arithmetic.
//!
//! `DEL = mIoU · exp(-α·R)` and `NormDEL = 1 / (1 + exp(-DEL))`, with mIoU
//! and the retention ratio R as fractions. Reports print percentages.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BASE_EPOCHS: u64 = 200;

/// Search interval upper bound for [`fit_alpha`].
pub const ALPHA_MAX: f64 = 100.0;

/// A retention ratio in `[0, 1]` held as an exact fraction, so that "33%"
/// can be given as `1/3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionRatio(Ratio<u64>);

impl RetentionRatio {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::Domain("ratio denominator is zero".into()));
        }
        if numer > denom {
            return Err(Error::Domain(format!("ratio {numer}/{denom} exceeds 1")));
        }
        Ok(RetentionRatio(Ratio::new(numer, denom)))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }
}

impl fmt::Display for RetentionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl FromStr for RetentionRatio {
    type Err = Error;

    /// Accepts `a/b`, a plain decimal such as `0.05`, or an integer.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Domain(format!("cannot parse ratio {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse::<u64>().map_err(|_| bad())?;
            let b = b.trim().parse::<u64>().map_err(|_| bad())?;
            return Self::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty())
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let scale = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let numer = int
            .checked_mul(scale)
            .and_then(|x| x.checked_add(frac))
            .ok_or_else(bad)?;
        Self::new(numer, scale)
    }
}

impl Serialize for RetentionRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RetentionRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelScore {
    pub miou: f64,
    pub retention_ratio: f64,
    pub alpha: f64,
    pub del_value: f64,
    pub norm_del: f64,
}

/// JSON form of a [`DelScore`], in percent where the tables use percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub miou_percent: f64,
    pub ratio: f64,
    pub alpha: f64,
    pub del: f64,
    pub normdel_percent: f64,
}

impl DelScore {
    pub fn norm_del_percent(&self) -> f64 {
        self.norm_del * 100.0
    }

    pub fn report(&self) -> ScoreReport {
        ScoreReport {
            miou_percent: self.miou * 100.0,
            ratio: self.retention_ratio,
            alpha: self.alpha,
            del: self.del_value,
            normdel_percent: self.norm_del_percent(),
        }
    }
}

fn norm_del(miou: f64, ratio: f64, alpha: f64) -> (f64, f64) {
    let del = miou * (-alpha * ratio).exp();
    (del, 1.0 / (1.0 + (-del).exp()))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} must be in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be positive and finite, got {alpha}")));
    }
    Ok(())
}

/// Scores a downstream mIoU (fraction) obtained with retention ratio R.
pub fn del_score(miou: f64, ratio: f64, alpha: f64) -> Result<DelScore> {
    check_unit("miou", miou)?;
    check_unit("ratio", ratio)?;
    check_alpha(alpha)?;
    let (del_value, norm_del) = norm_del(miou, ratio, alpha);
    Ok(DelScore {
        miou,
        retention_ratio: ratio,
        alpha,
        del_value,
        norm_del,
    })
}

/// An observed (mIoU, R, NormDEL%) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaObservation {
    pub miou: f64,
    pub ratio: f64,
    pub norm_del_percent: f64,
}

fn sse(obs: &[AlphaObservation], alpha: f64) -> f64 {
    obs.iter()
        .map(|o| {
            let (_, nd) = norm_del(o.miou, o.ratio, alpha);
            (nd * 100.0 - o.norm_del_percent).powi(2)
        })
        .sum()
}

/// Least-squares α over `(0, ALPHA_MAX]`: a log-spaced grid scan to bracket
/// the global minimum, then golden-section refinement.
pub fn fit_alpha(observations: &[AlphaObservation]) -> Result<f64> {
    for o in observations {
        check_unit("miou", o.miou)?;
        check_unit("ratio", o.ratio)?;
        if !o.norm_del_percent.is_finite() {
            return Err(Error::Domain("non-finite NormDEL observation".into()));
        }
    }
    if !observations.iter().any(|o| o.ratio > 0.0 && o.miou > 0.0) {
        return Err(Error::Fit(
            "need at least one observation with ratio > 0 and miou > 0".into(),
        ));
    }

    const GRID: usize = 4000;
    let lo_exp = (1e-4f64).ln();
    let hi_exp = ALPHA_MAX.ln();
    let grid: Vec<f64> = (0..=GRID)
        .map(|i| (lo_exp + (hi_exp - lo_exp) * i as f64 / GRID as f64).exp())
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| sse(observations, *a.1).total_cmp(&sse(observations, *b.1)))
        .map(|(i, _)| i)
        .unwrap();
    let mut a = if best == 0 { f64::MIN_POSITIVE } else { grid[best - 1] };
    let mut b = grid[(best + 1).min(GRID)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse(observations, c), sse(observations, d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * b.max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse(observations, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse(observations, d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Epochs that give a reduced dataset the same total sample count as
/// `base_epochs` over the full one: `round(base_epochs / ratio)`.
pub fn epochs_for_ratio(base_epochs: u64, ratio: RetentionRatio) -> Result<u64> {
    if base_epochs == 0 {
        return Err(Error::Domain("base_epochs must be >= 1".into()));
    }
    if ratio.numer() == 0 {
        return Err(Error::Domain("ratio must be > 0".into()));
    }
    let (p, q) = (u128::from(ratio.numer()), u128::from(ratio.denom()));
    let epochs = (2 * u128::from(base_epochs) * q + p) / (2 * p);
    u64::try_from(epochs).map_err(|_| Error::Range(format!("{epochs} epochs overflow u64")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeBudget {
    pub base_epochs: u64,
    pub ratio: RetentionRatio,
    pub epochs: u64,
}

pub fn compute_budget(base_epochs: u64, ratio: RetentionRatio) -> Result<ComputeBudget> {
    Ok(ComputeBudget {
        base_epochs,
        ratio,
        epochs: epochs_for_ratio(base_epochs, ratio)?,
    })
}

/// Hours to process `frames` at `throughput_fps` frames per second.
pub fn gpu_hours(frames: u64, throughput_fps: f64) -> Result<f64> {
    if !(throughput_fps > 0.0 && throughput_fps.is_finite()) {
        return Err(Error::Domain(format!("throughput must be positive, got {throughput_fps}")));
    }
    Ok(frames as f64 / throughput_fps / 3600.0)
}

/// Hours no longer spent when only `retained` of the data is processed.
pub fn hours_saved(total_hours: f64, retained: RetentionRatio) -> f64 {
    total_hours * (retained.denom() - retained.numer()) as f64 / retained.denom() as f64
}

/// Raw uncompressed size: `frames · width · height · bytes_per_pixel`.
pub fn storage_bytes(frames: u64, width: u64, height: u64, bytes_per_pixel: u64) -> Result<u64> {
    if frames == 0 || width == 0 || height == 0 || bytes_per_pixel == 0 {
        return Err(Error::Domain("storage_bytes arguments must all be positive".into()));
    }
    let total = [frames, width, height, bytes_per_pixel]
        .iter()
        .try_fold(1u128, |acc, &x| acc.checked_mul(u128::from(x)));
    match total {
        Some(t) if t <= i64::MAX as u128 => Ok(t as u64),
        _ => Err(Error::Range(format!(
            "storage size {frames}x{width}x{height}x{bytes_per_pixel} exceeds 2^63 bytes"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub frames: u64,
    pub throughput_fps: f64,
    pub width: u64,
    pub height: u64,
    pub bytes_per_pixel: u64,
    pub raw_bytes_per_frame: u64,
    pub total_gpu_hours: f64,
    pub retained_ratio: RetentionRatio,
    pub gpu_hours_saved: f64,
    pub bytes_total: u64,
    pub bytes_saved: u64,
}

pub fn savings(
    frames: u64,
    throughput_fps: f64,
    width: u64,
    height: u64,
    bytes_per_pixel: u64,
    retained: RetentionRatio,
) -> Result<SavingsReport> {
    let total_gpu_hours = gpu_hours(frames, throughput_fps)?;
    let raw_bytes_per_frame = storage_bytes(1, width, height, bytes_per_pixel)?;
    let bytes_total = storage_bytes(frames, width, height, bytes_per_pixel)?;
    let dropped = u128::from(retained.denom() - retained.numer());
    let bytes_saved = (u128::from(bytes_total) * dropped / u128::from(retained.denom())) as u64;
    Ok(SavingsReport {
        frames,
        throughput_fps,
        width,
        height,
        bytes_per_pixel,
        raw_bytes_per_frame,
        total_gpu_hours,
        retained_ratio: retained,
        gpu_hours_saved: hours_saved(total_gpu_hours, retained),
        bytes_total,
        bytes_saved,
    })
}
