//! Multi-slice channelized Hotelling observer and figures of merit.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::Volume;
use crate::stack::Label;

/// Laguerre polynomial L_n(x) by the three-term recurrence.
pub fn laguerre(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 - x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = ((2 * k + 1) as f64 - x) * cur - k as f64 * prev;
        prev = cur;
        cur = next / (k + 1) as f64;
    }
    cur
}

/// Laguerre–Gauss channel matrix for one slice geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub n_channels: usize,
    pub width: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, one row of nx·ny per channel.
    pub matrix: Vec<f64>,
}

impl ChannelSet {
    pub fn row(&self, j: usize) -> &[f64] {
        let plane = self.nx * self.ny;
        &self.matrix[j * plane..(j + 1) * plane]
    }
}

pub fn lg_channels(n_channels: usize, width: f64, nx: usize, ny: usize) -> Result<ChannelSet> {
    if n_channels == 0 || !(width > 0.0) || nx == 0 || ny == 0 {
        return Err(Error::InvalidParam(
            "channels need J >= 1, a > 0 and a non-empty slice".into(),
        ));
    }
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    let a2 = width * width;
    let norm = std::f64::consts::SQRT_2 / width;
    let mut matrix = Vec::with_capacity(n_channels * nx * ny);
    for j in 0..n_channels {
        for y in 0..ny {
            for x in 0..nx {
                let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let t = 2.0 * std::f64::consts::PI * r2 / a2;
                matrix.push(norm * (-t / 2.0).exp() * laguerre(j, t));
            }
        }
    }
    Ok(ChannelSet {
        n_channels,
        width,
        nx,
        ny,
        matrix,
    })
}

/// Per-slice channel responses, concatenated slice-major (length J·nz).
pub fn channelize(volume: &Volume, channels: &ChannelSet) -> Result<Vec<f64>> {
    if volume.dims.nx != channels.nx || volume.dims.ny != channels.ny {
        return Err(Error::DimMismatch {
            expected: format!("{}x{} slices", channels.nx, channels.ny),
            actual: format!("{}x{} slices", volume.dims.nx, volume.dims.ny),
        });
    }
    let mut features = Vec::with_capacity(channels.n_channels * volume.dims.nz);
    for z in 0..volume.dims.nz {
        let slice = volume.slice(z);
        for j in 0..channels.n_channels {
            features.push(channels.row(j).iter().zip(slice).map(|(c, p)| c * p).sum());
        }
    }
    Ok(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotellingTemplate {
    pub weights: Vec<f64>,
    pub mean_diff: Vec<f64>,
    pub lambda: f64,
    pub n_healthy: usize,
    pub n_lesion: usize,
}

fn class_stats(rows: &[&Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(dim);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut scatter = DMatrix::zeros(dim, dim);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        scatter.ger(1.0, &d, &d, 1.0);
    }
    (mean, scatter)
}

/// Shrinkage-regularized Hotelling template Σ_λ⁻¹·(μ_lesion − μ_healthy).
pub fn train_mscho(features: &[Vec<f64>], labels: &[Label], lambda: f64) -> Result<HotellingTemplate> {
    if features.len() != labels.len() {
        return Err(Error::InvalidParam(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParam(format!("shrinkage lambda must lie in [0, 1], got {lambda}")));
    }
    let dim = features.first().map(Vec::len).unwrap_or(0);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidParam("feature vectors must share a non-zero length".into()));
    }
    let healthy: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &l)| l == Label::Healthy).map(|(f, _)| f).collect();
    let lesion: Vec<&Vec<f64>> = features.iter().zip(labels).filter(|(_, &l)| l == Label::Lesion).map(|(f, _)| f).collect();
    if healthy.len() < 2 || lesion.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 samples per class, got {} healthy and {} lesion",
            healthy.len(),
            lesion.len()
        )));
    }
    let (mu_h, scatter_h) = class_stats(&healthy, dim);
    let (mu_l, scatter_l) = class_stats(&lesion, dim);
    let dof = (healthy.len() + lesion.len() - 2) as f64;
    let pooled = (scatter_h + scatter_l) / dof;
    let diag = DMatrix::from_diagonal(&pooled.diagonal());
    let sigma = pooled * (1.0 - lambda) + diag * lambda;
    let delta = mu_l - mu_h;
    let chol = sigma.cholesky().ok_or(Error::SingularCovariance)?;
    let weights = chol.solve(&delta);
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok(HotellingTemplate {
        weights: weights.as_slice().to_vec(),
        mean_diff: delta.as_slice().to_vec(),
        lambda,
        n_healthy: healthy.len(),
        n_lesion: lesion.len(),
    })
}

pub fn score(template: &HotellingTemplate, features: &[f64]) -> Result<f64> {
    if features.len() != template.weights.len() {
        return Err(Error::DimMismatch {
            expected: format!("{} features", template.weights.len()),
            actual: format!("{} features", features.len()),
        });
    }
    Ok(template.weights.iter().zip(features).map(|(w, f)| w * f).sum())
}

/// AUC with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AucEstimate {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 2000,
            seed: 7,
        }
    }
}

/// Scores of both classes merged and sorted, grouped into tie blocks.
struct RankedScores {
    /// (class is lesion, original index) per position in sorted order
    order: Vec<(bool, usize)>,
    /// start offsets of tie groups, plus a final sentinel
    groups: Vec<usize>,
    n_healthy: usize,
    n_lesion: usize,
}

impl RankedScores {
    fn new(healthy: &[f64], lesion: &[f64]) -> Result<Self> {
        if healthy.is_empty() || lesion.is_empty() {
            return Err(Error::InvalidParam(format!(
                "AUC needs both classes, got {} healthy and {} lesion scores",
                healthy.len(),
                lesion.len()
            )));
        }
        if healthy.iter().chain(lesion).any(|s| !s.is_finite()) {
            return Err(Error::InvalidParam("AUC scores must be finite".into()));
        }
        let mut all: Vec<(f64, bool, usize)> = healthy
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, false, i))
            .chain(lesion.iter().enumerate().map(|(i, &s)| (s, true, i)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut groups = vec![0];
        for i in 1..all.len() {
            if all[i].0 != all[i - 1].0 {
                groups.push(i);
            }
        }
        groups.push(all.len());
        Ok(RankedScores {
            order: all.iter().map(|&(_, l, i)| (l, i)).collect(),
            groups,
            n_healthy: healthy.len(),
            n_lesion: lesion.len(),
        })
    }

    /// Mann–Whitney AUC with per-sample multiplicities (all ones for the
    /// plain estimate).
    fn weighted_auc(&self, weight_h: &[u32], weight_l: &[u32]) -> f64 {
        let (mut below_h, mut u) = (0.0f64, 0.0f64);
        let (mut total_h, mut total_l) = (0.0f64, 0.0f64);
        for g in self.groups.windows(2) {
            let (mut gh, mut gl) = (0.0, 0.0);
            for &(is_lesion, i) in &self.order[g[0]..g[1]] {
                if is_lesion {
                    gl += weight_l[i] as f64;
                } else {
                    gh += weight_h[i] as f64;
                }
            }
            u += gl * (below_h + 0.5 * gh);
            below_h += gh;
            total_h += gh;
            total_l += gl;
        }
        u / (total_h * total_l)
    }
}

/// Mann–Whitney AUC; ties count one half.
pub fn auc(healthy: &[f64], lesion: &[f64]) -> Result<f64> {
    let ranked = RankedScores::new(healthy, lesion)?;
    Ok(ranked.weighted_auc(&vec![1; ranked.n_healthy], &vec![1; ranked.n_lesion]))
}

/// AUC plus a 95% percentile interval from a class-stratified bootstrap.
pub fn auc_with_ci(healthy: &[f64], lesion: &[f64], bootstrap: &BootstrapConfig) -> Result<AucEstimate> {
    use rand::Rng;
    let ranked = RankedScores::new(healthy, lesion)?;
    let (nh, nl) = (ranked.n_healthy, ranked.n_lesion);
    let point = ranked.weighted_auc(&vec![1; nh], &vec![1; nl]);
    if bootstrap.resamples == 0 {
        return Ok(AucEstimate {
            auc: point,
            ci_low: point,
            ci_high: point,
        });
    }
    let mut r = rng::stream(bootstrap.seed);
    let mut wh = vec![0u32; nh];
    let mut wl = vec![0u32; nl];
    let mut samples = Vec::with_capacity(bootstrap.resamples);
    for _ in 0..bootstrap.resamples {
        wh.iter_mut().for_each(|w| *w = 0);
        wl.iter_mut().for_each(|w| *w = 0);
        for _ in 0..nh {
            wh[r.random_range(0..nh)] += 1;
        }
        for _ in 0..nl {
            wl[r.random_range(0..nl)] += 1;
        }
        samples.push(ranked.weighted_auc(&wh, &wl));
    }
    samples.sort_by(f64::total_cmp);
    Ok(AucEstimate {
        auc: point,
        ci_low: percentile(&samples, 0.025),
        ci_high: percentile(&samples, 0.975),
    })
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One observer decision, human (integer rating 0..=3) or numerical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub stack_id: String,
    pub label: Label,
    pub complexity: u8,
    pub score: f64,
    pub observer_id: String,
    #[serde(default)]
    pub presentations: u32,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl ScoreRecord {
    /// True for a four-point rating (0, 1, 2 or 3).
    pub fn is_rating(&self) -> bool {
        self.score.fract() == 0.0 && (0.0..=3.0).contains(&self.score)
    }
}

/// One JSONL line (with trailing newline) for a score record.
pub fn score_log_line(record: &ScoreRecord) -> String {
    let mut line = serde_json::to_string(record).expect("score record serializes");
    line.push('\n');
    line
}

/// Parse a JSONL score log. Blank lines are skipped.
pub fn parse_score_log(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord = serde_json::from_str(line)
            .map_err(|e| Error::InvalidParam(format!("score log line {}: {e}", n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_score_log(path: &std::path::Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_score_log(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Fraction of lesion stacks rated 2 or 3, per complexity level.
pub fn percent_correct(records: &[ScoreRecord]) -> Result<BTreeMap<u8, f64>> {
    if let Some(bad) = records.iter().find(|r| !r.is_rating()) {
        return Err(Error::InvalidParam(format!(
            "percent correct needs ratings in {{0,1,2,3}}, stack {} has {}",
            bad.stack_id, bad.score
        )));
    }
    let levels: BTreeSet<u8> = records.iter().map(|r| r.complexity).collect();
    let mut out = BTreeMap::new();
    for level in levels {
        let lesion: Vec<&ScoreRecord> = records
            .iter()
            .filter(|r| r.complexity == level && r.label == Label::Lesion)
            .collect();
        if lesion.is_empty() {
            log::warn!("complexity {level}: no lesion records, level omitted");
            continue;
        }
        let hits = lesion.iter().filter(|r| r.score >= 2.0).count();
        out.insert(level, hits as f64 / lesion.len() as f64);
    }
    Ok(out)
}
