//! Perception stage: spatio-temporal CSF thresholds, spatial contrast
//! masking, psychometric gain, and the perceive pipeline that turns a stack
//! into the stack an observer would see.
//!
//! Per component (u, v, w) of the stack spectrum:
//!
//! ```text
//! m      = 2|I(u,v,w)| / I(0,0,0)                 modulation
//! m_t    = 1 / stcsf(ρ, v_R)                      CSF-only threshold
//! S(u,v) = Σ_w |I(u,v,w)|²                        spatial spectrum
//! m_n    = Σ w·S / (S(0,0)·Σ w)                   masker power
//! m'_t   = sqrt(m_t² + k²·m_n²)                   masked threshold
//! ```
//!
//! and the gain applied to the component depends on the method:
//! probability map (PM) uses the psychometric probability of detection,
//! Monte Carlo (MC) draws detection from it, linear filtering (LF) scales by
//! normalized sensitivity only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{conj_index, modulation, spatial_spectrum, Fft3, FreqCoords, FrequencyStack, Volume};
use crate::stack::{to_luminance, Dims, ImageStack, ViewingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsfModel {
    Kelly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsfParams {
    pub model: CsfModel,
    /// Retinal velocity clamp, deg/s.
    pub v_min: f64,
    pub v_max: f64,
    /// Sensitivity floor; keeps thresholds finite.
    pub s_floor: f64,
}

impl Default for CsfParams {
    fn default() -> Self {
        CsfParams {
            model: CsfModel::Kelly,
            v_min: 0.15,
            v_max: 80.0,
            s_floor: 1e-4,
        }
    }
}

impl CsfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return Err(Error::InvalidParam("need 0 < v_min < v_max".into()));
        }
        if !(self.s_floor > 0.0) {
            return Err(Error::InvalidParam("s_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn clamp_velocity(&self, v: Option<f64>) -> f64 {
        match v {
            Some(v) => v.clamp(self.v_min, self.v_max),
            None => self.v_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "PM")]
    Pm,
    #[serde(rename = "LF")]
    Lf,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mc => "MC",
            Method::Pm => "PM",
            Method::Lf => "LF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MC" => Ok(Method::Mc),
            "PM" => Ok(Method::Pm),
            "LF" => Ok(Method::Lf),
            _ => Err(Error::InvalidParam(format!("unknown method {s:?}"))),
        }
    }
}

/// Which HVS properties are modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    CsfOnly,
    CsfPlusMasking,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::CsfOnly => "csf_only",
            Model::CsfPlusMasking => "csf_plus_masking",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csf_only" => Ok(Model::CsfOnly),
            "csf_plus_masking" => Ok(Model::CsfPlusMasking),
            _ => Err(Error::InvalidParam(format!("unknown model {s:?}"))),
        }
    }
}

/// Whether the masker-power formula yields an amplitude directly or a
/// power whose square root is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnSemantics {
    Amplitude,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvsConfig {
    pub csf: CsfParams,
    /// Crozier coefficient.
    pub k: f64,
    /// Maskers further than this in orientation do not mask.
    pub alpha_max_deg: f64,
    /// Decay constant of the log-frequency masking kernel.
    pub decay: f64,
    /// Psychometric slope.
    pub beta: f64,
    pub method: Method,
    pub mc_seed: u64,
    pub mn_semantics: MnSemantics,
}

impl Default for HvsConfig {
    fn default() -> Self {
        HvsConfig {
            csf: CsfParams::default(),
            k: 3.0,
            alpha_max_deg: 5.0,
            decay: 2.2,
            beta: 3.5,
            method: Method::Pm,
            mc_seed: 0,
            mn_semantics: MnSemantics::Power,
        }
    }
}

impl HvsConfig {
    pub fn validate(&self) -> Result<()> {
        self.csf.validate()?;
        if !(self.k >= 0.0) {
            return Err(Error::InvalidParam("k must be >= 0".into()));
        }
        if !(self.alpha_max_deg > 0.0) {
            return Err(Error::InvalidParam("alpha_max_deg must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParam("beta must be positive".into()));
        }
        if !(self.decay >= 0.0) {
            return Err(Error::InvalidParam("decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Kelly's spatio-velocity sensitivity, without floor or clamping.
pub fn kelly(rho: f64, v: f64) -> f64 {
    let kv = 6.1 + 7.3 * (v / 3.0).log10().abs().powi(3);
    let rho_max = 45.9 / (v + 2.0);
    let two_pi_rho = 2.0 * std::f64::consts::PI * rho;
    kv * v * two_pi_rho * two_pi_rho * (-2.0 * two_pi_rho / rho_max).exp()
}

/// Contrast sensitivity at radial frequency `rho` (cycles/degree) and
/// retinal velocity `v` (deg/s). The velocity is clamped into
/// `[v_min, v_max]`; the result never falls below `s_floor`.
pub fn stcsf(rho: f64, v: f64, params: &CsfParams) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidParam(format!("spatial frequency must be >= 0, got {rho}")));
    }
    let v = v.clamp(params.v_min, params.v_max);
    let g = match params.model {
        CsfModel::Kelly => kelly(rho, v),
    };
    Ok(g.max(params.s_floor))
}

fn sensitivity_at(coords: &FreqCoords, params: &CsfParams, u: usize, v: usize, w: usize) -> f64 {
    let velocity = params.clamp_velocity(coords.retinal_velocity(u, v, w));
    stcsf(coords.rho(u, v), velocity, params).expect("rho is a norm, never negative")
}

/// CSF-only threshold per bin; `+∞` at DC.
pub fn csf_threshold_map(coords: &FreqCoords, params: &CsfParams) -> Vec<f64> {
    let dims = coords.dims;
    let mut m_t: Vec<f64> = (0..dims.len())
        .map(|k| {
            let (u, v, w) = dims.coords(k);
            1.0 / sensitivity_at(coords, params, u, v, w)
        })
        .collect();
    m_t[0] = f64::INFINITY;
    m_t
}

/// Masking weight of masker `(u2, v2)` on maskee `(u, v)`, both in the same
/// frequency units.
pub fn mask_weight(maskee: (f64, f64), masker: (f64, f64), config: &HvsConfig) -> Result<f64> {
    let (u, v) = maskee;
    let (u2, v2) = masker;
    let norm2 = u * u + v * v;
    if norm2 == 0.0 {
        return Err(Error::InvalidParam("maskee at DC has no masking weight".into()));
    }
    let masker_norm = u2.hypot(v2);
    if masker_norm == 0.0 {
        return Err(Error::InvalidParam("DC is not a masker".into()));
    }
    // axial angle: lines through the origin, in [0°, 90°]
    let cos = ((u * u2 + v * v2).abs() / (norm2.sqrt() * masker_norm)).min(1.0);
    let alpha = cos.acos().to_degrees();
    if alpha > config.alpha_max_deg {
        return Ok(0.0);
    }
    let dist2 = (u - u2).powi(2) + (v - v2).powi(2);
    let l = (1.0 + (dist2 / norm2).sqrt()).ln();
    Ok((-config.decay * l * l).exp())
}

/// Precomputed masker lists for every maskee bin of one spatial grid.
#[derive(Debug, Clone)]
pub struct MaskingKernel {
    nx: usize,
    ny: usize,
    /// Per maskee: (masker flat index, weight) for every w > 0.
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl MaskingKernel {
    pub fn new(coords: &FreqCoords, config: &HvsConfig) -> Self {
        let (nx, ny) = (coords.dims.nx, coords.dims.ny);
        let plane = nx * ny;
        let freq = |k: usize| (coords.fx[k % nx], coords.fy[k / nx]);
        let neighbors = crate::experiment::par_map(&(0..plane).collect::<Vec<_>>(), |&k| {
            if k == 0 {
                return Vec::new();
            }
            let maskee = freq(k);
            (1..plane)
                .filter_map(|j| {
                    let w = mask_weight(maskee, freq(j), config).expect("non-DC pair");
                    (w > 0.0).then_some((j as u32, w))
                })
                .collect()
        });
        MaskingKernel { nx, ny, neighbors }
    }

    pub fn neighbors(&self, u: usize, v: usize) -> &[(u32, f64)] {
        &self.neighbors[u + self.nx * v]
    }

    pub fn plane(&self) -> usize {
        self.nx * self.ny
    }
}

/// Masker power per spatial bin; zero at DC and where no masker is in
/// orientation range.
pub fn masker_power_map(
    spectrum: &crate::spectral::SpatialSpectrum,
    kernel: &MaskingKernel,
    semantics: MnSemantics,
) -> Result<Vec<f64>> {
    let s00 = spectrum.dc();
    if !(s00 > 0.0) {
        return Err(Error::InvalidParam(format!("S(0,0) must be positive, got {s00}")));
    }
    if spectrum.data.len() != kernel.plane() {
        return Err(Error::DimMismatch {
            expected: format!("{} spatial bins", kernel.plane()),
            actual: format!("{} spatial bins", spectrum.data.len()),
        });
    }
    let m_n = kernel
        .neighbors
        .iter()
        .map(|list| {
            let (num, den) = list.iter().fold((0.0, 0.0), |(n, d), &(j, w)| {
                (n + w * spectrum.data[j as usize], d + w)
            });
            if den == 0.0 {
                return 0.0;
            }
            let value = num / (s00 * den);
            match semantics {
                MnSemantics::Amplitude => value,
                MnSemantics::Power => value.sqrt(),
            }
        })
        .collect();
    Ok(m_n)
}

/// sqrt(m_t² + k²·m_n²); an infinite threshold stays infinite.
pub fn masked_threshold(m_t: f64, m_n: f64, k: f64) -> Result<f64> {
    if m_t < 0.0 || m_n < 0.0 || k < 0.0 || m_t.is_nan() || m_n.is_nan() || k.is_nan() {
        return Err(Error::InvalidParam(format!(
            "thresholds need non-negative inputs, got m_t={m_t} m_n={m_n} k={k}"
        )));
    }
    if m_t.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok((m_t * m_t + k * k * (m_n * m_n)).sqrt())
}

/// Weibull detection probability 1 − 2^(−x^β); 0.5 at threshold.
#[inline]
pub fn psychometric(x: f64, beta: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    1.0 - (-(x.powf(beta)) * std::f64::consts::LN_2).exp()
}

/// Threshold maps for one stack.
#[derive(Debug, Clone)]
pub struct ThresholdMaps {
    /// CSF-only threshold per 3D bin.
    pub m_t: Vec<f64>,
    /// Masker power per spatial bin.
    pub m_n: Vec<f64>,
    /// Masked threshold per 3D bin.
    pub m_t_masked: Vec<f64>,
}

/// Everything a stack needs on its way through the perception stage.
pub struct StackAnalysis {
    pub spectrum: FrequencyStack,
    pub modulation: Vec<f64>,
    pub thresholds: ThresholdMaps,
}

/// Perception stage for a fixed stack shape, viewing geometry and model.
///
/// Construction precomputes everything that does not depend on stack
/// content; [`Perceiver::perceive`] is then cheap and thread-safe.
pub struct Perceiver {
    dims: Dims,
    viewing: ViewingConfig,
    config: HvsConfig,
    model: Model,
    fft: Fft3,
    m_t: Vec<f64>,
    lf_gain: Vec<f64>,
    kernel: Option<MaskingKernel>,
}

impl Perceiver {
    pub fn new(dims: Dims, viewing: ViewingConfig, config: HvsConfig, model: Model) -> Result<Self> {
        dims.validate()?;
        viewing.validate()?;
        config.validate()?;
        let coords = FreqCoords::new(dims, &viewing);
        let m_t = csf_threshold_map(&coords, &config.csf);
        let peak = m_t[1..].iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let mut lf_gain: Vec<f64> = m_t.iter().map(|&t| peak / t).collect();
        lf_gain[0] = 1.0;
        let kernel = match model {
            Model::CsfOnly => None,
            Model::CsfPlusMasking => Some(MaskingKernel::new(&coords, &config)),
        };
        Ok(Perceiver {
            dims,
            viewing,
            config,
            model,
            fft: Fft3::new(dims),
            m_t,
            lf_gain,
            kernel,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn config(&self) -> &HvsConfig {
        &self.config
    }

    /// Linear-filter gains: sensitivity normalized to unit peak, DC = 1.
    pub fn lf_gains(&self) -> &[f64] {
        &self.lf_gain
    }

    fn check_dims(&self, stack: &ImageStack) -> Result<()> {
        if stack.dims != self.dims {
            return Err(Error::DimMismatch {
                expected: self.dims.to_string(),
                actual: stack.dims.to_string(),
            });
        }
        Ok(())
    }

    pub fn analyze(&self, stack: &ImageStack) -> Result<StackAnalysis> {
        self.check_dims(stack)?;
        let luminance = to_luminance(stack, &self.viewing)?;
        self.analyze_luminance(&luminance)
    }

    pub fn analyze_luminance(&self, luminance: &Volume) -> Result<StackAnalysis> {
        let spectrum = self.fft.forward(luminance)?;
        let modulation = modulation(&spectrum)?;
        let plane = self.dims.plane();
        let (m_n, m_t_masked) = match &self.kernel {
            None => (vec![0.0; plane], self.m_t.clone()),
            Some(kernel) => {
                let s = spatial_spectrum(&spectrum);
                let m_n = masker_power_map(&s, kernel, self.config.mn_semantics)?;
                let masked = self
                    .m_t
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| masked_threshold(t, m_n[k % plane], self.config.k))
                    .collect::<Result<Vec<_>>>()?;
                (m_n, masked)
            }
        };
        Ok(StackAnalysis {
            spectrum,
            modulation,
            thresholds: ThresholdMaps {
                m_t: self.m_t.clone(),
                m_n,
                m_t_masked,
            },
        })
    }

    /// Per-bin gains in [0, 1]. Each conjugate pair takes the gain computed
    /// at its lower flat index, so the perceived stack stays real.
    pub fn gains(&self, analysis: &StackAnalysis, stack_id: &str) -> Vec<f64> {
        let n = self.dims.len();
        let mc_key = rng::mix(self.config.mc_seed, rng::fnv1a(stack_id));
        let mut gains = vec![0.0; n];
        for k in 0..n {
            let c = k.min(conj_index(self.dims, k));
            gains[k] = if c == 0 {
                1.0
            } else {
                match self.config.method {
                    Method::Lf => self.lf_gain[c],
                    Method::Pm | Method::Mc => {
                        let x = analysis.modulation[c] / analysis.thresholds.m_t_masked[c];
                        let p = psychometric(x, self.config.beta);
                        if self.config.method == Method::Pm {
                            p
                        } else if rng::counter_uniform(mc_key, c as u64) < p {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            };
        }
        gains
    }

    /// Perceived stack in luminance units.
    pub fn perceive(&self, stack: &ImageStack) -> Result<Volume> {
        let mut analysis = self.analyze(stack)?;
        let gains = self.gains(&analysis, &stack.id);
        for (c, g) in analysis.spectrum.bins.iter_mut().zip(&gains) {
            *c *= g;
        }
        self.fft.inverse(&analysis.spectrum)
    }
}

/// One-shot convenience wrapper around [`Perceiver`].
pub fn perceive(stack: &ImageStack, viewing: &ViewingConfig, config: &HvsConfig, model: Model) -> Result<Volume> {
    Perceiver::new(stack.dims, *viewing, config.clone(), model)?.perceive(stack)
}
