//! Synthetic datasets: textured backgrounds, spatio-temporal low-pass noise
//! at graded energy, and a Gaussian lesion at the stack center.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{wrap, Fft3, Volume};
use crate::stack::{
    stack_file_name, write_stack, DatasetManifest, Dims, ImageStack, Label, ManifestEntry, ViewingConfig,
};

/// Lesion support is cut at this Mahalanobis radius.
pub const LESION_SUPPORT_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Spatial low-pass std, cycles/pixel.
    pub sigma_s: f64,
    /// Temporal low-pass std, cycles/slice.
    pub sigma_t: f64,
    /// RMS in drive units for levels 1..=4.
    pub energy_levels: Vec<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_s: 0.08,
            sigma_t: 0.10,
            energy_levels: vec![0.02, 0.04, 0.06, 0.08],
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0 && self.sigma_t > 0.0) {
            return Err(Error::InvalidParam("noise sigmas must be positive".into()));
        }
        if self.energy_levels.is_empty() || self.energy_levels[0] <= 0.0 {
            return Err(Error::InvalidParam("noise energy levels must be positive".into()));
        }
        if self.energy_levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParam("noise energy levels must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn max_level(&self) -> u8 {
        self.energy_levels.len() as u8
    }

    /// Frequency response exp(−ρ²/2σs²)·exp(−f_t²/2σt²).
    pub fn response(&self, rho: f64, ft: f64) -> f64 {
        (-rho * rho / (2.0 * self.sigma_s * self.sigma_s)).exp()
            * (-ft * ft / (2.0 * self.sigma_t * self.sigma_t)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionSpec {
    pub amplitude: f64,
    /// In-plane std, pixels.
    pub sigma_xy: f64,
    /// Through-stack std, slices.
    pub sigma_z: f64,
}

impl Default for LesionSpec {
    fn default() -> Self {
        LesionSpec {
            amplitude: 0.10,
            sigma_xy: 2.5,
            sigma_z: 1.5,
        }
    }
}

impl LesionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.sigma_xy > 0.0 && self.sigma_z > 0.0) {
            return Err(Error::InvalidParam(
                "lesion needs amplitude >= 0 and positive sigmas".into(),
            ));
        }
        Ok(())
    }

    pub fn center(dims: Dims) -> (f64, f64, f64) {
        (
            (dims.nx as f64 - 1.0) / 2.0,
            (dims.ny as f64 - 1.0) / 2.0,
            (dims.nz as f64 - 1.0) / 2.0,
        )
    }

    /// Lesion profile at voxel (x, y, z); zero beyond the support radius.
    pub fn profile(&self, dims: Dims, x: usize, y: usize, z: usize) -> f64 {
        let (cx, cy, cz) = Self::center(dims);
        let dxy2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        let dz2 = (z as f64 - cz).powi(2);
        let r2 = dxy2 / (self.sigma_xy * self.sigma_xy) + dz2 / (self.sigma_z * self.sigma_z);
        if r2 > LESION_SUPPORT_SIGMAS * LESION_SUPPORT_SIGMAS {
            return 0.0;
        }
        self.amplitude * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Flat,
    Lumpy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundSpec {
    pub kind: BackgroundKind,
    pub mean: f64,
    /// Amplitude spectrum falls as 1/f^b.
    pub lumpy_exponent: f64,
    pub lumpy_rms: f64,
    /// Std of a per-stack offset of the mean, drive units.
    pub mean_sd: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec {
            kind: BackgroundKind::Lumpy,
            mean: 0.5,
            lumpy_exponent: 1.5,
            lumpy_rms: 0.05,
            mean_sd: 0.01,
        }
    }
}

impl BackgroundSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.mean < 1.0) {
            return Err(Error::InvalidParam("background mean must lie in (0, 1)".into()));
        }
        if !(self.lumpy_rms >= 0.0 && self.mean_sd >= 0.0) {
            return Err(Error::InvalidParam("lumpy_rms and mean_sd must be >= 0".into()));
        }
        Ok(())
    }
}

fn white_noise(dims: Dims, seed: u64) -> Volume {
    let mut r = rng::stream(seed);
    Volume::new(
        dims,
        (0..dims.len()).map(|_| StandardNormal.sample(&mut r)).collect(),
    )
}

/// Filters a white field by a real, even frequency response and rescales it
/// to the requested RMS.
fn shaped_field(dims: Dims, seed: u64, rms: f64, response: impl Fn(f64, f64, f64) -> f64) -> Result<Volume> {
    let fft = Fft3::new(dims);
    let mut spec = fft.forward(&white_noise(dims, seed))?;
    for (k, c) in spec.bins.iter_mut().enumerate() {
        let (u, v, w) = dims.coords(k);
        let fx = wrap(u, dims.nx) as f64 / dims.nx as f64;
        let fy = wrap(v, dims.ny) as f64 / dims.ny as f64;
        let ft = wrap(w, dims.nz) as f64 / dims.nz as f64;
        *c *= response(fx, fy, ft);
    }
    let mut field = fft.inverse(&spec)?;
    let current = field.rms();
    if current > 0.0 {
        let gain = rms / current;
        field.data.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(field)
}

fn clip_unit(values: &[f64]) -> (Vec<f32>, usize) {
    let mut clipped = 0;
    let out = values
        .iter()
        .map(|&v| {
            if !(0.0..=1.0).contains(&v) {
                clipped += 1;
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    (out, clipped)
}

pub fn gen_background(dims: Dims, spec: &BackgroundSpec, seed: u64) -> Result<ImageStack> {
    Ok(gen_background_counted(dims, spec, seed)?.0)
}

fn gen_background_counted(dims: Dims, spec: &BackgroundSpec, seed: u64) -> Result<(ImageStack, usize)> {
    dims.validate()?;
    spec.validate()?;
    let mean = match spec.kind {
        BackgroundKind::Flat => spec.mean,
        BackgroundKind::Lumpy => {
            let z: f64 = StandardNormal.sample(&mut rng::stream(rng::mix(seed, 0x6d65_616e)));
            spec.mean + spec.mean_sd * z
        }
    };
    let values = match spec.kind {
        BackgroundKind::Flat => vec![mean; dims.len()],
        BackgroundKind::Lumpy => {
            let b = spec.lumpy_exponent;
            let texture = shaped_field(dims, seed, spec.lumpy_rms, |fx, fy, ft| {
                let f = (fx * fx + fy * fy + ft * ft).sqrt();
                if f == 0.0 {
                    0.0
                } else {
                    f.powf(-b)
                }
            })?;
            texture.data.iter().map(|t| mean + t).collect()
        }
    };
    let (voxels, clipped) = clip_unit(&values);
    Ok((ImageStack::new(dims, voxels)?.with_meta("", Label::Healthy, 0, seed), clipped))
}

/// Low-pass noise at `level` (0 = none). The underlying white
/// field depends only on `seed`, so levels differ only by scale.
pub fn gen_noise_field(dims: Dims, spec: &NoiseSpec, level: u8, seed: u64) -> Result<Volume> {
    dims.validate()?;
    spec.validate()?;
    if level > spec.max_level() {
        return Err(Error::InvalidParam(format!(
            "noise level {level} out of range 0..={}",
            spec.max_level()
        )));
    }
    if level == 0 {
        return Ok(Volume::zeros(dims));
    }
    let rms = spec.energy_levels[level as usize - 1];
    shaped_field(dims, seed, rms, |fx, fy, ft| spec.response(fx.hypot(fy), ft))
}

fn add_noise(stack: &ImageStack, noise: &Volume) -> (ImageStack, usize) {
    let values: Vec<f64> = stack
        .voxels
        .iter()
        .zip(&noise.data)
        .map(|(&v, &n)| v as f64 + n)
        .collect();
    let (voxels, clipped) = clip_unit(&values);
    let mut out = stack.clone();
    out.voxels = voxels;
    (out, clipped)
}

pub fn insert_lesion(stack: &ImageStack, spec: &LesionSpec) -> ImageStack {
    insert_lesion_counted(stack, spec).0
}

fn insert_lesion_counted(stack: &ImageStack, spec: &LesionSpec) -> (ImageStack, usize) {
    let dims = stack.dims;
    let values: Vec<f64> = stack
        .voxels
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y, z) = dims.coords(i);
            v as f64 + spec.profile(dims, x, y, z)
        })
        .collect();
    let (voxels, clipped) = clip_unit(&values);
    let mut out = stack.clone();
    out.voxels = voxels;
    out.label = Label::Lesion;
    (out, clipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dims: Dims,
    pub levels: Vec<u8>,
    /// Stacks per class per level; each healthy stack has a lesion twin.
    pub per_class: usize,
    pub background: BackgroundSpec,
    pub noise: NoiseSpec,
    pub lesion: LesionSpec,
    pub base_seed: u64,
    pub viewing: ViewingConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: Dims::default(),
            levels: vec![0, 1, 2, 3, 4],
            per_class: 10,
            background: BackgroundSpec::default(),
            noise: NoiseSpec::default(),
            lesion: LesionSpec::default(),
            base_seed: 1,
            viewing: ViewingConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.background.validate()?;
        self.noise.validate()?;
        self.lesion.validate()?;
        self.viewing.validate()?;
        if self.levels.is_empty() {
            return Err(Error::InvalidParam("at least one complexity level required".into()));
        }
        if let Some(&l) = self.levels.iter().find(|&&l| l > self.noise.max_level()) {
            return Err(Error::InvalidParam(format!("complexity level {l} has no noise energy")));
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            return Err(Error::InvalidParam("duplicate complexity level".into()));
        }
        Ok(())
    }
}

/// Clipping tallies for a dataset build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub background: usize,
    pub noise: usize,
    pub lesion: usize,
}

impl ClipReport {
    fn add(&mut self, other: &ClipReport) {
        self.background += other.background;
        self.noise += other.noise;
        self.lesion += other.lesion;
    }
}

/// The twin pair `(healthy, lesion)` for one source index at one level.
///
/// Background and noise seeds come from the source index alone, so the same
/// source appears at every complexity level with identically shaped noise.
pub fn make_twins(config: &SynthConfig, level: u8, source: usize) -> Result<(ImageStack, ImageStack, ClipReport)> {
    let source_seed = rng::derive_seed(config.base_seed, &format!("source-{source}"));
    let (background, bg_clip) = gen_background_counted(config.dims, &config.background, rng::mix(source_seed, 1))?;
    let noise = gen_noise_field(config.dims, &config.noise, level, rng::mix(source_seed, 2))?;
    let (healthy, noise_clip) = add_noise(&background, &noise);
    let (lesion, lesion_clip) = insert_lesion_counted(&healthy, &config.lesion);
    let base = format!("c{level}-s{source:05}");
    let healthy = healthy.with_meta(format!("{base}-h"), Label::Healthy, level, source_seed);
    let lesion = lesion.with_meta(format!("{base}-l"), Label::Lesion, level, source_seed);
    let report = ClipReport {
        background: bg_clip,
        noise: noise_clip,
        lesion: lesion_clip,
    };
    Ok((healthy, lesion, report))
}

/// All stacks of a configuration in manifest order (level, source, healthy
/// before lesion).
pub fn synthesize(config: &SynthConfig) -> Result<(Vec<ImageStack>, ClipReport)> {
    config.validate()?;
    let jobs: Vec<(u8, usize)> = config
        .levels
        .iter()
        .flat_map(|&l| (0..config.per_class).map(move |s| (l, s)))
        .collect();
    let pairs = crate::experiment::par_map(&jobs, |&(level, source)| make_twins(config, level, source));
    let mut stacks = Vec::with_capacity(jobs.len() * 2);
    let mut report = ClipReport::default();
    for pair in pairs {
        let (h, l, r) = pair?;
        report.add(&r);
        stacks.push(h);
        stacks.push(l);
    }
    if report.background + report.noise + report.lesion > 0 {
        log::warn!("clipping during synthesis: {report:?}");
    }
    Ok((stacks, report))
}

pub fn build_dataset(config: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, ClipReport)> {
    let (stacks, report) = synthesize(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest::new(config.viewing);
    for stack in &stacks {
        if manifest.find(&stack.id).is_some() {
            return Err(Error::Manifest(format!("duplicate id {:?}", stack.id)));
        }
        let path = stack_file_name(&stack.id);
        write_stack(&out_dir.join(&path), stack)?;
        manifest.entries.push(ManifestEntry {
            id: stack.id.clone(),
            path,
            label: stack.label,
            complexity: stack.complexity,
            seed: stack.seed,
            dims: stack.dims,
        });
    }
    manifest.validate_structure()?;
    manifest.save(out_dir)?;
    Ok((manifest, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(dims: Dims) -> ImageStack {
        let spec = BackgroundSpec {
            kind: BackgroundKind::Flat,
            ..Default::default()
        };
        gen_background(dims, &spec, 0).unwrap()
    }

    #[test]
    fn flat_background_is_constant() {
        let s = flat(Dims::new(8, 8, 4));
        assert!(s.voxels.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn lumpy_background_is_deterministic_with_target_rms() {
        let dims = Dims::default();
        let spec = BackgroundSpec::default();
        let a = gen_background(dims, &spec, 7).unwrap();
        let b = gen_background(dims, &spec, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_background(dims, &spec, 8).unwrap();
        assert_ne!(a, c);

        // RMS measured on the unclipped texture
        let (unclipped, clipped) = gen_background_counted(dims, &spec, 7).unwrap();
        assert_eq!(clipped, 0);
        let mean = unclipped.voxels.iter().map(|&v| v as f64).sum::<f64>() / dims.len() as f64;
        assert!((mean - 0.5).abs() < 4.0 * spec.mean_sd);
        let rms = (unclipped.voxels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>()
            / dims.len() as f64)
            .sqrt();
        assert!((rms - 0.05).abs() <= 0.005, "rms {rms}");
    }

    #[test]
    fn noise_levels() {
        let dims = Dims::default();
        let spec = NoiseSpec::default();
        let zero = gen_noise_field(dims, &spec, 0, 11).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));

        let two = gen_noise_field(dims, &spec, 2, 11).unwrap();
        assert!((two.rms() - 0.04).abs() <= 0.02 * 0.04);

        let one = gen_noise_field(dims, &spec, 1, 11).unwrap();
        let three = gen_noise_field(dims, &spec, 3, 11).unwrap();
        let ratio = spec.energy_levels[2] / spec.energy_levels[0];
        for (a, b) in one.data.iter().zip(&three.data) {
            assert!((b - ratio * a).abs() < 1e-12);
        }
        assert!(gen_noise_field(dims, &spec, 5, 11).is_err());
    }

    #[test]
    fn noise_spectrum_follows_response() {
        // Averaged periodogram of the field divided by H² must be flat.
        let dims = Dims::new(32, 32, 16);
        let spec = NoiseSpec::default();
        let fft = Fft3::new(dims);
        let mut power = vec![0.0; dims.len()];
        let reps = 40;
        for seed in 0..reps {
            let f = fft.forward(&gen_noise_field(dims, &spec, 1, seed).unwrap()).unwrap();
            for (p, c) in power.iter_mut().zip(&f.bins) {
                *p += c.norm_sqr();
            }
        }
        let mut ratios = Vec::new();
        for (k, p) in power.iter().enumerate() {
            let (u, v, w) = dims.coords(k);
            let fx = wrap(u, dims.nx) as f64 / dims.nx as f64;
            let fy = wrap(v, dims.ny) as f64 / dims.ny as f64;
            let ft = wrap(w, dims.nz) as f64 / dims.nz as f64;
            let h = spec.response(fx.hypot(fy), ft);
            if k != 0 && h > 0.5 {
                ratios.push(p / (h * h));
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        for r in &ratios {
            // 40 averaged exponentials: relative sd ~ 0.16
            assert!((r / mean - 1.0).abs() < 0.8, "ratio {r} vs mean {mean}");
        }
    }

    #[test]
    fn zero_amplitude_lesion_is_identity() {
        let s = flat(Dims::new(8, 8, 4));
        let spec = LesionSpec {
            amplitude: 0.0,
            ..Default::default()
        };
        let out = insert_lesion(&s, &spec);
        assert_eq!(out.voxels, s.voxels);
        assert_eq!(out.label, Label::Lesion);
    }

    #[test]
    fn lesion_peak_and_mass() {
        let dims = Dims::default();
        let s = flat(dims);
        let spec = LesionSpec::default();
        let l = insert_lesion(&s, &spec);
        let max = l.voxels.iter().cloned().fold(f32::MIN, f32::max) as f64;
        let expected = 0.5 + 0.10 * (-(0.25f64 + 0.25) / (2.0 * 2.5 * 2.5)).exp() * (-0.25f64 / (2.0 * 1.5 * 1.5)).exp();
        assert!((max - expected).abs() < 1e-6, "max {max} vs {expected}");

        let diff: f64 = l
            .voxels
            .iter()
            .zip(&s.voxels)
            .map(|(&a, &b)| a as f64 - b as f64)
            .sum();
        let analytic = 0.10 * (2.0 * std::f64::consts::PI).powf(1.5) * 2.5 * 2.5 * 1.5;
        assert!(((diff - analytic) / analytic).abs() < 0.02, "{diff} vs {analytic}");
    }

    #[test]
    fn twins_differ_only_inside_support() {
        let config = SynthConfig {
            dims: Dims::new(32, 32, 16),
            ..Default::default()
        };
        let (h, l, report) = make_twins(&config, 3, 4).unwrap();
        assert_eq!(report.lesion, 0);
        let (cx, cy, cz) = LesionSpec::center(h.dims);
        let spec = &config.lesion;
        for i in 0..h.voxels.len() {
            let (x, y, z) = h.dims.coords(i);
            let r2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / spec.sigma_xy.powi(2)
                + (z as f64 - cz).powi(2) / spec.sigma_z.powi(2);
            if r2 > 16.0 {
                assert!((h.voxels[i] - l.voxels[i]).abs() < 1e-6);
            }
        }
        assert_eq!(h.seed, l.seed);
        assert_ne!(h.id, l.id);
    }

    #[test]
    fn build_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            dims: Dims::new(8, 8, 4),
            per_class: 10,
            ..Default::default()
        };
        let (m, _) = build_dataset(&config, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 100);
        for (_, (h, l)) in m.class_counts() {
            assert_eq!((h, l), (10, 10));
        }
        m.validate(dir.path()).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        build_dataset(&config, dir2.path()).unwrap();
        for e in &m.entries {
            let a = fs::read(dir.path().join(&e.path)).unwrap();
            let b = fs::read(dir2.path().join(&e.path)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(
            fs::read(dir.path().join("manifest.json")).unwrap(),
            fs::read(dir2.path().join("manifest.json")).unwrap()
        );
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = NoiseSpec {
            energy_levels: vec![0.04, 0.02],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackgroundSpec {
            mean: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
