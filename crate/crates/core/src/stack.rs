//! Image stacks, their raw on-disk encoding, dataset manifests and the
//! display luminance model.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Volume;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Stack dimensions: pixels along x, pixels along y, slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per slice.
    pub const fn plane(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index with x fastest, then y, then slice.
    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / self.plane();
        (x, y, z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidParam(format!("dimensions must be positive, got {self}")));
        }
        Ok(())
    }
}

impl Default for Dims {
    fn default() -> Self {
        Dims::new(64, 64, 32)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Lesion,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Lesion => "lesion",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stack of slices in normalized drive units.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub dims: Dims,
    pub voxels: Vec<f32>,
    pub id: String,
    pub label: Label,
    pub complexity: u8,
    pub seed: u64,
}

impl ImageStack {
    pub fn new(dims: Dims, voxels: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        if voxels.len() != dims.len() {
            return Err(Error::DimMismatch {
                expected: format!("{} voxels ({dims})", dims.len()),
                actual: format!("{} voxels", voxels.len()),
            });
        }
        if let Some(index) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ImageStack {
            dims,
            voxels,
            id: String::new(),
            label: Label::Healthy,
            complexity: 0,
            seed: 0,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn with_meta(mut self, id: impl Into<String>, label: Label, complexity: u8, seed: u64) -> Self {
        self.id = id.into();
        self.label = label;
        self.complexity = complexity;
        self.seed = seed;
        self
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.dims.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let plane = self.dims.plane();
        &self.voxels[z * plane..(z + 1) * plane]
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new(self.dims, self.voxels.iter().map(|&v| v as f64).collect())
    }
}

/// Raw little-endian float32 bytes, x fastest, then y, then slice.
pub fn encode_stack(stack: &ImageStack) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(stack.voxels.len() * 4);
    for v in &stack.voxels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_stack(bytes: &[u8], dims: Dims) -> Result<Vec<f32>> {
    let expected = dims.len() * 4;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let mut voxels = Vec::with_capacity(dims.len());
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        voxels.push(v);
    }
    Ok(voxels)
}

/// Display and observer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewingConfig {
    pub pixels_per_degree: f64,
    pub slices_per_second: f64,
    /// Peak display luminance, cd/m².
    pub l_max: f64,
    /// Black-point luminance, cd/m².
    pub l_min: f64,
}

impl Default for ViewingConfig {
    fn default() -> Self {
        ViewingConfig {
            pixels_per_degree: 18.0,
            slices_per_second: 10.0,
            l_max: 850.0,
            l_min: 1.75,
        }
    }
}

impl ViewingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixels_per_degree > 0.0 && self.slices_per_second > 0.0) {
            return Err(Error::InvalidParam(
                "pixels_per_degree and slices_per_second must be positive".into(),
            ));
        }
        if !(self.l_max > self.l_min && self.l_min > 0.0) {
            return Err(Error::InvalidParam(format!(
                "need l_max > l_min > 0, got l_max={} l_min={}",
                self.l_max, self.l_min
            )));
        }
        Ok(())
    }

    pub fn effective_contrast(&self) -> f64 {
        self.l_max / self.l_min
    }

    /// Affine drive-to-luminance map.
    #[inline]
    pub fn luminance(&self, drive: f64) -> f64 {
        self.l_min + drive * (self.l_max - self.l_min)
    }
}

/// Converts drive units to cd/m². Every voxel must lie in [0, 1].
pub fn to_luminance(stack: &ImageStack, viewing: &ViewingConfig) -> Result<Volume> {
    viewing.validate()?;
    let mut data = Vec::with_capacity(stack.voxels.len());
    for (index, &v) in stack.voxels.iter().enumerate() {
        let p = v as f64;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange { index, value: p });
        }
        data.push(viewing.luminance(p));
    }
    Ok(Volume::new(stack.dims, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub complexity: u8,
    pub seed: u64,
    pub dims: Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub viewing: ViewingConfig,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(viewing: ViewingConfig) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            viewing,
            entries: Vec::new(),
        }
    }

    /// Reads `manifest.json` from a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn find(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Structural checks that need no file access: unique ids and an equal
    /// number of healthy and lesion entries at every complexity level.
    pub fn validate_structure(&self) -> Result<()> {
        self.viewing.validate()?;
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", entry.id)));
            }
            entry.dims.validate()?;
        }
        for (level, (healthy, lesion)) in self.class_counts() {
            if healthy != lesion {
                return Err(Error::Manifest(format!(
                    "complexity {level}: {healthy} healthy vs {lesion} lesion entries"
                )));
            }
        }
        Ok(())
    }

    /// Full validation: structure plus every file present and decodable.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.validate_structure()?;
        for entry in &self.entries {
            self.load_stack(root, entry)?;
        }
        Ok(())
    }

    /// (healthy, lesion) counts per complexity level.
    pub fn class_counts(&self) -> BTreeMap<u8, (usize, usize)> {
        let mut counts: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for entry in &self.entries {
            let c = counts.entry(entry.complexity).or_default();
            match entry.label {
                Label::Healthy => c.0 += 1,
                Label::Lesion => c.1 += 1,
            }
        }
        counts
    }

    pub fn load_stack(&self, root: &Path, entry: &ManifestEntry) -> Result<ImageStack> {
        let path = root.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let voxels = decode_stack(&bytes, entry.dims)
            .map_err(|e| e.context(format!("stack {}", entry.id)))?;
        Ok(ImageStack::new(entry.dims, voxels)?.with_meta(
            entry.id.clone(),
            entry.label,
            entry.complexity,
            entry.seed,
        ))
    }
}

pub fn write_stack(path: &Path, stack: &ImageStack) -> Result<()> {
    fs::write(path, encode_stack(stack)).map_err(|e| Error::io(path, e))
}

pub fn stack_file_name(id: &str) -> PathBuf {
    PathBuf::from(format!("{id}.f32"))
}
