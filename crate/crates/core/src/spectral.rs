//! 3D DFT front and back ends, physical frequency coordinates, and the
//! stack-level spectral statistics used by the masking model.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries
//! the 1/N factor. Bins share the voxel layout (u fastest, then v, then w).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::stack::{Dims, ViewingConfig};

/// Real-valued 3D field (luminance, noise, perceived output).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dims.len(), "volume length must match dims {dims}");
        Volume { dims, data }
    }

    pub fn zeros(dims: Dims) -> Self {
        Volume::new(dims, vec![0.0; dims.len()])
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let plane = self.dims.plane();
        &self.data[z * plane..(z + 1) * plane]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStack {
    pub dims: Dims,
    pub bins: Vec<Complex64>,
}

impl FrequencyStack {
    pub fn dc(&self) -> Complex64 {
        self.bins[0]
    }

    pub fn get(&self, u: usize, v: usize, w: usize) -> Complex64 {
        self.bins[self.dims.index(u, v, w)]
    }

    /// Flat index of the conjugate-twin bin (−u, −v, −w).
    #[inline]
    pub fn conj_index(&self, index: usize) -> usize {
        conj_index(self.dims, index)
    }
}

#[inline]
pub fn conj_index(dims: Dims, index: usize) -> usize {
    let (u, v, w) = dims.coords(index);
    dims.index(
        (dims.nx - u) % dims.nx,
        (dims.ny - v) % dims.ny,
        (dims.nz - w) % dims.nz,
    )
}

/// Maps a DFT index to the signed range (−n/2, n/2].
#[inline]
pub fn wrap(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Cached 1D plans for one stack shape.
pub struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [
            planner.plan_fft_forward(dims.nx),
            planner.plan_fft_forward(dims.ny),
            planner.plan_fft_forward(dims.nz),
        ];
        let inverse = [
            planner.plan_fft_inverse(dims.nx),
            planner.plan_fft_inverse(dims.ny),
            planner.plan_fft_inverse(dims.nz),
        ];
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn forward(&self, volume: &Volume) -> Result<FrequencyStack> {
        self.check(volume.dims)?;
        let mut bins: Vec<Complex64> = volume.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut bins, &self.forward);
        Ok(FrequencyStack {
            dims: self.dims,
            bins,
        })
    }

    /// Inverse transform; fails if the result is not real to 1e-6 relative.
    pub fn inverse(&self, freq: &FrequencyStack) -> Result<Volume> {
        self.check(freq.dims)?;
        let mut bins = freq.bins.clone();
        self.transform(&mut bins, &self.inverse);
        let scale = 1.0 / self.dims.len() as f64;
        let mut max_real = 0.0f64;
        let mut max_imag = 0.0f64;
        let data = bins
            .iter()
            .map(|c| {
                max_real = max_real.max((c.re * scale).abs());
                max_imag = max_imag.max((c.im * scale).abs());
                c.re * scale
            })
            .collect();
        if max_imag > 1e-6 * max_real {
            return Err(Error::SymmetryViolation { max_imag, max_real });
        }
        Ok(Volume::new(self.dims, data))
    }

    fn check(&self, dims: Dims) -> Result<()> {
        if dims != self.dims {
            return Err(Error::DimMismatch {
                expected: self.dims.to_string(),
                actual: dims.to_string(),
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let Dims { nx, ny, nz } = self.dims;
        let plane = nx * ny;

        // x: contiguous rows
        for row in data.chunks_exact_mut(nx) {
            plans[0].process(row);
        }

        let mut line = vec![Complex64::default(); ny.max(nz)];
        if ny > 1 {
            for z in 0..nz {
                for x in 0..nx {
                    let base = z * plane + x;
                    for y in 0..ny {
                        line[y] = data[base + y * nx];
                    }
                    plans[1].process(&mut line[..ny]);
                    for y in 0..ny {
                        data[base + y * nx] = line[y];
                    }
                }
            }
        }
        if nz > 1 {
            for base in 0..plane {
                for z in 0..nz {
                    line[z] = data[base + z * plane];
                }
                plans[2].process(&mut line[..nz]);
                for z in 0..nz {
                    data[base + z * plane] = line[z];
                }
            }
        }
    }
}

pub fn fft3(volume: &Volume) -> FrequencyStack {
    Fft3::new(volume.dims)
        .forward(volume)
        .expect("plan built for the volume's own dims")
}

pub fn ifft3(freq: &FrequencyStack) -> Result<Volume> {
    Fft3::new(freq.dims).inverse(freq)
}

/// Physical frequency of every bin under a viewing geometry.
#[derive(Debug, Clone)]
pub struct FreqCoords {
    pub dims: Dims,
    /// cycles/degree per u index
    pub fx: Vec<f64>,
    /// cycles/degree per v index
    pub fy: Vec<f64>,
    /// Hz per w index
    pub ft: Vec<f64>,
}

impl FreqCoords {
    pub fn new(dims: Dims, viewing: &ViewingConfig) -> Self {
        let axis = |n: usize, rate: f64| -> Vec<f64> {
            (0..n).map(|i| wrap(i, n) as f64 / n as f64 * rate).collect()
        };
        FreqCoords {
            dims,
            fx: axis(dims.nx, viewing.pixels_per_degree),
            fy: axis(dims.ny, viewing.pixels_per_degree),
            ft: axis(dims.nz, viewing.slices_per_second),
        }
    }

    /// Radial spatial frequency, cycles/degree.
    #[inline]
    pub fn rho(&self, u: usize, v: usize) -> f64 {
        self.fx[u].hypot(self.fy[v])
    }

    /// Axial orientation in degrees, [0, 180).
    #[inline]
    pub fn orientation(&self, u: usize, v: usize) -> f64 {
        axial_orientation(self.fx[u], self.fy[v])
    }

    /// Retinal velocity |f_t|/ρ in deg/s; `None` where it is undefined
    /// (ρ = 0) or the component is static (f_t = 0).
    #[inline]
    pub fn retinal_velocity(&self, u: usize, v: usize, w: usize) -> Option<f64> {
        let rho = self.rho(u, v);
        let ft = self.ft[w].abs();
        if rho == 0.0 || ft == 0.0 {
            None
        } else {
            Some(ft / rho)
        }
    }
}

pub fn axial_orientation(fx: f64, fy: f64) -> f64 {
    let deg = fy.atan2(fx).to_degrees();
    let t = deg.rem_euclid(180.0);
    if t >= 180.0 {
        0.0
    } else {
        t
    }
}

/// Stack-level spatial power spectrum: S(u,v) = Σ_w |I(u,v,w)|².
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl SpatialSpectrum {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u + self.nx * v]
    }

    pub fn dc(&self) -> f64 {
        self.data[0]
    }
}

pub fn spatial_spectrum(freq: &FrequencyStack) -> SpatialSpectrum {
    let plane = freq.dims.plane();
    let mut data = vec![0.0; plane];
    for w in 0..freq.dims.nz {
        for (s, c) in data.iter_mut().zip(&freq.bins[w * plane..(w + 1) * plane]) {
            *s += c.norm_sqr();
        }
    }
    SpatialSpectrum {
        nx: freq.dims.nx,
        ny: freq.dims.ny,
        data,
    }
}

/// Per-bin modulation 2|I|/I(0,0,0); zero at DC.
pub fn modulation(freq: &FrequencyStack) -> Result<Vec<f64>> {
    let dc = freq.dc().re;
    if !(dc > 0.0) {
        return Err(Error::InvalidParam(format!("DC must be positive for modulation, got {dc}")));
    }
    let mut m: Vec<f64> = freq.bins.iter().map(|c| 2.0 * c.norm() / dc).collect();
    m[0] = 0.0;
    Ok(m)
}
