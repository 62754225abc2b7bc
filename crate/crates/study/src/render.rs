use hvsim_core::ImageStack;
use serde::{Deserialize, Serialize};

use crate::error::{StudyError, StudyResult};

/// Linear display window in drive units: `lo` maps to 0, `hi` to 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f32,
    pub hi: f32,
}

impl Default for Window {
    fn default() -> Self {
        Window { lo: 0.0, hi: 1.0 }
    }
}

impl Window {
    pub fn validate(&self) -> StudyResult<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(StudyError::Validation(format!(
                "window needs finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Half-up rounding, so 0.5 in [0, 1] lands on 128.
    pub fn quantize(&self, v: f32) -> u8 {
        let t = ((v as f64 - self.lo as f64) / (self.hi as f64 - self.lo as f64)).clamp(0.0, 1.0);
        (t * 255.0 + 0.5).floor() as u8
    }
}

/// 8-bit grayscale PNG of slice `k`.
pub fn slice_png(stack: &ImageStack, k: usize, window: Window) -> StudyResult<Vec<u8>> {
    window.validate()?;
    let nz = stack.dims.nz;
    if k >= nz {
        return Err(StudyError::SliceOutOfRange { index: k, nz });
    }
    let pixels: Vec<u8> = stack.slice(k).iter().map(|&v| window.quantize(v)).collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, stack.dims.nx as u32, stack.dims.ny as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| StudyError::Validation(format!("png header: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| StudyError::Validation(format!("png data: {e}")))?;
    }
    Ok(out)
}
