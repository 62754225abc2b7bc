//! WebAssembly bindings for the browser demo. The `*_impl` functions hold
//! the logic and stay callable from native code.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use hvsim_core::hvs::{self, CsfParams, Model};
use hvsim_core::synth::{make_twins, SynthConfig};
use hvsim_core::{Dims, HvsConfig, Method, Result, ViewingConfig};
use wasm_bindgen::prelude::*;

/// Stack size used by the demo; small enough to perceive interactively.
pub const DEMO_DIMS: Dims = Dims::new(32, 32, 16);

fn js(e: hvsim_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Sensitivity at `n` radial frequencies spread evenly over `(0, rho_max]`.
pub fn csf_curve_impl(velocity: f64, rho_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(rho_max > 0.0) || n == 0 {
        return Err(hvsim_core::Error::InvalidParam("need rho_max > 0 and n > 0".into()));
    }
    let params = CsfParams::default();
    (1..=n)
        .map(|i| hvs::stcsf(rho_max * i as f64 / n as f64, velocity, &params))
        .collect()
}

/// `n`×`n` grid of masking weights over `[-extent, extent]²` (cpd) for one
/// maskee; row-major, y down. DC reads as 0.
pub fn mask_weight_map_impl(
    maskee_fx: f64,
    maskee_fy: f64,
    extent: f64,
    n: usize,
    alpha_max_deg: f64,
    decay: f64,
) -> Result<Vec<f64>> {
    let config = HvsConfig {
        alpha_max_deg,
        decay,
        ..HvsConfig::default()
    };
    config.validate()?;
    if n < 2 || !(extent > 0.0) {
        return Err(hvsim_core::Error::InvalidParam("need n >= 2 and extent > 0".into()));
    }
    let step = 2.0 * extent / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        let fy = extent - row as f64 * step;
        for col in 0..n {
            let fx = -extent + col as f64 * step;
            let w = if fx == 0.0 && fy == 0.0 {
                0.0
            } else {
                hvs::mask_weight((maskee_fx, maskee_fy), (fx, fy), &config)?
            };
            out.push(w);
        }
    }
    Ok(out)
}

/// Slice `slice` of one synthesized stack before and after perception, as
/// two 8-bit grayscale images back to back (`nx*ny` bytes each).
pub fn perceive_slice_impl(
    level: u8,
    source: usize,
    lesion: bool,
    method: &str,
    masking: bool,
    slice: usize,
) -> Result<Vec<u8>> {
    let method: Method = method.parse()?;
    let synth = SynthConfig {
        dims: DEMO_DIMS,
        levels: vec![level],
        ..SynthConfig::default()
    };
    synth.validate()?;
    if slice >= DEMO_DIMS.nz {
        return Err(hvsim_core::Error::InvalidParam(format!("slice {slice} out of range")));
    }
    let (healthy, with_lesion, _) = make_twins(&synth, level, source)?;
    let stack = if lesion { with_lesion } else { healthy };
    let viewing = ViewingConfig::default();
    let model = if masking { Model::CsfPlusMasking } else { Model::CsfOnly };
    let config = HvsConfig {
        method,
        ..HvsConfig::default()
    };
    let perceived = hvs::perceive(&stack, &viewing, &config, model)?;
    let to_byte = |p: f64| (p.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8;
    let span = viewing.l_max - viewing.l_min;
    let mut out: Vec<u8> = stack.slice(slice).iter().map(|&v| to_byte(v as f64)).collect();
    out.extend(perceived.slice(slice).iter().map(|&l| to_byte((l - viewing.l_min) / span)));
    Ok(out)
}

#[wasm_bindgen]
pub fn csf_curve(velocity: f64, rho_max: f64, n: usize) -> std::result::Result<Vec<f64>, JsError> {
    csf_curve_impl(velocity, rho_max, n).map_err(js)
}

#[wasm_bindgen]
pub fn mask_weight_map(
    maskee_fx: f64,
    maskee_fy: f64,
    extent: f64,
    n: usize,
    alpha_max_deg: f64,
    decay: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    mask_weight_map_impl(maskee_fx, maskee_fy, extent, n, alpha_max_deg, decay).map_err(js)
}

#[wasm_bindgen]
pub fn perceive_slice(
    level: u8,
    source: usize,
    lesion: bool,
    method: &str,
    masking: bool,
    slice: usize,
) -> std::result::Result<Vec<u8>, JsError> {
    perceive_slice_impl(level, source, lesion, method, masking, slice).map_err(js)
}

#[wasm_bindgen]
pub fn demo_dims() -> Vec<usize> {
    vec![DEMO_DIMS.nx, DEMO_DIMS.ny, DEMO_DIMS.nz]
}
