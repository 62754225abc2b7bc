//! Simulation chain for a perception-aware numerical observer on image stacks.
//!
//! The pipeline is:
//!
//! 1. [`synth`] builds datasets of twin healthy/lesion stacks at graded
//!    background complexity.
//! 2. [`hvs`] maps each stack to luminance, takes its 3D spectrum
//!    ([`spectral`]), and attenuates every spatio-temporal component according
//!    to a spatio-temporal contrast sensitivity function, optional spatial
//!    contrast masking, and one of three perceived-amplitude methods.
//! 3. [`observer`] channelizes the perceived stacks with Laguerre–Gauss
//!    channels, trains a multi-slice Hotelling template and scores it by AUC.
//! 4. [`experiment`] orchestrates sweeps and writes result tables.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod hvs;
pub mod observer;
pub mod rng;
pub mod spectral;
pub mod stack;
pub mod synth;

pub use error::{Error, Result};
pub use hvs::{HvsConfig, Method, MnSemantics, Perceiver};
pub use observer::{ChannelSet, HotellingTemplate, ScoreRecord};
pub use spectral::{FrequencyStack, Volume};
pub use stack::{DatasetManifest, Dims, ImageStack, Label, ManifestEntry, ViewingConfig};
