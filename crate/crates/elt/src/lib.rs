//! Weight-tied looped transformers with intra-loop self distillation.
//!
//! A composite block of N unique transformer layers is applied L times per
//! model invocation, decoupling parameter count (fixed by N) from effective
//! depth (N x L). Training runs a teacher path at the full loop budget and a
//! stochastically sampled student prefix of the same trajectory, with the
//! teacher's detached output distilled into the student. The result is a
//! single model usable at any loop count at inference time.
//!
//! The crate covers both generation regimes at desk scale: masked parallel
//! decoding over discrete token grids and DDPM denoising over continuous
//! latents, plus exact parameter/FLOPs accounting and an evaluation harness
//! (enumerable-distribution metrics, elasticity curves, Pareto sweeps).

pub mod ckpt;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod evalbench;
pub mod expcfg;
pub mod masked;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;
pub mod verify;

pub use error::{EltError, Result};
