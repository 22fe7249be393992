//! Desk-scale text-conditioned latent diffusion with control-representation
//! extraction, downstream probes, and an ablation harness.
//!
//! Module map:
//! - [`nn`]: tensors, tape autodiff, numeric kernels, layers, AdamW.
//! - [`world`]: synthetic grounded-scenes generator, captions, gaze
//!   environment, scripted expert, on-disk dataset formats.
//! - [`ldm`]: noise schedule, text encoder, VAE, U-Net with block taps,
//!   training, sampling, checkpoints.
//! - [`extract`]: frozen-backbone feature extraction, tap unification,
//!   learnable compression, word-level attention maps.
//! - [`heads`]: behavior-cloning policy, bounding-box and mask probes,
//!   evaluation reports.
//! - [`bench`]: experiment configs, the ablation matrix, renderers, split
//!   audits, reference orderings.

pub mod bench;
pub mod extract;
pub mod heads;
pub mod ldm;
pub mod nn;
pub mod util;
pub mod world;
