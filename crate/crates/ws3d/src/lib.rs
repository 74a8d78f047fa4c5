//! Weakly supervised tooth point-cloud segmentation at desk scale.
//!
//! The pipeline trains a small per-point network to label an intraoral-style
//! scan (gingiva plus one class per tooth) from a single annotated point per
//! tooth. The sparse supervision is amplified by a promptable 2D mask oracle:
//! confident per-class point groups are averaged, projected into a rendered
//! view, and handed to the oracle as pixel prompts; the returned object masks
//! are lifted back to 3D where they drive a contrastive foreground loss and a
//! background cross-entropy loss. Everything is deterministic for a fixed
//! seed, runs on one CPU core, and is sized so the full loop finishes in
//! minutes.
//!
//! The crate is organized as a library with one thin `ws3d` binary on top.
//! Start from the runnable examples, one per capability:
//!
//! * `generate_dataset` - synthetic jaw scans and sparse labels
//! * `render_views` - pinhole projection, z-buffer splatting, image export
//! * `gradient_check` - analytic gradients vs central differences
//! * `prompt_generation` - confidence-aware prompts vs plain averaging
//! * `mask_oracle_demo` - ground-truth-backed oracle, noise knobs, background
//!   mask algebra
//! * `external_oracle` - the subprocess mask-oracle protocol, both sides
//! * `train_pipeline` - end-to-end training, baseline vs mask-guided
//! * `upsample_eval` - subsampled inference with k-nearest interpolation
//!
//! Module map: [`synthgen`] makes scans, [`camera`] renders them, [`segnet`]
//! is the network, [`losses`] the objectives, [`prompter`] turns predictions
//! into pixel prompts, [`mask_oracle`] answers them, [`mrl`] lifts masks back
//! to point groups, [`trainer`] owns the loop and metrics, [`cli`] the
//! command-line entry points.

pub mod camera;
pub mod cli;
pub mod error;
pub mod losses;
pub mod mask_oracle;
pub mod mrl;
pub mod numcheck;
pub mod pnm;
pub mod prompter;
pub mod rng;
pub mod segnet;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
