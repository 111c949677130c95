//! Sparse synthesis regularization with a tight-frame U-net.
//!
//! The crate trains a Haar tight-frame encoder/decoder pair as an
//! autoencoder with an ℓ¹ penalty on the encoded coefficients, runs
//! coefficient-thresholding experiments on the trained models, and
//! reconstructs images from indirect linear measurements by minimizing
//! a data-fit + weighted-ℓ¹ objective over the coefficient space with
//! the decoder frozen.
//!
//! Module map:
//!
//! - [`ndtensor`] — dense f64 tensors plus a reverse-mode tape covering
//!   exactly the op set the network needs.
//! - [`haar`] — fixed stride-2 Haar filter bank (analysis/synthesis) and
//!   the tight-frame identity checker.
//! - [`tfunet`] — the encoder/decoder architecture, coefficient pyramids,
//!   parameter initialization and the weight persistence format.
//! - [`phantoms`] — random geometric phantom corpora.
//! - [`training`] — the penalized autoencoder loss, Adam, and the epoch loop.
//! - [`metrics`] — SSIM / PSNR / image-distance and ratio tables.
//! - [`sparse_approx`] — per-channel coefficient thresholding experiments.
//! - [`solver`] — forward operators and the proximal-gradient solver.
//! - [`image`], [`io`], [`config`] — pixel buffers, file codecs, run configs.

pub mod config;
pub mod error;
#[doc(hidden)]
pub mod gradcheck;
pub mod haar;
pub mod image;
pub mod io;
pub mod metrics;
pub mod ndtensor;
pub(crate) mod par;
pub mod phantoms;
pub mod solver;
pub mod sparse_approx;
pub mod tfunet;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
pub use ndtensor::{BnMode, Gradients, Tape, Tensor, Var};
