//! Fixed 2-D Haar tight-frame filter bank.
//!
//! Analysis is a stride-2 correlation of each channel with the four 2x2
//! filters built from the tensor products of the 1-D low-pass
//! L = 2^(-1/2)·[1, 1] and high-pass H = 2^(-1/2)·[1, -1]; synthesis is the
//! exact adjoint. The four filters are orthonormal, so the filter bank is a
//! tight frame with constant c = 1 and analysis preserves the squared norm.
//!
//! Both directions run as a single fixed-kernel conv2d / conv2d_transpose
//! over a block-diagonal kernel, so they are ordinary tape ops and
//! gradients flow through the fixed legs of the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{Tape, Tensor, Var};

/// The four 2x2 analysis filters. Entries are exactly ±1/2 (the products of
/// the normalized 1-D filter taps), row-major.
#[derive(Clone, Copy, Debug)]
pub struct HaarFilters {
    /// LLᵀ — low-pass.
    pub ll: [f64; 4],
    /// LHᵀ — vertical-detail high-pass.
    pub lh: [f64; 4],
    /// HLᵀ — horizontal-detail high-pass.
    pub hl: [f64; 4],
    /// HHᵀ — diagonal high-pass.
    pub hh: [f64; 4],
}

impl HaarFilters {
    pub fn new() -> HaarFilters {
        HaarFilters {
            ll: [0.5, 0.5, 0.5, 0.5],
            lh: [0.5, -0.5, 0.5, -0.5],
            hl: [0.5, 0.5, -0.5, -0.5],
            hh: [0.5, -0.5, -0.5, 0.5],
        }
    }

    /// Subband order used throughout: low, h, v, d.
    fn stacked(&self) -> [[f64; 4]; 4] {
        // h detects horizontal structure (variation across rows, HLᵀ),
        // v detects vertical structure (variation across columns, LHᵀ).
        [self.ll, self.hl, self.lh, self.hh]
    }
}

impl Default for HaarFilters {
    fn default() -> Self {
        HaarFilters::new()
    }
}

/// Block-diagonal analysis kernel [4C, C, 2, 2]: output channel g·C + c is
/// subband g of input channel c, so channels never mix.
pub(crate) fn bank_kernel(channels: usize) -> Tensor {
    let filters = HaarFilters::new().stacked();
    let mut data = vec![0.0; 4 * channels * channels * 4];
    for (g, filt) in filters.iter().enumerate() {
        for c in 0..channels {
            let base = (((g * channels + c) * channels) + c) * 4;
            data[base..base + 4].copy_from_slice(filt);
        }
    }
    Tensor::from_raw(vec![4 * channels, channels, 2, 2], data)
}

fn check_even(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::arg(op, format!("spatial size {h}x{w} must be even and nonzero")));
    }
    Ok(())
}

/// Stride-2 Haar analysis on the tape: returns (low, h, v, d) subband vars,
/// each [B, C, H/2, W/2].
pub fn analysis_vars(tape: &mut Tape, x: Var) -> Result<(Var, Var, Var, Var)> {
    let (_, c, h, w) = tape.value(x).dims4()?;
    check_even("haar::analysis", h, w)?;
    let kernel = tape.leaf(bank_kernel(c));
    let zero_bias = tape.leaf(Tensor::zeros(vec![4 * c]));
    let stacked = tape.conv2d(x, kernel, zero_bias, 2, 0)?;
    let low = tape.slice_channels(stacked, 0, c)?;
    let hs = tape.slice_channels(stacked, c, c)?;
    let vs = tape.slice_channels(stacked, 2 * c, c)?;
    let ds = tape.slice_channels(stacked, 3 * c, c)?;
    Ok((low, hs, vs, ds))
}

/// Adjoint of [`analysis_vars`]: reconstructs [B, C, H, W] from the four
/// subbands. For these orthonormal filters synthesis∘analysis = identity.
pub fn synthesis_vars(tape: &mut Tape, low: Var, h: Var, v: Var, d: Var) -> Result<Var> {
    let shape = tape.value(low).shape().to_vec();
    for (name, var) in [("h", h), ("v", v), ("d", d)] {
        if tape.value(var).shape() != shape {
            return Err(Error::shape(
                "haar::synthesis",
                format!("subband {name} shape {:?} vs low {:?}", tape.value(var).shape(), shape),
            ));
        }
    }
    let c = shape[1];
    let kernel = tape.leaf(bank_kernel(c));
    let stacked = tape.concat(&[low, h, v, d])?;
    tape.conv2d_transpose(stacked, kernel, 2, 0)
}

/// Value-level analysis.
pub fn analysis(x: &Tensor) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (l, h, v, d) = analysis_vars(&mut tape, xv)?;
    Ok((
        tape.value(l).clone(),
        tape.value(h).clone(),
        tape.value(v).clone(),
        tape.value(d).clone(),
    ))
}

/// Value-level synthesis.
pub fn synthesis(low: &Tensor, h: &Tensor, v: &Tensor, d: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let lv = tape.leaf(low.clone());
    let hv = tape.leaf(h.clone());
    let vv = tape.leaf(v.clone());
    let dv = tape.leaf(d.clone());
    let out = synthesis_vars(&mut tape, lv, hv, vv, dv)?;
    Ok(tape.value(out).clone())
}

/// Result of probing the frame identity on random images.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameCheckReport {
    /// Least-squares fit of c in synthesis(analysis(x)) = c·x.
    pub c_estimate: f64,
    /// Largest absolute deviation from c·x over all trials and pixels.
    pub max_deviation: f64,
    pub trials: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// Apply synthesis∘analysis to random images and report the best-fit frame
/// constant and the worst deviation from c·identity.
pub fn frame_check(trials: usize, height: usize, width: usize, seed: u64) -> Result<FrameCheckReport> {
    use rand::Rng;
    use rand::SeedableRng;

    if trials == 0 {
        return Err(Error::arg("frame_check", "need at least one trial"));
    }
    check_even("frame_check", height, width)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(trials);
    let mut num = 0.0;
    let mut den = 0.0;
    for _ in 0..trials {
        let data: Vec<f64> = (0..height * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::from_raw(vec![1, 1, height, width], data);
        let (l, h, v, d) = analysis(&x)?;
        let y = synthesis(&l, &h, &v, &d)?;
        num += x.dot(&y);
        den += x.dot(&x);
        pairs.push((x, y));
    }
    let c = num / den;
    let mut max_dev: f64 = 0.0;
    for (x, y) in &pairs {
        for (xi, yi) in x.data().iter().zip(y.data()) {
            max_dev = max_dev.max((yi - c * xi).abs());
        }
    }
    Ok(FrameCheckReport { c_estimate: c, max_deviation: max_dev, trials, height, width, seed })
}
