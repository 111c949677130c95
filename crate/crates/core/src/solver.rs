//! Reconstruction from indirect measurements: minimize
//!
//!   S(ξ) = ‖A·decode(ξ) − y‖² + μ·Σ_λ w_λ·|ξ_λ|
//!
//! over the coefficient vector ξ with the decoder frozen (eval mode), by
//! proximal gradient descent with backtracking and optional momentum. The
//! decoder is a trained network, so the problem is nonconvex: the solver
//! guarantees a monotone objective over accepted steps and returns the best
//! iterate, nothing stronger.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ndtensor::{BnMode, Tape, Tensor};
use crate::tfunet::{
    decode_vars, encode, register_params, register_pyramid, NetworkParams, PyramidLayout, SegmentKind,
};

/// Bounded linear measurement map with an explicit adjoint.
pub trait ForwardOperator: Sync {
    fn apply(&self, x: &Image) -> Vec<f64>;
    fn adjoint(&self, y: &[f64]) -> Image;
    fn data_len(&self) -> usize;
    /// (height, width) of the image domain.
    fn image_shape(&self) -> (usize, usize);
    fn name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Concrete operators
// ---------------------------------------------------------------------------

pub struct IdentityOp {
    pub height: usize,
    pub width: usize,
}

impl ForwardOperator for IdentityOp {
    fn apply(&self, x: &Image) -> Vec<f64> {
        x.data.clone()
    }

    fn adjoint(&self, y: &[f64]) -> Image {
        Image { height: self.height, width: self.width, data: y.to_vec() }
    }

    fn data_len(&self) -> usize {
        self.height * self.width
    }

    fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Sampling operator: keeps the known pixels (in flat index order); the
/// adjoint zero-fills the unknown ones.
pub struct MaskOp {
    height: usize,
    width: usize,
    known: Vec<usize>,
    mask: Vec<bool>,
}

impl MaskOp {
    pub fn from_bitmap(height: usize, width: usize, mask: Vec<bool>) -> Result<MaskOp> {
        if mask.len() != height * width {
            return Err(Error::shape("mask", format!("bitmap has {} entries for {height}x{width}", mask.len())));
        }
        let known: Vec<usize> = mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect();
        if known.is_empty() {
            return Err(Error::arg("mask", "empty mask: no known pixels"));
        }
        Ok(MaskOp { height, width, known, mask })
    }

    /// Bernoulli mask keeping approximately `fraction` of the pixels.
    pub fn random(height: usize, width: usize, fraction: f64, seed: u64) -> Result<MaskOp> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::arg("mask", format!("fraction {fraction} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..height * width).map(|_| rng.random_range(0.0..1.0) < fraction).collect();
        MaskOp::from_bitmap(height, width, mask)
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.mask
    }

    pub fn known_count(&self) -> usize {
        self.known.len()
    }
}

impl ForwardOperator for MaskOp {
    fn apply(&self, x: &Image) -> Vec<f64> {
        self.known.iter().map(|&i| x.data[i]).collect()
    }

    fn adjoint(&self, y: &[f64]) -> Image {
        let mut data = vec![0.0; self.height * self.width];
        for (&i, &v) in self.known.iter().zip(y) {
            data[i] = v;
        }
        Image { height: self.height, width: self.width, data }
    }

    fn data_len(&self) -> usize {
        self.known.len()
    }

    fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn name(&self) -> &'static str {
        "mask"
    }
}

/// Stencil blur with replicate (clamp) boundary handling, so constants map
/// to themselves. The adjoint is the exact transpose: a scatter of the same
/// stencil, which in the interior equals correlation with the flipped
/// stencil.
pub struct BlurOp {
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stencil: Vec<f64>,
}

impl BlurOp {
    pub fn from_stencil(height: usize, width: usize, kh: usize, kw: usize, stencil: Vec<f64>) -> Result<BlurOp> {
        if stencil.len() != kh * kw || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::arg("blur", "stencil must be odd-sized and match kh*kw"));
        }
        if stencil.iter().any(|&v| v < 0.0) {
            return Err(Error::arg("blur", "stencil entries must be nonnegative"));
        }
        let sum: f64 = stencil.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::arg("blur", format!("stencil sums to {sum}, expected 1")));
        }
        // Renormalize exactly so constants are preserved to machine precision.
        let stencil = stencil.iter().map(|v| v / sum).collect();
        Ok(BlurOp { height, width, kh, kw, stencil })
    }

    pub fn gaussian(height: usize, width: usize, ksize: usize, sigma: f64) -> Result<BlurOp> {
        if ksize % 2 == 0 || sigma <= 0.0 {
            return Err(Error::arg("blur", "gaussian needs odd ksize and positive sigma"));
        }
        let c = (ksize / 2) as f64;
        let mut stencil = Vec::with_capacity(ksize * ksize);
        for i in 0..ksize {
            for j in 0..ksize {
                let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
                stencil.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let sum: f64 = stencil.iter().sum();
        for v in &mut stencil {
            *v /= sum;
        }
        BlurOp::from_stencil(height, width, ksize, ksize, stencil)
    }
}

impl ForwardOperator for BlurOp {
    fn apply(&self, x: &Image) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let (ch, cw) = (self.kh / 2, self.kw / 2);
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for u in 0..self.kh {
                    let si = (i + u).saturating_sub(ch).min(h - 1);
                    for v in 0..self.kw {
                        let sj = (j + v).saturating_sub(cw).min(w - 1);
                        acc += self.stencil[u * self.kw + v] * x.data[si * w + sj];
                    }
                }
                out[i * w + j] = acc;
            }
        }
        out
    }

    fn adjoint(&self, y: &[f64]) -> Image {
        let (h, w) = (self.height, self.width);
        let (ch, cw) = (self.kh / 2, self.kw / 2);
        let mut data = vec![0.0; h * w];
        // Exact transpose of the clamped gather above.
        for i in 0..h {
            for j in 0..w {
                let g = y[i * w + j];
                for u in 0..self.kh {
                    let si = (i + u).saturating_sub(ch).min(h - 1);
                    for v in 0..self.kw {
                        let sj = (j + v).saturating_sub(cw).min(w - 1);
                        data[si * w + sj] += self.stencil[u * self.kw + v] * g;
                    }
                }
            }
        }
        Image { height: h, width: w, data }
    }

    fn data_len(&self) -> usize {
        self.height * self.width
    }

    fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn name(&self) -> &'static str {
        "blur"
    }
}

// ---------------------------------------------------------------------------
// Operator checks
// ---------------------------------------------------------------------------

fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image { height: h, width: w, data: (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

/// Worst relative deviation of ⟨Ax, y⟩ = ⟨x, Aᵀy⟩ over random pairs.
pub fn check_adjoint(op: &dyn ForwardOperator, trials: usize, seed: u64) -> f64 {
    let (h, w) = op.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = rand_image(&mut rng, h, w);
        let y: Vec<f64> = (0..op.data_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax = op.apply(&x);
        let aty = op.adjoint(&y);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        let xn = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / (xn * yn).max(1e-300));
    }
    worst
}

/// Worst relative deviation from A(ax + by) = a·Ax + b·Ay.
pub fn check_linearity(op: &dyn ForwardOperator, trials: usize, seed: u64) -> f64 {
    let (h, w) = op.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = rand_image(&mut rng, h, w);
        let y = rand_image(&mut rng, h, w);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mixed = Image {
            height: h,
            width: w,
            data: x.data.iter().zip(&y.data).map(|(xv, yv)| a * xv + b * yv).collect(),
        };
        let lhs = op.apply(&mixed);
        let ax = op.apply(&x);
        let ay = op.apply(&y);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..lhs.len() {
            let rhs = a * ax[i] + b * ay[i];
            num += (lhs[i] - rhs) * (lhs[i] - rhs);
            den += rhs * rhs;
        }
        worst = worst.max((num / den.max(1e-300)).sqrt());
    }
    worst
}

/// Operator-norm estimate by power iteration on AᵀA.
pub fn operator_norm(op: &dyn ForwardOperator, iters: usize, seed: u64) -> f64 {
    let (h, w) = op.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand_image(&mut rng, h, w);
    let mut sigma2 = 0.0;
    for _ in 0..iters {
        let av = op.apply(&v);
        let atav = op.adjoint(&av);
        let vv: f64 = v.data.iter().map(|x| x * x).sum();
        sigma2 = v.data.iter().zip(&atav.data).map(|(a, b)| a * b).sum::<f64>() / vv.max(1e-300);
        let norm: f64 = atav.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = Image { height: h, width: w, data: atav.data.iter().map(|x| x / norm).collect() };
    }
    sigma2.max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Objective and prox
// ---------------------------------------------------------------------------

/// Entrywise soft thresholding: sign(v)·max(|v| − t, 0). Exact proximal map
/// of the weighted ℓ¹ penalty.
pub fn soft_threshold(values: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if values.len() != thresholds.len() {
        return Err(Error::shape(
            "soft_threshold",
            format!("{} values vs {} thresholds", values.len(), thresholds.len()),
        ));
    }
    if let Some(t) = thresholds.iter().find(|&&t| t < 0.0) {
        return Err(Error::arg("soft_threshold", format!("negative threshold {t}")));
    }
    Ok(values
        .iter()
        .zip(thresholds)
        .map(|(&v, &t)| {
            let mag = v.abs() - t;
            if mag > 0.0 {
                v.signum() * mag
            } else {
                0.0
            }
        })
        .collect())
}

/// How ξ is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStrategy {
    /// Encode the zero-filled adjoint image: ξ₀ = encode(Aᵀy).
    EncodeAdjoint,
    Zero,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub mu: f64,
    /// Penalty weight per high-pass level, finest first. `None` derives
    /// w_l = 2^(-l) from the architecture. The coarse and bypass stacks are
    /// outside the penalized set (weight 0), mirroring the training loss.
    pub level_weights: Option<Vec<f64>>,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Multiplied into the step on rejection (in (0, 1)).
    pub backtrack: f64,
    /// Step growth after an accepted iteration.
    pub step_growth: f64,
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Consecutive small-change iterations that declare convergence.
    pub patience: usize,
    pub accelerated: bool,
    pub init: InitStrategy,
}

impl SolverConfig {
    pub fn new(mu: f64) -> SolverConfig {
        SolverConfig {
            mu,
            level_weights: None,
            max_iters: 500,
            initial_step: 1.0,
            backtrack: 0.5,
            step_growth: 1.2,
            tol: 1e-6,
            patience: 5,
            accelerated: true,
            init: InitStrategy::EncodeAdjoint,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mu <= 0.0 {
            return Err(Error::arg("solver", "mu must be positive"));
        }
        if !(0.0..1.0).contains(&self.backtrack) || self.backtrack == 0.0 {
            return Err(Error::arg("solver", "backtrack factor must lie in (0, 1)"));
        }
        if self.initial_step <= 0.0 || self.step_growth < 1.0 {
            return Err(Error::arg("solver", "need positive initial step and growth >= 1"));
        }
        if let Some(w) = &self.level_weights {
            // Weight floor over the penalized set.
            if w.iter().any(|&v| v <= 0.0) {
                return Err(Error::arg("solver", "penalized level weights must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-entry penalty weights w_λ for a flattened pyramid.
pub fn entry_weights(layout: &PyramidLayout, config: &SolverConfig) -> Result<Vec<f64>> {
    let level_w: Vec<f64> = match &config.level_weights {
        Some(w) => {
            if w.len() != layout.arch.levels {
                return Err(Error::arg(
                    "solver",
                    format!("{} level weights for {} levels", w.len(), layout.arch.levels),
                ));
            }
            w.clone()
        }
        None => (0..layout.arch.levels).map(|l| 0.5f64.powi(l as i32 + 1)).collect(),
    };
    if level_w.iter().any(|&v| v <= 0.0) {
        return Err(Error::arg("solver", "penalized level weights must be positive"));
    }
    let mut w = vec![0.0; layout.total_len()];
    for seg in &layout.segments {
        let value = match seg.kind {
            SegmentKind::HighPass => level_w[seg.level - 1],
            SegmentKind::Coarse | SegmentKind::Bypass => 0.0,
        };
        w[seg.offset..seg.offset + seg.len()].fill(value);
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveValue {
    pub total: f64,
    pub data_term: f64,
    pub penalty: f64,
}

fn penalty_of(xi: &[f64], weights: &[f64], mu: f64) -> f64 {
    mu * xi.iter().zip(weights).map(|(v, w)| w * v.abs()).sum::<f64>()
}

/// Decode ξ and return the reconstruction with the data term ‖AΦ(ξ) − y‖².
fn forward_data(
    params: &NetworkParams,
    layout: &PyramidLayout,
    xi: &[f64],
    op: &dyn ForwardOperator,
    y: &[f64],
) -> Result<(Image, f64)> {
    let pyr = layout.unflatten(xi)?;
    let out = crate::tfunet::decode(params, &pyr, BnMode::Eval)?;
    let img = Image::from_tensor(&out, 0)?;
    let ax = op.apply(&img);
    let data: f64 = ax.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((img, data))
}

/// Exact evaluation of the objective at ξ.
pub fn objective(
    params: &NetworkParams,
    layout: &PyramidLayout,
    xi: &[f64],
    op: &dyn ForwardOperator,
    y: &[f64],
    mu: f64,
    weights: &[f64],
) -> Result<ObjectiveValue> {
    let (_, data) = forward_data(params, layout, xi, op, y)?;
    let penalty = penalty_of(xi, weights, mu);
    Ok(ObjectiveValue { total: data + penalty, data_term: data, penalty })
}

/// Data term and its gradient ∇_ξ‖AΦ(ξ) − y‖² via the decoder tape, seeded
/// with 2·Aᵀ(AΦ(ξ) − y).
fn data_grad(
    params: &NetworkParams,
    layout: &PyramidLayout,
    xi: &[f64],
    op: &dyn ForwardOperator,
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let pyr = layout.unflatten(xi)?;
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let pv = register_pyramid(&mut tape, &pyr);
    let out = decode_vars(&mut tape, params, &vars, &pv, BnMode::Eval, None)?;
    let img = Image::from_tensor(tape.value(out), 0)?;
    let ax = op.apply(&img);
    let residual: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
    let data: f64 = residual.iter().map(|r| r * r).sum();

    let seed_img = op.adjoint(&residual);
    let seed = Tensor::from_raw(
        vec![1, 1, seed_img.height, seed_img.width],
        seed_img.data.iter().map(|v| 2.0 * v).collect(),
    );
    let grads = tape.backward_seeded(out, &seed)?;

    let mut flat = Vec::with_capacity(layout.total_len());
    for &(h, v, d) in &pv.levels {
        flat.extend_from_slice(grads.get_or_zeros(&tape, h).data());
        flat.extend_from_slice(grads.get_or_zeros(&tape, v).data());
        flat.extend_from_slice(grads.get_or_zeros(&tape, d).data());
    }
    flat.extend_from_slice(grads.get_or_zeros(&tape, pv.coarse).data());
    if let Some(bp) = &pv.bypass {
        for &b in bp {
            flat.extend_from_slice(grads.get_or_zeros(&tape, b).data());
        }
    }
    Ok((data, flat))
}

/// One accepted iteration of the objective history.
#[derive(Clone, Copy, Debug)]
pub struct HistoryRow {
    pub iter: usize,
    pub data_term: f64,
    pub penalty: f64,
    pub total: f64,
    pub step: f64,
}

pub struct Solution {
    pub xi: Vec<f64>,
    pub image: Image,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub objective: ObjectiveValue,
}

const MIN_STEP: f64 = 1e-14;

/// Minimize the objective over ξ with the decoder frozen.
///
/// Refuses to run if the operator fails its adjoint check. Every recorded
/// step decreases the objective; with acceleration the momentum restarts
/// whenever it would not.
pub fn solve(
    params: &NetworkParams,
    op: &dyn ForwardOperator,
    y: &[f64],
    config: &SolverConfig,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<Solution> {
    config.validate()?;
    if y.len() != op.data_len() {
        return Err(Error::shape(
            "solve",
            format!("data has {} entries, operator expects {}", y.len(), op.data_len()),
        ));
    }
    let adj_dev = check_adjoint(op, 5, 0xADC0FFEE);
    if adj_dev > 1e-10 {
        return Err(Error::AdjointCheck { deviation: adj_dev, tolerance: 1e-10 });
    }
    let (h, w) = op.image_shape();
    let layout = PyramidLayout::new(&params.arch, 1, h, w)?;
    let weights = entry_weights(&layout, config)?;

    let mut xi = match config.init {
        InitStrategy::Zero => vec![0.0; layout.total_len()],
        InitStrategy::EncodeAdjoint => {
            let back = op.adjoint(y);
            layout.flatten(&encode(params, &back.to_tensor(), BnMode::Eval)?)?
        }
    };
    let (_, mut f_xi) = forward_data(params, &layout, &xi, op, y)?;
    let mut s_xi = f_xi + penalty_of(&xi, &weights, config.mu);
    if !s_xi.is_finite() {
        return Err(Error::SolverDiverged { iter: 0 });
    }

    let mut history = Vec::new();
    let mut step = config.initial_step;
    let mut momentum = xi.clone();
    let mut t_acc = 1.0f64;
    let mut small_changes = 0usize;
    let mut converged = false;

    // Backtracking prox step from `point`; accepts only if the smooth-term
    // model bound holds and the full objective does not increase over S(ξ).
    let attempt = |point: &[f64],
                   step0: f64,
                   s_current: f64|
     -> Result<Option<(Vec<f64>, f64, f64, f64)>> {
        let (f_pt, grad) = data_grad(params, &layout, point, op, y)?;
        if !f_pt.is_finite() {
            return Err(Error::SolverDiverged { iter: usize::MAX });
        }
        let mut s = step0;
        while s >= MIN_STEP {
            let shifted: Vec<f64> = point.iter().zip(&grad).map(|(p, g)| p - s * g).collect();
            let thresholds: Vec<f64> = weights.iter().map(|w| s * config.mu * w).collect();
            let cand = soft_threshold(&shifted, &thresholds)?;
            let (_, f_c) = forward_data(params, &layout, &cand, op, y)?;
            if f_c.is_finite() {
                let diff_sq: f64 = cand.iter().zip(point).map(|(c, p)| (c - p) * (c - p)).sum();
                let lin: f64 = cand.iter().zip(point).zip(&grad).map(|((c, p), g)| (c - p) * g).sum();
                let bound = f_pt + lin + diff_sq / (2.0 * s) + 1e-12 * (1.0 + f_pt.abs());
                let total = f_c + penalty_of(&cand, &weights, config.mu);
                if f_c <= bound && total <= s_current {
                    return Ok(Some((cand, f_c, total, s)));
                }
            }
            s *= config.backtrack;
        }
        Ok(None)
    };

    for iter in 1..=config.max_iters {
        let use_momentum = config.accelerated && t_acc > 1.0;
        let mut accepted = if use_momentum {
            attempt(&momentum, step, s_xi)?
        } else {
            None
        };
        if accepted.is_none() {
            // Plain proximal step from the current iterate (also the
            // momentum restart path).
            t_acc = 1.0;
            accepted = attempt(&xi, step, s_xi)?;
        }
        let Some((cand, f_c, s_c, used)) = accepted else {
            // No decreasing step exists above the step floor.
            converged = true;
            break;
        };

        let prev_total = s_xi;
        let xi_old = std::mem::replace(&mut xi, cand);
        f_xi = f_c;
        s_xi = s_c;
        step = (used * config.step_growth).min(1e6);

        if config.accelerated {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let beta = (t_acc - 1.0) / t_next;
            momentum = xi.iter().zip(&xi_old).map(|(c, o)| c + beta * (c - o)).collect();
            t_acc = t_next;
        }

        let row = HistoryRow { iter, data_term: f_xi, penalty: s_xi - f_xi, total: s_xi, step: used };
        progress(&row);
        history.push(row);

        if !s_xi.is_finite() {
            return Err(Error::SolverDiverged { iter });
        }
        if (prev_total - s_xi).abs() <= config.tol * prev_total.abs().max(1e-12) {
            small_changes += 1;
            if small_changes >= config.patience {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }

    let (image, data) = forward_data(params, &layout, &xi, op, y)?;
    let penalty = penalty_of(&xi, &weights, config.mu);
    Ok(Solution {
        xi,
        image,
        history,
        converged,
        objective: ObjectiveValue { total: data + penalty, data_term: data, penalty },
    })
}

/// Drift of the reconstruction under measurement noise of growing level.
#[derive(Clone, Copy, Debug)]
pub struct ProbeRow {
    pub delta: f64,
    pub mean_drift: f64,
}

/// Solve with y + δ·(unit-norm noise) for each δ and report
/// ‖x*_δ − x*_0‖₂ averaged over noise draws.
pub fn noise_stability_probe(
    params: &NetworkParams,
    op: &dyn ForwardOperator,
    y: &[f64],
    config: &SolverConfig,
    deltas: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    let baseline = solve(params, op, y, config, &mut |_| {})?;
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let mut drift_sum = 0.0;
        for draw in 0..draws {
            let drift = if delta == 0.0 {
                let again = solve(params, op, y, config, &mut |_| {})?;
                diff_norm(&again.image, &baseline.image)
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(crate::phantoms::derive_seed(seed, (di * draws + draw) as u64));
                let mut noise: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in &mut noise {
                    *v /= norm;
                }
                let perturbed: Vec<f64> = y.iter().zip(&noise).map(|(a, n)| a + delta * n).collect();
                let sol = solve(params, op, &perturbed, config, &mut |_| {})?;
                diff_norm(&sol.image, &baseline.image)
            };
            drift_sum += drift;
        }
        rows.push(ProbeRow { delta, mean_drift: drift_sum / draws as f64 });
    }
    Ok(rows)
}

fn diff_norm(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
