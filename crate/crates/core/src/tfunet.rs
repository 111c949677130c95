//! Tight-frame U-net encoder/decoder.
//!
//! The encoder applies a learned conv + batch-norm + ReLU block per level
//! and splits the result with the fixed Haar filter bank; the high-pass
//! subbands (plus, in the bypass variant, the raw level input) become the
//! encoded coefficients and the low-pass subband feeds the next level. The
//! decoder runs the exact adjoint filter bank to climb back up, mixing each
//! reconstruction with the bypass stack through a learned conv block, and a
//! final learned deconvolution + batch-norm produces the image.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar;
use crate::ndtensor::{BnMode, Tape, Tensor, Var};

/// Batch-norm running-average momentum (`new = momentum·old + (1-momentum)·batch`).
pub const BN_MOMENTUM: f64 = 0.9;
/// Batch-norm variance regularizer.
pub const BN_EPS: f64 = 1e-5;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Number of downsampling/upsampling levels.
    pub levels: usize,
    /// Channels produced by the first convolution.
    pub base_channels: usize,
    /// Channel multiplier per level.
    pub channel_growth: usize,
    /// Square kernel size of every learned conv (odd).
    pub kernel_size: usize,
    /// Whether the identity bypass path is part of the architecture.
    pub bypass: bool,
}

impl ArchConfig {
    /// The reference configuration: 3 levels, 8 starting channels doubled
    /// per level, 3x3 kernels.
    pub fn reference(bypass: bool) -> ArchConfig {
        ArchConfig { levels: 3, base_channels: 8, channel_growth: 2, kernel_size: 3, bypass }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::arg("arch", "levels must be >= 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::arg("arch", "base_channels must be >= 1"));
        }
        if self.channel_growth == 0 {
            return Err(Error::arg("arch", "channel_growth must be >= 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::arg("arch", "kernel_size must be odd"));
        }
        Ok(())
    }

    /// Channels after the level-`l` encoder conv (d_l).
    pub fn conv_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_growth.pow(level as u32)
    }

    /// Channels entering level `l` (c_l): the grayscale input at the top,
    /// the previous low-pass stack below.
    pub fn level_in_channels(&self, level: usize) -> usize {
        if level == 0 {
            1
        } else {
            self.conv_channels(level - 1)
        }
    }

    /// Input channels of the level-`l` decoder conv.
    pub fn decoder_in_channels(&self, level: usize) -> usize {
        self.conv_channels(level) + if self.bypass { self.level_in_channels(level) } else { 0 }
    }

    /// Output channels of the level-`l` decoder conv. Inner levels return
    /// to their level input width; the top level keeps `base_channels` for
    /// the final deconvolution stage to collapse.
    pub fn decoder_out_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.base_channels
        } else {
            self.level_in_channels(level)
        }
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.levels;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::arg(
                "encode",
                format!("input {h}x{w} must be divisible by 2^levels = {f}"),
            ));
        }
        Ok(())
    }
}

/// One learned conv (or deconv) with its batch-norm state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl ConvBn {
    fn zeros(out_ch: usize, in_ch: usize, k: usize) -> ConvBn {
        ConvBn {
            weight: Tensor::zeros(vec![out_ch, in_ch, k, k]),
            bias: Tensor::zeros(vec![out_ch]),
            gamma: Tensor::filled(vec![out_ch], 1.0).unwrap(),
            beta: Tensor::zeros(vec![out_ch]),
            running_mean: Tensor::zeros(vec![out_ch]),
            running_var: Tensor::filled(vec![out_ch], 1.0).unwrap(),
        }
    }

    /// Deconv layout: weight is [in_ch, out_ch, k, k], batch-norm over out_ch.
    fn zeros_transpose(in_ch: usize, out_ch: usize, k: usize) -> ConvBn {
        ConvBn { weight: Tensor::zeros(vec![in_ch, out_ch, k, k]), ..ConvBn::zeros(out_ch, in_ch, k) }
    }
}

/// All trainable parameters and batch-norm state.
///
/// The encoder blocks form the θ partition, the decoder blocks plus the
/// output stage form the η partition.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    /// F_l blocks, level 0 first.
    pub encoder: Vec<ConvBn>,
    /// G_l blocks, level 0 first.
    pub decoder: Vec<ConvBn>,
    /// Final deconvolution + batch-norm (no ReLU).
    pub output: ConvBn,
}

/// Which half of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Encoder,
    Decoder,
    Output,
}

impl NetworkParams {
    /// All-zero weights (biases zero, gamma 1): useful as a shape skeleton.
    pub fn zeros(arch: &ArchConfig) -> Result<NetworkParams> {
        arch.validate()?;
        let k = arch.kernel_size;
        let encoder = (0..arch.levels)
            .map(|l| ConvBn::zeros(arch.conv_channels(l), arch.level_in_channels(l), k))
            .collect();
        let decoder = (0..arch.levels)
            .map(|l| ConvBn::zeros(arch.decoder_out_channels(l), arch.decoder_in_channels(l), k))
            .collect();
        let output = ConvBn::zeros_transpose(arch.base_channels, 1, k);
        Ok(NetworkParams { arch: arch.clone(), encoder, decoder, output })
    }

    fn blocks(&self) -> impl Iterator<Item = (String, ParamRole, &ConvBn)> {
        let enc = self.encoder.iter().enumerate().map(|(i, b)| (format!("enc.{i}"), ParamRole::Encoder, b));
        let dec = self.decoder.iter().enumerate().map(|(i, b)| (format!("dec.{i}"), ParamRole::Decoder, b));
        let out = std::iter::once(("out".to_string(), ParamRole::Output, &self.output));
        enc.chain(dec).chain(out)
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = (String, &mut ConvBn)> {
        let enc = self.encoder.iter_mut().enumerate().map(|(i, b)| (format!("enc.{i}"), b));
        let dec = self.decoder.iter_mut().enumerate().map(|(i, b)| (format!("dec.{i}"), b));
        let out = std::iter::once(("out".to_string(), &mut self.output));
        enc.chain(dec).chain(out)
    }

    /// Visit trainable tensors in a stable order.
    pub fn visit_trainable(&self, mut f: impl FnMut(&str, ParamRole, &Tensor)) {
        for (name, role, b) in self.blocks() {
            f(&format!("{name}.weight"), role, &b.weight);
            f(&format!("{name}.bias"), role, &b.bias);
            f(&format!("{name}.bn.gamma"), role, &b.gamma);
            f(&format!("{name}.bn.beta"), role, &b.beta);
        }
    }

    pub fn visit_trainable_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (name, b) in self.blocks_mut() {
            f(&format!("{name}.weight"), &mut b.weight);
            f(&format!("{name}.bias"), &mut b.bias);
            f(&format!("{name}.bn.gamma"), &mut b.gamma);
            f(&format!("{name}.bn.beta"), &mut b.beta);
        }
    }

    /// Visit every persisted tensor (trainable + running stats).
    pub fn visit_state(&self, mut f: impl FnMut(&str, ParamRole, &Tensor)) {
        for (name, role, b) in self.blocks() {
            f(&format!("{name}.weight"), role, &b.weight);
            f(&format!("{name}.bias"), role, &b.bias);
            f(&format!("{name}.bn.gamma"), role, &b.gamma);
            f(&format!("{name}.bn.beta"), role, &b.beta);
            f(&format!("{name}.bn.running_mean"), role, &b.running_mean);
            f(&format!("{name}.bn.running_var"), role, &b.running_var);
        }
    }

    pub fn visit_state_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (name, b) in self.blocks_mut() {
            f(&format!("{name}.weight"), &mut b.weight);
            f(&format!("{name}.bias"), &mut b.bias);
            f(&format!("{name}.bn.gamma"), &mut b.gamma);
            f(&format!("{name}.bn.beta"), &mut b.beta);
            f(&format!("{name}.bn.running_mean"), &mut b.running_mean);
            f(&format!("{name}.bn.running_var"), &mut b.running_var);
        }
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit_trainable(|_, _, t| n += t.numel());
        n
    }
}

/// He-style fan-in initialization: weights ~ N(0, 2/fan_in), biases and
/// batch-norm shifts zero, batch-norm scales one. Deterministic per seed.
pub fn init_params(arch: &ArchConfig, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(arch)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    params.visit_trainable_mut(|name, t| {
        if name.ends_with(".weight") {
            let shape = t.shape().to_vec();
            // [out,in,k,k] conv: fan_in = in·k². The transpose output stage
            // stores [in,out,k,k]; its fan-in is the leading dim times k².
            let fan_in = if name.starts_with("out") {
                shape[0] * shape[2] * shape[3]
            } else {
                shape[1] * shape[2] * shape[3]
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            t.update_data(|d| {
                for v in d {
                    *v = normal.sample(&mut rng);
                }
            });
        }
    });
    Ok(params)
}

// ---------------------------------------------------------------------------
// Coefficient pyramids
// ---------------------------------------------------------------------------

/// High-pass stacks of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStacks {
    pub h: Tensor,
    pub v: Tensor,
    pub d: Tensor,
}

/// The encoded domain: per-level high-pass stacks (index 0 = finest level),
/// the coarse low-pass stack, and the per-level bypass stacks when the
/// architecture has the bypass path.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPyramid {
    pub levels: Vec<LevelStacks>,
    pub coarse: Tensor,
    pub bypass: Option<Vec<Tensor>>,
}

impl CoeffPyramid {
    /// Total coefficient count.
    pub fn numel(&self) -> usize {
        let mut n = self.coarse.numel();
        for l in &self.levels {
            n += l.h.numel() + l.v.numel() + l.d.numel();
        }
        if let Some(bp) = &self.bypass {
            n += bp.iter().map(Tensor::numel).sum::<usize>();
        }
        n
    }

    pub fn count_nonzero(&self) -> usize {
        let mut n = 0;
        let mut count = |t: &Tensor| n += t.data().iter().filter(|v| **v != 0.0).count();
        for l in &self.levels {
            count(&l.h);
            count(&l.v);
            count(&l.d);
        }
        count(&self.coarse);
        if let Some(bp) = &self.bypass {
            bp.iter().for_each(&mut count);
        }
        n
    }
}

/// Zero the bypass stacks, leaving every other coefficient untouched.
pub fn zero_bypass(pyr: &CoeffPyramid) -> Result<CoeffPyramid> {
    match &pyr.bypass {
        None => Err(Error::arg("zero_bypass", "pyramid has no bypass stacks")),
        Some(bp) => {
            let zeroed = bp.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            Ok(CoeffPyramid { levels: pyr.levels.clone(), coarse: pyr.coarse.clone(), bypass: Some(zeroed) })
        }
    }
}

/// What a flattened segment holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    HighPass,
    Coarse,
    Bypass,
}

/// One contiguous run of the flattened coefficient vector.
#[derive(Clone, Debug)]
pub struct Segment {
    pub name: String,
    pub kind: SegmentKind,
    /// Pyramid level, 1 = finest. Bypass level 1 sits at full resolution.
    pub level: usize,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index map for the flattened coefficient vector of a given input size.
/// Flattening order: per level h, v, d (finest first), then coarse, then the
/// bypass stacks finest first.
#[derive(Clone, Debug)]
pub struct PyramidLayout {
    pub arch: ArchConfig,
    pub batch: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub segments: Vec<Segment>,
}

impl PyramidLayout {
    pub fn new(arch: &ArchConfig, batch: usize, input_h: usize, input_w: usize) -> Result<PyramidLayout> {
        arch.validate()?;
        arch.check_input_size(input_h, input_w)?;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind: SegmentKind, level: usize, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            segments.push(Segment { name, kind, level, shape, offset });
            offset += len;
        };
        for l in 0..arch.levels {
            let ch = arch.conv_channels(l);
            let (h, w) = (input_h >> (l + 1), input_w >> (l + 1));
            for stack in ["h", "v", "d"] {
                push(format!("level{}.{stack}", l + 1), SegmentKind::HighPass, l + 1, vec![batch, ch, h, w]);
            }
        }
        let lc = arch.conv_channels(arch.levels - 1);
        push(
            "coarse".to_string(),
            SegmentKind::Coarse,
            arch.levels,
            vec![batch, lc, input_h >> arch.levels, input_w >> arch.levels],
        );
        if arch.bypass {
            for l in 0..arch.levels {
                push(
                    format!("bypass{}", l + 1),
                    SegmentKind::Bypass,
                    l + 1,
                    vec![batch, arch.level_in_channels(l), input_h >> l, input_w >> l],
                );
            }
        }
        Ok(PyramidLayout { arch: arch.clone(), batch, input_h, input_w, segments })
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map(|s| s.offset + s.len()).unwrap_or(0)
    }

    /// Flatten a pyramid into one coefficient vector (bit-exact copy).
    pub fn flatten(&self, pyr: &CoeffPyramid) -> Result<Vec<f64>> {
        let tensors = self.collect_tensors(pyr)?;
        let mut out = Vec::with_capacity(self.total_len());
        for (seg, t) in self.segments.iter().zip(tensors) {
            if t.shape() != seg.shape.as_slice() {
                return Err(Error::shape(
                    "flatten",
                    format!("segment {} expects {:?}, got {:?}", seg.name, seg.shape, t.shape()),
                ));
            }
            out.extend_from_slice(t.data());
        }
        Ok(out)
    }

    /// Rebuild a pyramid from a flat coefficient vector (bit-exact copy).
    pub fn unflatten(&self, flat: &[f64]) -> Result<CoeffPyramid> {
        if flat.len() != self.total_len() {
            return Err(Error::shape(
                "unflatten",
                format!("expected {} coefficients, got {}", self.total_len(), flat.len()),
            ));
        }
        let take = |seg: &Segment| {
            Tensor::new(seg.shape.clone(), flat[seg.offset..seg.offset + seg.len()].to_vec())
        };
        let mut levels = Vec::with_capacity(self.arch.levels);
        let mut idx = 0;
        for _ in 0..self.arch.levels {
            let h = take(&self.segments[idx])?;
            let v = take(&self.segments[idx + 1])?;
            let d = take(&self.segments[idx + 2])?;
            idx += 3;
            levels.push(LevelStacks { h, v, d });
        }
        let coarse = take(&self.segments[idx])?;
        idx += 1;
        let bypass = if self.arch.bypass {
            let mut bp = Vec::with_capacity(self.arch.levels);
            for _ in 0..self.arch.levels {
                bp.push(take(&self.segments[idx])?);
                idx += 1;
            }
            Some(bp)
        } else {
            None
        };
        Ok(CoeffPyramid { levels, coarse, bypass })
    }

    fn collect_tensors<'a>(&self, pyr: &'a CoeffPyramid) -> Result<Vec<&'a Tensor>> {
        if pyr.levels.len() != self.arch.levels || pyr.bypass.is_some() != self.arch.bypass {
            return Err(Error::shape(
                "pyramid",
                format!(
                    "pyramid has {} levels (bypass: {}), layout expects {} (bypass: {})",
                    pyr.levels.len(),
                    pyr.bypass.is_some(),
                    self.arch.levels,
                    self.arch.bypass
                ),
            ));
        }
        let mut out = Vec::with_capacity(self.segments.len());
        for l in &pyr.levels {
            out.push(&l.h);
            out.push(&l.v);
            out.push(&l.d);
        }
        out.push(&pyr.coarse);
        if let Some(bp) = &pyr.bypass {
            out.extend(bp.iter());
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Tape handles of the registered parameters.
pub struct NetVars {
    encoder: Vec<BlockVars>,
    decoder: Vec<BlockVars>,
    output: BlockVars,
}

struct BlockVars {
    weight: Var,
    bias: Var,
    gamma: Var,
    beta: Var,
}

/// Identifies a batch-norm layer for running-stat updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockId {
    Encoder(usize),
    Decoder(usize),
    Output,
}

/// Running-stat updates produced by a train-mode forward pass, in execution
/// order. Apply with [`apply_running_updates`] once the step is accepted.
pub type RunningUpdates = Vec<(BlockId, Tensor, Tensor)>;

pub fn apply_running_updates(params: &mut NetworkParams, updates: RunningUpdates) {
    for (id, mean, var) in updates {
        let block = match id {
            BlockId::Encoder(i) => &mut params.encoder[i],
            BlockId::Decoder(i) => &mut params.decoder[i],
            BlockId::Output => &mut params.output,
        };
        block.running_mean = mean;
        block.running_var = var;
    }
}

/// Record every parameter as a tape leaf.
pub fn register_params(tape: &mut Tape, params: &NetworkParams) -> NetVars {
    let mut reg = |b: &ConvBn| BlockVars {
        weight: tape.leaf(b.weight.clone()),
        bias: tape.leaf(b.bias.clone()),
        gamma: tape.leaf(b.gamma.clone()),
        beta: tape.leaf(b.beta.clone()),
    };
    NetVars {
        encoder: params.encoder.iter().map(&mut reg).collect(),
        decoder: params.decoder.iter().map(&mut reg).collect(),
        output: reg(&params.output),
    }
}

impl NetVars {
    /// Visit trainable vars in the same order as
    /// [`NetworkParams::visit_trainable`].
    pub fn visit(&self, mut f: impl FnMut(&str, Var)) {
        let mut one = |name: String, b: &BlockVars| {
            f(&format!("{name}.weight"), b.weight);
            f(&format!("{name}.bias"), b.bias);
            f(&format!("{name}.bn.gamma"), b.gamma);
            f(&format!("{name}.bn.beta"), b.beta);
        };
        for (i, b) in self.encoder.iter().enumerate() {
            one(format!("enc.{i}"), b);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            one(format!("dec.{i}"), b);
        }
        one("out".to_string(), &self.output);
    }
}

/// Tape handles of an encoded pyramid.
pub struct PyramidVars {
    pub levels: Vec<(Var, Var, Var)>,
    pub coarse: Var,
    pub bypass: Option<Vec<Var>>,
}

impl PyramidVars {
    pub fn materialize(&self, tape: &Tape) -> CoeffPyramid {
        CoeffPyramid {
            levels: self
                .levels
                .iter()
                .map(|&(h, v, d)| LevelStacks {
                    h: tape.value(h).clone(),
                    v: tape.value(v).clone(),
                    d: tape.value(d).clone(),
                })
                .collect(),
            coarse: tape.value(self.coarse).clone(),
            bypass: self.bypass.as_ref().map(|bp| bp.iter().map(|&v| tape.value(v).clone()).collect()),
        }
    }
}

/// Record a pyramid's stacks as tape leaves (the solver's unknowns).
pub fn register_pyramid(tape: &mut Tape, pyr: &CoeffPyramid) -> PyramidVars {
    PyramidVars {
        levels: pyr
            .levels
            .iter()
            .map(|l| (tape.leaf(l.h.clone()), tape.leaf(l.v.clone()), tape.leaf(l.d.clone())))
            .collect(),
        coarse: tape.leaf(pyr.coarse.clone()),
        bypass: pyr.bypass.as_ref().map(|bp| bp.iter().map(|t| tape.leaf(t.clone())).collect()),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_block(
    tape: &mut Tape,
    block: &ConvBn,
    vars: &BlockVars,
    id: BlockId,
    x: Var,
    mode: BnMode,
    relu: bool,
    transpose: bool,
    stride_pad: (usize, usize),
    updates: &mut Option<&mut RunningUpdates>,
) -> Result<Var> {
    let (stride, pad) = stride_pad;
    let lin = if transpose {
        let t = tape.conv2d_transpose(x, vars.weight, stride, pad)?;
        tape.bias_add(t, vars.bias)?
    } else {
        tape.conv2d(x, vars.weight, vars.bias, stride, pad)?
    };
    let (bn, update) = tape.batchnorm(
        lin,
        vars.gamma,
        vars.beta,
        mode,
        &block.running_mean,
        &block.running_var,
        BN_MOMENTUM,
        BN_EPS,
    )?;
    if let (Some(sink), Some((m, v))) = (updates.as_deref_mut(), update) {
        sink.push((id, m, v));
    }
    Ok(if relu { tape.relu(bn) } else { bn })
}

/// Encoder forward pass on the tape.
pub fn encode_vars(
    tape: &mut Tape,
    params: &NetworkParams,
    vars: &NetVars,
    x: Var,
    mode: BnMode,
    mut updates: Option<&mut RunningUpdates>,
) -> Result<PyramidVars> {
    let arch = &params.arch;
    let (_, c, h, w) = tape.value(x).dims4()?;
    if c != 1 {
        return Err(Error::shape("encode", format!("expected 1 input channel, got {c}")));
    }
    arch.check_input_size(h, w)?;
    let pad = (arch.kernel_size - 1) / 2;
    let mut cur = x;
    let mut levels = Vec::with_capacity(arch.levels);
    let mut bypass = arch.bypass.then(Vec::new);
    for l in 0..arch.levels {
        if let Some(bp) = &mut bypass {
            bp.push(cur);
        }
        let t = conv_block(
            tape,
            &params.encoder[l],
            &vars.encoder[l],
            BlockId::Encoder(l),
            cur,
            mode,
            true,
            false,
            (1, pad),
            &mut updates,
        )?;
        let (low, hs, vs, ds) = haar::analysis_vars(tape, t)?;
        levels.push((hs, vs, ds));
        cur = low;
    }
    Ok(PyramidVars { levels, coarse: cur, bypass })
}

/// Decoder forward pass on the tape.
pub fn decode_vars(
    tape: &mut Tape,
    params: &NetworkParams,
    vars: &NetVars,
    pyr: &PyramidVars,
    mode: BnMode,
    mut updates: Option<&mut RunningUpdates>,
) -> Result<Var> {
    let arch = &params.arch;
    if pyr.levels.len() != arch.levels || pyr.bypass.is_some() != arch.bypass {
        return Err(Error::shape(
            "decode",
            format!(
                "pyramid has {} levels (bypass: {}), architecture expects {} (bypass: {})",
                pyr.levels.len(),
                pyr.bypass.is_some(),
                arch.levels,
                arch.bypass
            ),
        ));
    }
    let pad = (arch.kernel_size - 1) / 2;
    let mut cur = pyr.coarse;
    for l in (0..arch.levels).rev() {
        let (hs, vs, ds) = pyr.levels[l];
        let synth = haar::synthesis_vars(tape, cur, hs, vs, ds)?;
        let mixed = match &pyr.bypass {
            Some(bp) => tape.concat(&[synth, bp[l]])?,
            None => synth,
        };
        cur = conv_block(
            tape,
            &params.decoder[l],
            &vars.decoder[l],
            BlockId::Decoder(l),
            mixed,
            mode,
            true,
            false,
            (1, pad),
            &mut updates,
        )?;
    }
    conv_block(
        tape,
        &params.output,
        &vars.output,
        BlockId::Output,
        cur,
        mode,
        false,
        true,
        (1, pad),
        &mut updates,
    )
}

/// Encode an image tensor into its coefficient pyramid. Never mutates
/// batch-norm running statistics; training captures them through the tape
/// API instead.
pub fn encode(params: &NetworkParams, x: &Tensor, mode: BnMode) -> Result<CoeffPyramid> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vars = register_params(&mut tape, params);
    let pyr = encode_vars(&mut tape, params, &vars, xv, mode, None)?;
    Ok(pyr.materialize(&tape))
}

/// Decode a coefficient pyramid into an image tensor.
pub fn decode(params: &NetworkParams, pyr: &CoeffPyramid, mode: BnMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let pv = register_pyramid(&mut tape, pyr);
    let out = decode_vars(&mut tape, params, &vars, &pv, mode, None)?;
    Ok(tape.value(out).clone())
}

/// Encode then decode in one pass (shared tape), returning the pyramid too.
pub fn autoencode(params: &NetworkParams, x: &Tensor, mode: BnMode) -> Result<(Tensor, CoeffPyramid)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let vars = register_params(&mut tape, params);
    let pyr = encode_vars(&mut tape, params, &vars, xv, mode, None)?;
    let out = decode_vars(&mut tape, params, &vars, &pyr, mode, None)?;
    Ok((tape.value(out).clone(), pyr.materialize(&tape)))
}
