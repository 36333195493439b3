//! Desk-scale Vision Transformer: patch embedding, a CLS token with learned
//! positions, pre-norm encoder blocks, a final LayerNorm and a linear
//! classifier, with an optional calibration head on top.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::head::{self, CalibHeadParams};
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// Feature fed to the calibration head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    #[default]
    Cls,
    PatchMean,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub calattn_hidden: usize,
    pub calattn_enabled: bool,
    pub calattn_input: HeadInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_h: 28,
            image_w: 28,
            channels: 1,
            patch: 7,
            dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            classes: 10,
            calattn_hidden: head::DEFAULT_HIDDEN,
            calattn_enabled: true,
            calattn_input: HeadInput::Cls,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.image_h, self.image_w, self.channels, self.patch, self.dim, self.heads, self.mlp_ratio]
            .contains(&0)
        {
            return bad("model extents must be positive".into());
        }
        if self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return bad(format!(
                "image {}x{} not divisible by patch {}",
                self.image_h, self.image_w, self.patch
            ));
        }
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.dim < 2 {
            return bad("dim must be at least 2 for LayerNorm".into());
        }
        if self.classes < 2 {
            return bad("need at least 2 classes".into());
        }
        if self.calattn_hidden == 0 {
            return bad("calattn_hidden must be positive".into());
        }
        Ok(())
    }

    /// Patch tokens per image.
    pub fn num_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }

    /// Tokens per image including CLS.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.image_h * self.image_w
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.dim
    }

    pub fn head_input_dim(&self) -> usize {
        match self.calattn_input {
            HeadInput::Cls | HeadInput::PatchMean => self.dim,
            HeadInput::Concat => 2 * self.dim,
        }
    }

    /// Every named tensor with its shape, in checkpoint order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, hid) = (self.dim, self.mlp_hidden());
        let mut out = vec![
            ("patch.w".to_string(), vec![d, self.patch_dim()]),
            ("patch.b".to_string(), vec![d]),
            ("cls_token".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![self.seq_len(), d]),
        ];
        for i in 0..self.depth {
            for (name, shape) in BlockParams::<()>::shapes(d, hid) {
                out.push((format!("blocks.{i}.{name}"), shape));
            }
        }
        out.push(("final_ln.g".into(), vec![d]));
        out.push(("final_ln.b".into(), vec![d]));
        out.push(("classifier.w".into(), vec![self.classes, d]));
        out.push(("classifier.b".into(), vec![self.classes]));
        if self.calattn_enabled {
            for (name, shape) in CalibHeadParams::shapes(self.head_input_dim(), self.calattn_hidden) {
                out.push((format!("{}{name}", head::PARAM_PREFIX), shape));
            }
        }
        out
    }

    /// Total trainable values, summed over [`param_shapes`](Self::param_shapes).
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Parameters outside the calibration head.
    pub fn backbone_param_count(&self) -> usize {
        ModelConfig {
            calattn_enabled: false,
            ..self.clone()
        }
        .param_count()
    }
}

/// One pre-norm encoder block. Attention projections carry no bias; the MLP
/// layers do.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = Tensor> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln2_g: T,
    pub ln2_b: T,
    pub mlp_w1: T,
    pub mlp_b1: T,
    pub mlp_w2: T,
    pub mlp_b2: T,
}

impl<T> BlockParams<T> {
    pub const NAMES: [&'static str; 12] = [
        "ln1.g", "ln1.b", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln2.g", "ln2.b",
        "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
    ];

    fn fields(&self) -> [&T; 12] {
        [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.wk, &self.wv, &self.wo, &self.ln2_g,
            &self.ln2_b, &self.mlp_w1, &self.mlp_b1, &self.mlp_w2, &self.mlp_b2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 12] {
        [
            &mut self.ln1_g, &mut self.ln1_b, &mut self.wq, &mut self.wk, &mut self.wv,
            &mut self.wo, &mut self.ln2_g, &mut self.ln2_b, &mut self.mlp_w1, &mut self.mlp_b1,
            &mut self.mlp_w2, &mut self.mlp_b2,
        ]
    }

    fn shapes(d: usize, hid: usize) -> [(&'static str, Vec<usize>); 12] {
        let n = Self::NAMES;
        [
            (n[0], vec![d]),
            (n[1], vec![d]),
            (n[2], vec![d, d]),
            (n[3], vec![d, d]),
            (n[4], vec![d, d]),
            (n[5], vec![d, d]),
            (n[6], vec![d]),
            (n[7], vec![d]),
            (n[8], vec![hid, d]),
            (n[9], vec![hid]),
            (n[10], vec![d, hid]),
            (n[11], vec![d]),
        ]
    }

    fn try_map<U, E>(&self, mut f: impl FnMut(&'static str, &T) -> Result<U, E>) -> Result<BlockParams<U>, E> {
        let n = Self::NAMES;
        Ok(BlockParams {
            ln1_g: f(n[0], &self.ln1_g)?,
            ln1_b: f(n[1], &self.ln1_b)?,
            wq: f(n[2], &self.wq)?,
            wk: f(n[3], &self.wk)?,
            wv: f(n[4], &self.wv)?,
            wo: f(n[5], &self.wo)?,
            ln2_g: f(n[6], &self.ln2_g)?,
            ln2_b: f(n[7], &self.ln2_b)?,
            mlp_w1: f(n[8], &self.mlp_w1)?,
            mlp_b1: f(n[9], &self.mlp_b1)?,
            mlp_w2: f(n[10], &self.mlp_w2)?,
            mlp_b2: f(n[11], &self.mlp_b2)?,
        })
    }
}

impl BlockParams {
    fn init<R: Rng + ?Sized>(d: usize, hid: usize, rng: &mut R) -> Self {
        Self {
            ln1_g: Tensor::full(vec![d], 1.0),
            ln1_b: Tensor::zeros(vec![d]),
            wq: Tensor::randn(vec![d, d], INIT_STD, rng),
            wk: Tensor::randn(vec![d, d], INIT_STD, rng),
            wv: Tensor::randn(vec![d, d], INIT_STD, rng),
            wo: Tensor::randn(vec![d, d], INIT_STD, rng),
            ln2_g: Tensor::full(vec![d], 1.0),
            ln2_b: Tensor::zeros(vec![d]),
            mlp_w1: Tensor::randn(vec![hid, d], INIT_STD, rng),
            mlp_b1: Tensor::zeros(vec![hid]),
            mlp_w2: Tensor::randn(vec![d, hid], INIT_STD, rng),
            mlp_b2: Tensor::zeros(vec![d]),
        }
    }
}

/// Complete model weights. `T = Tensor` holds values; `T = Var` binds them
/// to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ViTParams<T = Tensor> {
    pub patch_w: T,
    pub patch_b: T,
    pub cls_token: T,
    pub pos_embed: T,
    pub blocks: Vec<BlockParams<T>>,
    pub final_g: T,
    pub final_b: T,
    pub cls_w: T,
    pub cls_b: T,
    pub head: Option<CalibHeadParams<T>>,
}

impl<T> ViTParams<T> {
    /// Visits every tensor with its checkpoint name in checkpoint order.
    pub fn visit(&self, mut f: impl FnMut(String, &T)) {
        f("patch.w".into(), &self.patch_w);
        f("patch.b".into(), &self.patch_b);
        f("cls_token".into(), &self.cls_token);
        f("pos_embed".into(), &self.pos_embed);
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BlockParams::<T>::NAMES.iter().zip(b.fields()) {
                f(format!("blocks.{i}.{name}"), t);
            }
        }
        f("final_ln.g".into(), &self.final_g);
        f("final_ln.b".into(), &self.final_b);
        f("classifier.w".into(), &self.cls_w);
        f("classifier.b".into(), &self.cls_b);
        if let Some(h) = &self.head {
            h.visit(f);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut T)) {
        f("patch.w".into(), &mut self.patch_w);
        f("patch.b".into(), &mut self.patch_b);
        f("cls_token".into(), &mut self.cls_token);
        f("pos_embed".into(), &mut self.pos_embed);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BlockParams::<T>::NAMES.iter().zip(b.fields_mut()) {
                f(format!("blocks.{i}.{name}"), t);
            }
        }
        f("final_ln.g".into(), &mut self.final_g);
        f("final_ln.b".into(), &mut self.final_b);
        f("classifier.w".into(), &mut self.cls_w);
        f("classifier.b".into(), &mut self.cls_b);
        if let Some(h) = &mut self.head {
            h.visit_mut(f);
        }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(String, &T) -> Result<U, E>) -> Result<ViTParams<U>, E> {
        Ok(ViTParams {
            patch_w: f("patch.w".into(), &self.patch_w)?,
            patch_b: f("patch.b".into(), &self.patch_b)?,
            cls_token: f("cls_token".into(), &self.cls_token)?,
            pos_embed: f("pos_embed".into(), &self.pos_embed)?,
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.try_map(|name, t| f(format!("blocks.{i}.{name}"), t)))
                .collect::<Result<_, E>>()?,
            final_g: f("final_ln.g".into(), &self.final_g)?,
            final_b: f("final_ln.b".into(), &self.final_b)?,
            cls_w: f("classifier.w".into(), &self.cls_w)?,
            cls_b: f("classifier.b".into(), &self.cls_b)?,
            head: self.head.as_ref().map(|h| h.try_map(&mut f)).transpose()?,
        })
    }
}

impl ViTParams {
    /// Weights `N(0, 0.02)`, biases 0, LayerNorm gains 1; the calibration
    /// head (if enabled) starts neutral.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let patch_w = Tensor::randn(vec![d, cfg.patch_dim()], INIT_STD, rng);
        let cls_token = Tensor::randn(vec![d], INIT_STD, rng);
        let pos_embed = Tensor::randn(vec![cfg.seq_len(), d], INIT_STD, rng);
        let blocks = (0..cfg.depth)
            .map(|_| BlockParams::init(d, cfg.mlp_hidden(), rng))
            .collect();
        let cls_w = Tensor::randn(vec![cfg.classes, d], INIT_STD, rng);
        let head = cfg
            .calattn_enabled
            .then(|| CalibHeadParams::init(cfg.head_input_dim(), cfg.calattn_hidden, rng));
        Ok(Self {
            patch_w,
            patch_b: Tensor::zeros(vec![d]),
            cls_token,
            pos_embed,
            blocks,
            final_g: Tensor::full(vec![d], 1.0),
            final_b: Tensor::zeros(vec![d]),
            cls_w,
            cls_b: Tensor::zeros(vec![cfg.classes]),
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.param_shapes();
        let mut actual = Vec::new();
        self.visit(|name, t| actual.push((name, t.shape().to_vec())));
        if expected != actual {
            let detail = expected
                .iter()
                .zip(&actual)
                .find(|(e, a)| e != a)
                .map_or_else(
                    || format!("{} tensors vs {} expected", actual.len(), expected.len()),
                    |(e, a)| format!("{} {:?} vs expected {} {:?}", a.0, a.1, e.0, e.1),
                );
            return Err(Error::shape("ViTParams", detail));
        }
        Ok(())
    }

    /// Binds the weights to `tape` as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ViTParams<Var> {
        self.try_map::<Var, std::convert::Infallible>(|_, t| {
            Ok(if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            })
        })
        .unwrap_or_else(|e| match e {})
    }

    /// Whether the named tensor receives weight decay: weight matrices only,
    /// never biases, LayerNorm parameters, the CLS token or positions.
    pub fn decays(name: &str) -> bool {
        name.ends_with(".w")
            || name.ends_with(".wq")
            || name.ends_with(".wk")
            || name.ends_with(".wv")
            || name.ends_with(".wo")
            || name.ends_with(".w1")
            || name.ends_with(".w2")
    }
}

/// Splits a batch of flat `channels × H × W` images into patch rows
/// `[batch·N, P²·channels]`. Patches are taken row-major over the grid; inside
/// a patch values run channel, then row, then column.
pub fn patchify(cfg: &ModelConfig, images: &[f64]) -> Result<Tensor> {
    let per = cfg.image_len();
    if per == 0 || images.len() % per != 0 {
        return Err(Error::shape(
            "patchify",
            format!("{} values is not a whole number of {per}-value images", images.len()),
        ));
    }
    let (p, h, w, c) = (cfg.patch, cfg.image_h, cfg.image_w, cfg.channels);
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape("patchify", format!("{h}x{w} image, patch {p}")));
    }
    let batch = images.len() / per;
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(images.len());
    for img in images.chunks(per) {
        for pi in 0..gh {
            for pj in 0..gw {
                for ch in 0..c {
                    for r in 0..p {
                        let start = ch * h * w + (pi * p + r) * w + pj * p;
                        out.extend_from_slice(&img[start..start + p]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch * gh * gw, cfg.patch_dim()], out)
}

/// Tape nodes produced by one batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[batch, d]`, row 0 of each sequence after the final LayerNorm.
    pub z_cls: Var,
    /// `[batch, C]`, raw classifier logits.
    pub logits: Var,
    /// `[batch, d_in]`, input to the calibration head.
    pub feature: Var,
    /// `[batch, 1]` per-sample temperatures, when the head is enabled.
    pub scale: Option<Var>,
    /// Logits divided by the temperature (the raw logits without a head).
    pub calibrated: Var,
}

pub fn record_patch_embed(tape: &mut Tape, p: &ViTParams<Var>, patches: Var) -> Result<Var> {
    tape.linear(patches, p.patch_w, Some(p.patch_b))
}

/// Prepends the CLS token to each of `batch` token runs and adds positions.
pub fn record_assemble(tape: &mut Tape, p: &ViTParams<Var>, tokens: Var, batch: usize) -> Result<Var> {
    let seq = tape.prepend_row(tokens, p.cls_token, batch)?;
    tape.add_tiled(seq, p.pos_embed)
}

/// `z + MSA(LN(z))` followed by `z + MLP(LN(z))`.
pub fn record_block(
    tape: &mut Tape,
    b: &BlockParams<Var>,
    x: Var,
    batch: usize,
    heads: usize,
) -> Result<Var> {
    let h = tape.layer_norm(x, b.ln1_g, b.ln1_b)?;
    let q = tape.linear(h, b.wq, None)?;
    let k = tape.linear(h, b.wk, None)?;
    let v = tape.linear(h, b.wv, None)?;
    let a = tape.attention(q, k, v, batch, heads)?;
    let o = tape.linear(a, b.wo, None)?;
    let x = tape.add(x, o)?;
    let h = tape.layer_norm(x, b.ln2_g, b.ln2_b)?;
    let m = tape.linear(h, b.mlp_w1, Some(b.mlp_b1))?;
    let m = tape.gelu(m);
    let m = tape.linear(m, b.mlp_w2, Some(b.mlp_b2))?;
    tape.add(x, m)
}

/// Full forward pass from patch rows `[batch·N, P²·channels]`.
pub fn record_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ViTParams<Var>,
    patches: Var,
) -> Result<ForwardVars> {
    let n = cfg.num_patches();
    let rows = tape.value(patches).rows();
    if rows == 0 || rows % n != 0 {
        return Err(Error::shape("forward", format!("{rows} patch rows, {n} per image")));
    }
    let batch = rows / n;
    let tokens = record_patch_embed(tape, p, patches)?;
    let mut x = record_assemble(tape, p, tokens, batch)?;
    for b in &p.blocks {
        x = record_block(tape, b, x, batch, cfg.heads)?;
    }
    let x = tape.layer_norm(x, p.final_g, p.final_b)?;
    let seq = cfg.seq_len();
    let z_cls = tape.gather_rows(x, (0..batch).map(|i| i * seq).collect())?;
    let logits = tape.linear(z_cls, p.cls_w, Some(p.cls_b))?;
    let feature = match cfg.calattn_input {
        HeadInput::Cls => z_cls,
        HeadInput::PatchMean => tape.group_mean(x, seq, 1)?,
        HeadInput::Concat => {
            let mean = tape.group_mean(x, seq, 1)?;
            tape.concat_cols(z_cls, mean)?
        }
    };
    let (scale, calibrated) = match &p.head {
        Some(h) => {
            let s = head::scale_on_tape(tape, h, feature)?;
            (Some(s), tape.div_rows(logits, s)?)
        }
        None => (None, logits),
    };
    Ok(ForwardVars {
        z_cls,
        logits,
        feature,
        scale,
        calibrated,
    })
}

/// Per-sample outputs of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub z_cls: Vec<f64>,
    pub logits: Vec<f64>,
    pub feature: Vec<f64>,
    pub scale: Option<f64>,
}

impl Inference {
    /// Logits divided by the predicted temperature (raw logits without a head).
    pub fn calibrated_logits(&self) -> Vec<f64> {
        let s = self.scale.unwrap_or(1.0);
        self.logits.iter().map(|l| l / s).collect()
    }
}

/// Inference over a batch of flat images (no gradients).
pub fn infer_batch(cfg: &ModelConfig, params: &ViTParams, images: &[f64]) -> Result<Vec<Inference>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let patches = tape.constant(patchify(cfg, images)?);
    let f = record_forward(&mut tape, cfg, &p, patches)?;
    let (z, l, feat) = (tape.value(f.z_cls), tape.value(f.logits), tape.value(f.feature));
    Ok((0..z.rows())
        .map(|i| Inference {
            z_cls: z.row(i).to_vec(),
            logits: l.row(i).to_vec(),
            feature: feat.row(i).to_vec(),
            scale: f.scale.map(|s| tape.value(s).data()[i]),
        })
        .collect())
}

/// Inference for a single image.
pub fn forward(cfg: &ModelConfig, params: &ViTParams, image: &[f64]) -> Result<Inference> {
    if image.len() != cfg.image_len() {
        return Err(Error::shape(
            "forward",
            format!("image of {} values, config expects {}", image.len(), cfg.image_len()),
        ));
    }
    Ok(infer_batch(cfg, params, image)?.remove(0))
}

/// Patch tokens `[N, d]` for one image.
pub fn patch_embed(cfg: &ModelConfig, params: &ViTParams, image: &[f64]) -> Result<Tensor> {
    if image.len() != cfg.image_len() {
        return Err(Error::shape("patch_embed", "image size does not match config"));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let patches = tape.constant(patchify(cfg, image)?);
    let out = record_patch_embed(&mut tape, &p, patches)?;
    Ok(tape.value(out).clone())
}

/// `[N+1, d]` sequence: CLS row then tokens, plus positions.
pub fn assemble_sequence(params: &ViTParams, tokens: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    if tokens.shape().len() != 2 || tokens.rows() + 1 != params.pos_embed.rows() {
        return Err(Error::shape(
            "assemble_sequence",
            format!("tokens {:?} vs positions {:?}", tokens.shape(), params.pos_embed.shape()),
        ));
    }
    let t = tape.constant(tokens.clone());
    let out = record_assemble(&mut tape, &p, t, 1)?;
    Ok(tape.value(out).clone())
}

/// One encoder block applied to a single `[T, d]` sequence; also returns the
/// attention probabilities laid out `[heads, T, T]`.
pub fn encoder_block(block: &BlockParams, seq: &Tensor, heads: usize) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let b = block.try_map::<Var, std::convert::Infallible>(|_, t| Ok(tape.constant(t.clone())))
        .unwrap_or_else(|e| match e {});
    let x = tape.constant(seq.clone());
    let h = tape.layer_norm(x, b.ln1_g, b.ln1_b)?;
    let q = tape.linear(h, b.wq, None)?;
    let k = tape.linear(h, b.wk, None)?;
    let v = tape.linear(h, b.wv, None)?;
    let a = tape.attention(q, k, v, 1, heads)?;
    let probs = tape.attention_probs(a).expect("attention node").to_vec();
    let out = record_block(&mut tape, &b, x, 1, heads)?;
    Ok((tape.value(out).clone(), probs))
}

/// `‖z‖₂`.
pub fn cls_norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_h: 8,
            image_w: 8,
            channels: 1,
            patch: 4,
            dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 4,
            classes: 3,
            calattn_hidden: 5,
            calattn_enabled: true,
            calattn_input: HeadInput::Cls,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_image(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
        Tensor::randn(vec![cfg.image_len()], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).into_data()
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { patch: 5, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { heads: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { classes: 1, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { calattn_hidden: 0, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn param_count_by_hand() {
        let cfg = tiny();
        let (d, hid, c, pd, seq) = (8, 32, 3, 16, 5);
        let block = 2 * d + 4 * d * d + hid * d + hid + d * hid + d + 2 * d;
        let backbone = d * pd + d + d + seq * d + block + 2 * d + c * d + c;
        let headp = 5 * d + 5 + 5 + 1;
        assert_eq!(cfg.param_count(), backbone + headp);
        assert_eq!(cfg.backbone_param_count(), backbone);
        let p = ViTParams::init(&cfg, &mut rng()).unwrap();
        assert_eq!(p.param_count(), cfg.param_count());
        p.check_config(&cfg).unwrap();
        let deeper = ModelConfig { depth: 2, ..cfg.clone() };
        assert_eq!(deeper.param_count() - cfg.param_count(), block);
        let concat = ModelConfig { calattn_input: HeadInput::Concat, ..cfg.clone() };
        assert_eq!(concat.param_count() - cfg.param_count(), 5 * d);
    }

    #[test]
    fn desk_counts() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.backbone_param_count(), 204_042);
        assert_eq!(cfg.param_count() - cfg.backbone_param_count(), 8449);
    }

    #[test]
    fn patch_embed_examples() {
        let cfg = tiny();
        let mut p = ViTParams::init(&cfg, &mut rng()).unwrap();
        assert_eq!(patch_embed(&cfg, &p, &vec![0.0; 64]).unwrap().shape(), &[4, 8]);
        assert!(patch_embed(&cfg, &p, &vec![0.0; 64]).unwrap().data().iter().all(|&v| v == 0.0));
        // pixel (row 5, col 2) sits in patch (1, 0) at in-patch offset 1·4 + 2
        let mut img = vec![0.0; 64];
        img[5 * 8 + 2] = 1.0;
        p.patch_b = Tensor::zeros(vec![8]);
        let t = patch_embed(&cfg, &p, &img).unwrap();
        for j in 0..8 {
            assert_eq!(t.row(2)[j], p.patch_w.row(j)[6]);
            assert_eq!(t.row(0)[j], 0.0);
        }
    }

    #[test]
    fn assemble_examples() {
        let cfg = tiny();
        let mut p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let tokens = Tensor::randn(vec![4, 8], 1.0, &mut rng());
        let seq = assemble_sequence(&p, &tokens).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                let back = seq.row(i + 1)[j] - p.pos_embed.row(i + 1)[j];
                assert!((back - tokens.row(i)[j]).abs() < 1e-15);
            }
        }
        p.pos_embed = Tensor::zeros(vec![5, 8]);
        let seq = assemble_sequence(&p, &tokens).unwrap();
        assert_eq!(seq.row(0), p.cls_token.data());
        assert!(assemble_sequence(&p, &Tensor::zeros(vec![3, 8])).is_err());
    }

    #[test]
    fn residual_identity_block() {
        let cfg = tiny();
        let mut p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let b = &mut p.blocks[0];
        b.wo = Tensor::zeros(vec![8, 8]);
        b.mlp_w2 = Tensor::zeros(vec![8, 32]);
        let seq = Tensor::randn(vec![5, 8], 1.0, &mut rng());
        let (out, probs) = encoder_block(b, &seq, 2).unwrap();
        assert_eq!(out, seq);
        for row in probs.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let cfg = tiny();
        let p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let seq = Tensor::randn(vec![1, 8], 1.0, &mut rng());
        let (_, probs) = encoder_block(&p.blocks[0], &seq, 2).unwrap();
        assert_eq!(probs, vec![1.0, 1.0]);
    }

    #[test]
    fn forward_outputs() {
        let cfg = tiny();
        let mut p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let img = random_image(&cfg, 3);
        let out = forward(&cfg, &p, &img).unwrap();
        assert_eq!(out.feature, out.z_cls);
        assert_eq!(out.logits.len(), 3);
        let s = out.scale.unwrap();
        assert!((1.0..=1.000002).contains(&s));
        p.cls_w = Tensor::zeros(vec![3, 8]);
        p.cls_b = Tensor::vector(vec![0.5, -1.0, 2.0]);
        assert_eq!(forward(&cfg, &p, &img).unwrap().logits, vec![0.5, -1.0, 2.0]);

        let concat = ModelConfig { calattn_input: HeadInput::Concat, ..cfg.clone() };
        let pc = ViTParams::init(&concat, &mut rng()).unwrap();
        let out = forward(&concat, &pc, &img).unwrap();
        assert_eq!(out.feature.len(), 16);
        assert_eq!(&out.feature[..8], out.z_cls.as_slice());
    }

    #[test]
    fn batch_matches_single() {
        let cfg = tiny();
        let p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let (a, b) = (random_image(&cfg, 1), random_image(&cfg, 2));
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let batch = infer_batch(&cfg, &p, &both).unwrap();
        let single = forward(&cfg, &p, &b).unwrap();
        for (x, y) in batch[1].logits.iter().zip(&single.logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn patch_permutation_with_positions_leaves_cls() {
        let cfg = tiny();
        let p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let img = random_image(&cfg, 5);
        let patches = patchify(&cfg, &img).unwrap();
        let perm = [2usize, 0, 3, 1];

        let run = |params: &ViTParams, patches: Tensor| {
            let mut tape = Tape::new();
            let v = params.bind(&mut tape, false);
            let x = tape.constant(patches);
            let f = record_forward(&mut tape, &cfg, &v, x).unwrap();
            tape.value(f.z_cls).data().to_vec()
        };
        let base = run(&p, patches.clone());

        let mut permuted = Vec::new();
        let mut pp = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            permuted.extend_from_slice(patches.row(old));
            pp.pos_embed.row_mut(new + 1).copy_from_slice(p.pos_embed.row(old + 1));
        }
        let moved = run(&pp, Tensor::new(vec![4, 16], permuted).unwrap());
        for (a, b) in base.iter().zip(&moved) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn decay_selection() {
        let cfg = tiny();
        let p = ViTParams::init(&cfg, &mut rng()).unwrap();
        let mut decayed = Vec::new();
        p.visit(|name, _| {
            if ViTParams::decays(&name) {
                decayed.push(name)
            }
        });
        assert_eq!(
            decayed,
            vec![
                "patch.w", "blocks.0.attn.wq", "blocks.0.attn.wk", "blocks.0.attn.wv",
                "blocks.0.attn.wo", "blocks.0.mlp.w1", "blocks.0.mlp.w2", "classifier.w",
                "calattn.w1", "calattn.w2"
            ]
        );
    }

    #[test]
    fn norms() {
        assert_eq!(cls_norm(&[0.0; 4]), 0.0);
        assert_eq!(cls_norm(&[3.0, 4.0]), 5.0);
    }
}
