//! The Transformer lifter: token construction, shared embedding, prior
//! tokens with learned embeddings, sinusoidal positional encoding, a 4-layer
//! post-norm encoder and a linear 3D regressor.
//!
//! Weights are immutable during inference; any number of threads may run
//! forward passes concurrently (each builds its own graph). Training
//! mutates weights single-threaded through the optimizer.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta,
};

use crate::dataset::{MaskState, WindowSample, CENTRAL_FRAME, WINDOW_LEN};
use crate::geometry::{Joints2d, JOINT_COUNT};
use crate::rng::Rng;
use crate::tensor::{scaled_dot_attention, Graph, Node, Real, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyperparameters of the lifter. The defaults are the shipped architecture;
/// anything else is for tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Temporal window length.
    pub t: usize,
    /// Joint count.
    pub j: usize,
    /// Pose-token input dimension (2 keypoint values + 3 intrinsics + 6 bones).
    pub d_in: usize,
    /// Shared embedding width.
    pub d_model: usize,
    /// Encoder layers.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Feedforward hidden width.
    pub d_ff: usize,
    /// Dropout rate on attention weights and feedforward output (training only).
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: WINDOW_LEN,
            j: JOINT_COUNT,
            d_in: 11,
            d_model: 128,
            layers: 4,
            heads: 4,
            d_ff: 256,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_in != 2 + 3 + 6 {
            return Err(Error::Config(format!(
                "d_in must be 11 (2 keypoint + 3 intrinsics + 6 bones), got {}",
                self.d_in
            )));
        }
        if self.t == 0 || self.j == 0 || self.layers == 0 || self.d_ff == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Number of pose tokens (`T · J`).
    pub fn pose_tokens(&self) -> usize {
        self.t * self.j
    }

    /// Full sequence length (`T · J + 2` prior tokens).
    pub fn seq_len(&self) -> usize {
        self.pose_tokens() + 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineWeights<F> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<F> {
    pub attn_q: AffineWeights<F>,
    pub attn_k: AffineWeights<F>,
    pub attn_v: AffineWeights<F>,
    pub attn_out: AffineWeights<F>,
    pub norm1_gamma: Tensor<F>,
    pub norm1_beta: Tensor<F>,
    pub ff1: AffineWeights<F>,
    pub ff2: AffineWeights<F>,
    pub norm2_gamma: Tensor<F>,
    pub norm2_beta: Tensor<F>,
}

/// All learnable parameters of the lifter.
#[derive(Clone, Debug, PartialEq)]
pub struct LifterWeights<F> {
    pub pose_embed: AffineWeights<F>,
    pub k_proj: AffineWeights<F>,
    pub s_proj: AffineWeights<F>,
    pub k_token: Tensor<F>,
    pub s_token: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub head: AffineWeights<F>,
}

fn affine_zeros<F: Real>(d_in: usize, d_out: usize) -> AffineWeights<F> {
    AffineWeights {
        w: Tensor::zeros(vec![d_in, d_out]),
        b: Tensor::zeros(vec![d_out]),
    }
}

impl<F: Real> LifterWeights<F> {
    /// All-zero weights with the right shapes (checkpoint loading target).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        LifterWeights {
            pose_embed: affine_zeros(cfg.d_in, d),
            k_proj: affine_zeros(3, d),
            s_proj: affine_zeros(6, d),
            k_token: Tensor::zeros(vec![d]),
            s_token: Tensor::zeros(vec![d]),
            layers: (0..cfg.layers)
                .map(|_| LayerWeights {
                    attn_q: affine_zeros(d, d),
                    attn_k: affine_zeros(d, d),
                    attn_v: affine_zeros(d, d),
                    attn_out: affine_zeros(d, d),
                    norm1_gamma: Tensor::zeros(vec![d]),
                    norm1_beta: Tensor::zeros(vec![d]),
                    ff1: affine_zeros(d, cfg.d_ff),
                    ff2: affine_zeros(cfg.d_ff, d),
                    norm2_gamma: Tensor::zeros(vec![d]),
                    norm2_beta: Tensor::zeros(vec![d]),
                })
                .collect(),
            head: affine_zeros(d, 3),
        }
    }

    /// Visit every tensor with its canonical name, in the canonical
    /// (checkpoint/optimizer) order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor<F>)) {
        f("embed.pose.w".into(), &self.pose_embed.w);
        f("embed.pose.b".into(), &self.pose_embed.b);
        f("prior.k.w".into(), &self.k_proj.w);
        f("prior.k.b".into(), &self.k_proj.b);
        f("prior.s.w".into(), &self.s_proj.w);
        f("prior.s.b".into(), &self.s_proj.b);
        f("token.k".into(), &self.k_token);
        f("token.s".into(), &self.s_token);
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("enc.{i}.attn.q.w"), &l.attn_q.w);
            f(format!("enc.{i}.attn.q.b"), &l.attn_q.b);
            f(format!("enc.{i}.attn.k.w"), &l.attn_k.w);
            f(format!("enc.{i}.attn.k.b"), &l.attn_k.b);
            f(format!("enc.{i}.attn.v.w"), &l.attn_v.w);
            f(format!("enc.{i}.attn.v.b"), &l.attn_v.b);
            f(format!("enc.{i}.attn.out.w"), &l.attn_out.w);
            f(format!("enc.{i}.attn.out.b"), &l.attn_out.b);
            f(format!("enc.{i}.norm1.gamma"), &l.norm1_gamma);
            f(format!("enc.{i}.norm1.beta"), &l.norm1_beta);
            f(format!("enc.{i}.ff1.w"), &l.ff1.w);
            f(format!("enc.{i}.ff1.b"), &l.ff1.b);
            f(format!("enc.{i}.ff2.w"), &l.ff2.w);
            f(format!("enc.{i}.ff2.b"), &l.ff2.b);
            f(format!("enc.{i}.norm2.gamma"), &l.norm2_gamma);
            f(format!("enc.{i}.norm2.beta"), &l.norm2_beta);
        }
        f("head.w".into(), &self.head.w);
        f("head.b".into(), &self.head.b);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(String, &mut Tensor<F>)) {
        f("embed.pose.w".into(), &mut self.pose_embed.w);
        f("embed.pose.b".into(), &mut self.pose_embed.b);
        f("prior.k.w".into(), &mut self.k_proj.w);
        f("prior.k.b".into(), &mut self.k_proj.b);
        f("prior.s.w".into(), &mut self.s_proj.w);
        f("prior.s.b".into(), &mut self.s_proj.b);
        f("token.k".into(), &mut self.k_token);
        f("token.s".into(), &mut self.s_token);
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(format!("enc.{i}.attn.q.w"), &mut l.attn_q.w);
            f(format!("enc.{i}.attn.q.b"), &mut l.attn_q.b);
            f(format!("enc.{i}.attn.k.w"), &mut l.attn_k.w);
            f(format!("enc.{i}.attn.k.b"), &mut l.attn_k.b);
            f(format!("enc.{i}.attn.v.w"), &mut l.attn_v.w);
            f(format!("enc.{i}.attn.v.b"), &mut l.attn_v.b);
            f(format!("enc.{i}.attn.out.w"), &mut l.attn_out.w);
            f(format!("enc.{i}.attn.out.b"), &mut l.attn_out.b);
            f(format!("enc.{i}.norm1.gamma"), &mut l.norm1_gamma);
            f(format!("enc.{i}.norm1.beta"), &mut l.norm1_beta);
            f(format!("enc.{i}.ff1.w"), &mut l.ff1.w);
            f(format!("enc.{i}.ff1.b"), &mut l.ff1.b);
            f(format!("enc.{i}.ff2.w"), &mut l.ff2.w);
            f(format!("enc.{i}.ff2.b"), &mut l.ff2.b);
            f(format!("enc.{i}.norm2.gamma"), &mut l.norm2_gamma);
            f(format!("enc.{i}.norm2.beta"), &mut l.norm2_beta);
        }
        f("head.w".into(), &mut self.head.w);
        f("head.b".into(), &mut self.head.b);
    }

    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t)));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }

    pub fn cast<G: Real>(&self) -> LifterWeights<G> {
        let cast_affine = |a: &AffineWeights<F>| AffineWeights {
            w: a.w.cast(),
            b: a.b.cast(),
        };
        LifterWeights {
            pose_embed: cast_affine(&self.pose_embed),
            k_proj: cast_affine(&self.k_proj),
            s_proj: cast_affine(&self.s_proj),
            k_token: self.k_token.cast(),
            s_token: self.s_token.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_q: cast_affine(&l.attn_q),
                    attn_k: cast_affine(&l.attn_k),
                    attn_v: cast_affine(&l.attn_v),
                    attn_out: cast_affine(&l.attn_out),
                    norm1_gamma: l.norm1_gamma.cast(),
                    norm1_beta: l.norm1_beta.cast(),
                    ff1: cast_affine(&l.ff1),
                    ff2: cast_affine(&l.ff2),
                    norm2_gamma: l.norm2_gamma.cast(),
                    norm2_beta: l.norm2_beta.cast(),
                })
                .collect(),
            head: cast_affine(&self.head),
        }
    }
}

impl LifterWeights<f32> {
    /// Fresh random weights: affine weights uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero, layer-norm affine
    /// at identity, learned prior tokens from N(0, 0.02²).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::derive(seed, "weight-init", &[]);
        let mut w = LifterWeights::zeros(cfg);
        w.visit_mut(|name, t| {
            if name.ends_with(".w") {
                let fan_in = t.shape()[0];
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.uniform_range(-bound, bound) as f32;
                }
            } else if name.ends_with("gamma") {
                for v in t.data_mut() {
                    *v = 1.0;
                }
            } else if name == "token.k" || name == "token.s" {
                for v in t.data_mut() {
                    *v = (0.02 * rng.normal()) as f32;
                }
            }
            // Biases and beta stay zero.
        });
        Ok(w)
    }
}

/// Fixed sinusoidal positional-encoding table:
/// `PE[pos, 2i] = sin(pos / 10000^(2i/D))`, `PE[pos, 2i+1] = cos(...)`.
///
/// Tables are computed once per (len, d_model) and cached; the per-call cost
/// is one element cast.
pub fn positional_encoding<F: Real>(len: usize, d_model: usize) -> Tensor<F> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let table = {
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry((len, d_model))
            .or_insert_with(|| {
                let mut data = Vec::with_capacity(len * d_model);
                for pos in 0..len {
                    for i in 0..d_model {
                        let exponent = (2 * (i / 2)) as f64 / d_model as f64;
                        let angle = pos as f64 / 10000f64.powf(exponent);
                        data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
                    }
                }
                Arc::new(data)
            })
            .clone()
    };
    Tensor::from_f64_slice(vec![len, d_model], &table).expect("table shape")
}

/// One sample's model inputs. Masked priors are zeroed inside the forward
/// pass — zeroing is the single masking mechanism.
#[derive(Clone, Debug)]
pub struct LifterInput<'a> {
    pub x2d: &'a [Joints2d],
    pub k: [f64; 3],
    pub s: [f64; 6],
    pub mask: MaskState,
}

impl<'a> LifterInput<'a> {
    pub fn from_sample(sample: &'a WindowSample) -> Self {
        LifterInput {
            x2d: &sample.x2d,
            k: sample.k.0,
            s: sample.s.0,
            mask: sample.mask,
        }
    }

    fn masked_k(&self) -> [f64; 3] {
        if self.mask.camera_masked {
            [0.0; 3]
        } else {
            self.k
        }
    }

    fn masked_s(&self) -> [f64; 6] {
        if self.mask.bones_masked {
            [0.0; 6]
        } else {
            self.s
        }
    }
}

/// Pose tokens for one sample: `token[t,j] = concat(x2d[t,j], k, s)`, the
/// priors repeated identically across all `T·J` tokens.
pub fn build_tokens(x2d: &[Joints2d], k: &[f64; 3], s: &[f64; 6]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x2d.len() * JOINT_COUNT * 11);
    for frame in x2d {
        for joint in frame {
            out.extend_from_slice(joint);
            out.extend_from_slice(k);
            out.extend_from_slice(s);
        }
    }
    out
}

/// Weight nodes bound into a graph, plus the (name, node) pairs in canonical
/// order for gradient extraction.
pub struct BoundWeights {
    pub nodes: Vec<(String, Node)>,
}

struct BoundAffine {
    w: Node,
    b: Node,
}

struct BoundLayer {
    attn_q: BoundAffine,
    attn_k: BoundAffine,
    attn_v: BoundAffine,
    attn_out: BoundAffine,
    norm1_gamma: Node,
    norm1_beta: Node,
    ff1: BoundAffine,
    ff2: BoundAffine,
    norm2_gamma: Node,
    norm2_beta: Node,
}

struct BoundModel {
    pose_embed: BoundAffine,
    k_proj: BoundAffine,
    s_proj: BoundAffine,
    k_token: Node,
    s_token: Node,
    layers: Vec<BoundLayer>,
    head: BoundAffine,
}

/// Insert every weight tensor into the graph. With `trainable` the nodes
/// accumulate gradients; without, they are plain constants (inference).
pub fn bind<F: Real>(g: &mut Graph<F>, w: &LifterWeights<F>, trainable: bool) -> BoundWeights {
    let mut nodes = Vec::new();
    w.visit(|name, t| {
        let node = if trainable { g.param(t) } else { g.input(t) };
        nodes.push((name, node));
    });
    BoundWeights { nodes }
}

impl BoundWeights {
    fn get(&self, name: &str, cursor: &mut usize) -> Node {
        // Names are consumed in visit order, so this is O(1) per lookup.
        debug_assert_eq!(self.nodes[*cursor].0, name);
        let node = self.nodes[*cursor].1;
        *cursor += 1;
        node
    }

    fn structure(&self, cfg: &ModelConfig) -> BoundModel {
        let mut c = 0;
        let affine = |this: &Self, c: &mut usize, wn: String, bn: String| BoundAffine {
            w: this.get(&wn, c),
            b: this.get(&bn, c),
        };
        let pose_embed = affine(self, &mut c, "embed.pose.w".into(), "embed.pose.b".into());
        let k_proj = affine(self, &mut c, "prior.k.w".into(), "prior.k.b".into());
        let s_proj = affine(self, &mut c, "prior.s.w".into(), "prior.s.b".into());
        let k_token = self.get("token.k", &mut c);
        let s_token = self.get("token.s", &mut c);
        let layers = (0..cfg.layers)
            .map(|i| BoundLayer {
                attn_q: affine(self, &mut c, format!("enc.{i}.attn.q.w"), format!("enc.{i}.attn.q.b")),
                attn_k: affine(self, &mut c, format!("enc.{i}.attn.k.w"), format!("enc.{i}.attn.k.b")),
                attn_v: affine(self, &mut c, format!("enc.{i}.attn.v.w"), format!("enc.{i}.attn.v.b")),
                attn_out: affine(
                    self,
                    &mut c,
                    format!("enc.{i}.attn.out.w"),
                    format!("enc.{i}.attn.out.b"),
                ),
                norm1_gamma: self.get(&format!("enc.{i}.norm1.gamma"), &mut c),
                norm1_beta: self.get(&format!("enc.{i}.norm1.beta"), &mut c),
                ff1: affine(self, &mut c, format!("enc.{i}.ff1.w"), format!("enc.{i}.ff1.b")),
                ff2: affine(self, &mut c, format!("enc.{i}.ff2.w"), format!("enc.{i}.ff2.b")),
                norm2_gamma: self.get(&format!("enc.{i}.norm2.gamma"), &mut c),
                norm2_beta: self.get(&format!("enc.{i}.norm2.beta"), &mut c),
            })
            .collect();
        let head = affine(self, &mut c, "head.w".into(), "head.b".into());
        BoundModel {
            pose_embed,
            k_proj,
            s_proj,
            k_token,
            s_token,
            layers,
            head,
        }
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Batched forward pass recorded into `g`; returns the `[B, T, J, 3]`
/// prediction node (meters, root frame).
pub fn forward_graph<F: Real>(
    g: &mut Graph<F>,
    bound: &BoundWeights,
    cfg: &ModelConfig,
    inputs: &[LifterInput],
    training: bool,
    mut rng: Option<&mut Rng>,
) -> Result<Node> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let batch = inputs.len();
    let n_pose = cfg.pose_tokens();
    for input in inputs {
        if input.x2d.len() != cfg.t {
            return Err(Error::InvalidShape {
                op: "forward",
                shape: vec![input.x2d.len(), JOINT_COUNT, 2],
                reason: format!("expected {} frames of 2D keypoints", cfg.t),
            });
        }
    }
    let m = bound.structure(cfg);

    // Constant inputs: pose tokens, raw priors (masked by zeroing).
    let mut token_data = Vec::with_capacity(batch * n_pose * cfg.d_in);
    let mut k_data = Vec::with_capacity(batch * 3);
    let mut s_data = Vec::with_capacity(batch * 6);
    for input in inputs {
        let k = input.masked_k();
        let s = input.masked_s();
        token_data.extend(build_tokens(input.x2d, &k, &s));
        k_data.extend_from_slice(&k);
        s_data.extend_from_slice(&s);
    }
    let tokens = g.constant_f64(vec![batch, n_pose, cfg.d_in], &token_data)?;
    let k_raw = g.constant_f64(vec![batch, 1, 3], &k_data)?;
    let s_raw = g.constant_f64(vec![batch, 1, 6], &s_data)?;

    // Shared linear embedding of pose tokens.
    let pose_emb = affine(g, tokens, &m.pose_embed)?;

    // Prior tokens: projected raw prior plus a learned token.
    let k_emb = affine(g, k_raw, &m.k_proj)?;
    let k_tok = g.add(k_emb, m.k_token)?;
    let s_emb = affine(g, s_raw, &m.s_proj)?;
    let s_tok = g.add(s_emb, m.s_token)?;

    // Prepend prior tokens, then add positional encodings over all
    // T·J + 2 positions.
    let seq = g.concat(&[k_tok, s_tok, pose_emb], 1)?;
    let pe = positional_encoding::<F>(cfg.seq_len(), cfg.d_model);
    let pe_node = g.input(&pe);
    let mut x = g.add(seq, pe_node)?;

    for layer in &m.layers {
        x = encoder_layer(g, x, layer, cfg, batch, training, rng.as_deref_mut())?;
    }

    // Regress 3D coordinates from the pose-token outputs only.
    let pose_out = g.slice(x, 1, 2, n_pose)?;
    let pred = affine(g, pose_out, &m.head)?;
    g.reshape(pred, vec![batch, cfg.t, cfg.j, 3])
}

fn affine<F: Real>(g: &mut Graph<F>, x: Node, a: &BoundAffine) -> Result<Node> {
    let prod = g.matmul(x, a.w)?;
    g.add(prod, a.b)
}

fn encoder_layer<F: Real>(
    g: &mut Graph<F>,
    x: Node,
    l: &BoundLayer,
    cfg: &ModelConfig,
    batch: usize,
    training: bool,
    mut rng: Option<&mut Rng>,
) -> Result<Node> {
    let (len, d, h, dh) = (cfg.seq_len(), cfg.d_model, cfg.heads, cfg.head_dim());

    // Multi-head self-attention.
    let q = affine(g, x, &l.attn_q)?;
    let k = affine(g, x, &l.attn_k)?;
    let v = affine(g, x, &l.attn_v)?;
    let split = |g: &mut Graph<F>, n: Node| -> Result<Node> {
        let r = g.reshape(n, vec![batch, len, h, dh])?;
        g.permute(r, &[0, 2, 1, 3])
    };
    let qh = split(g, q)?;
    let kh = split(g, k)?;
    let vh = split(g, v)?;
    let attn = scaled_dot_attention(g, qh, kh, vh, cfg.dropout, training, rng.as_deref_mut())?;
    let merged = g.permute(attn, &[0, 2, 1, 3])?;
    let flat = g.reshape(merged, vec![batch, len, d])?;
    let attn_out = affine(g, flat, &l.attn_out)?;

    // Post-norm residual.
    let res1 = g.add(x, attn_out)?;
    let eps = F::from_f64(LAYER_NORM_EPS);
    let normed1 = g.layer_norm(res1, l.norm1_gamma, l.norm1_beta, eps)?;

    // Feedforward with ReLU; dropout on the feedforward output.
    let h1 = affine(g, normed1, &l.ff1)?;
    let h1 = g.relu(h1);
    let mut h2 = affine(g, h1, &l.ff2)?;
    if training && cfg.dropout > 0.0 {
        let rng = rng.ok_or_else(|| {
            Error::InvalidArgument("training-mode forward requires an RNG for dropout".into())
        })?;
        h2 = g.dropout(h2, cfg.dropout, rng)?;
    }
    let res2 = g.add(normed1, h2)?;
    g.layer_norm(res2, l.norm2_gamma, l.norm2_beta, eps)
}

/// Eval- or train-mode forward returning a plain tensor `[B, T, J, 3]`.
pub fn forward_batch<F: Real>(
    weights: &LifterWeights<F>,
    cfg: &ModelConfig,
    inputs: &[LifterInput],
    training: bool,
    rng: Option<&mut Rng>,
) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, weights, false);
    let pred = forward_graph(&mut g, &bound, cfg, inputs, training, rng)?;
    Ok(g.value(pred).clone())
}

/// Single-sample eval-mode forward.
pub fn forward_single<F: Real>(
    weights: &LifterWeights<F>,
    cfg: &ModelConfig,
    input: &LifterInput,
) -> Result<Tensor<F>> {
    forward_batch(weights, cfg, std::slice::from_ref(input), false, None)
}

/// Central-frame prediction of a single window as `J` (x, y, z) triples.
pub fn central_frame_prediction(pred: &Tensor<f32>) -> Vec<[f64; 3]> {
    // pred is [1, T, J, 3].
    let j = JOINT_COUNT;
    let base = CENTRAL_FRAME * j * 3;
    (0..j)
        .map(|ji| {
            let o = base + ji * 3;
            [
                pred.data()[o] as f64,
                pred.data()[o + 1] as f64,
                pred.data()[o + 2] as f64,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_procedural_clip, synthesize_sample};
    use crate::geometry::CameraRanges;

    fn test_weights() -> (LifterWeights<f32>, ModelConfig) {
        let cfg = ModelConfig::default();
        (LifterWeights::init(&cfg, 0).unwrap(), cfg)
    }

    fn test_sample(seed: u64, mask: MaskState) -> WindowSample {
        let mut rng = Rng::seed_from_u64(seed);
        let clip = generate_procedural_clip(&mut rng, 2.0, 30.0).unwrap();
        synthesize_sample(&mut rng, &clip, mask, &CameraRanges::default()).unwrap()
    }

    #[test]
    fn parameter_count_is_exact() {
        let (w, _) = test_weights();
        assert_eq!(w.param_count(), 533_507);
        assert!(w.param_count() < 600_000);
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = ModelConfig {
            heads: 5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tokens_carry_priors_in_trailing_dims() {
        let sample = test_sample(1, MaskState::FULL_PRIORS);
        let tokens = build_tokens(&sample.x2d, &sample.k.0, &sample.s.0);
        assert_eq!(tokens.len(), 156 * 11);
        // All tokens share identical dims 2..11.
        let first = &tokens[2..11];
        for t in 1..156 {
            assert_eq!(&tokens[t * 11 + 2..t * 11 + 11], first);
        }
        assert_eq!(first[..3], sample.k.0);
        assert_eq!(first[3..], sample.s.0);
    }

    #[test]
    fn zero_priors_zero_trailing_dims() {
        let sample = test_sample(2, MaskState::NO_PRIORS);
        let tokens = build_tokens(&sample.x2d, &sample.k.0, &sample.s.0);
        for t in 0..156 {
            assert!(tokens[t * 11 + 2..t * 11 + 11].iter().all(|&v| v == 0.0));
            // Keypoint dims are generally nonzero.
        }
    }

    #[test]
    fn positional_encoding_first_row_alternates() {
        let pe = positional_encoding::<f64>(158, 128);
        for i in 0..128 {
            let expected = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.data()[i], expected);
        }
    }

    #[test]
    fn positional_encoding_bounded_and_distinct() {
        let pe = positional_encoding::<f64>(158, 128);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let mut min_dist = f64::MAX;
        for a in 0..158 {
            for b in a + 1..158 {
                let d: f64 = (0..128)
                    .map(|i| {
                        let diff = pe.data()[a * 128 + i] - pe.data()[b * 128 + i];
                        diff * diff
                    })
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        assert!(min_dist > 0.0, "duplicate positional encoding rows");
    }

    #[test]
    fn forward_output_shape() {
        let (w, cfg) = test_weights();
        let sample = test_sample(3, MaskState::FULL_PRIORS);
        let pred = forward_single(&w, &cfg, &LifterInput::from_sample(&sample)).unwrap();
        assert_eq!(pred.shape(), &[1, 13, 12, 3]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let (w, cfg) = test_weights();
        let sample = test_sample(4, MaskState::FULL_PRIORS);
        let a = forward_single(&w, &cfg, &LifterInput::from_sample(&sample)).unwrap();
        let b = forward_single(&w, &cfg, &LifterInput::from_sample(&sample)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn camera_masked_output_ignores_k() {
        let (w, cfg) = test_weights();
        let sample = test_sample(5, MaskState::FULL_PRIORS);
        let mut rng = Rng::seed_from_u64(0);
        let mut reference = None;
        for _ in 0..10 {
            let k = [
                rng.uniform_range(0.3, 1.0),
                rng.uniform_range(-0.05, 0.05),
                rng.uniform_range(-0.09, 0.09),
            ];
            let input = LifterInput {
                x2d: &sample.x2d,
                k,
                s: sample.s.0,
                mask: MaskState::CAMERA_MASKED,
            };
            let pred = forward_batch(&w, &cfg, &[input], false, None).unwrap();
            match &reference {
                None => reference = Some(pred),
                Some(r) => assert_eq!(r, &pred, "masked forward depends on k"),
            }
        }
    }

    #[test]
    fn masking_equals_explicit_zeroing() {
        let (w, cfg) = test_weights();
        let sample = test_sample(6, MaskState::FULL_PRIORS);
        let masked = LifterInput {
            x2d: &sample.x2d,
            k: sample.k.0,
            s: sample.s.0,
            mask: MaskState::CAMERA_MASKED,
        };
        let zeroed = LifterInput {
            x2d: &sample.x2d,
            k: [0.0; 3],
            s: sample.s.0,
            mask: MaskState::FULL_PRIORS,
        };
        let a = forward_batch(&w, &cfg, &[masked], false, None).unwrap();
        let b = forward_batch(&w, &cfg, &[zeroed], false, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let (w, cfg) = test_weights();
        let s1 = test_sample(7, MaskState::FULL_PRIORS);
        let s2 = test_sample(8, MaskState::BONES_MASKED);
        let (i1, i2) = (LifterInput::from_sample(&s1), LifterInput::from_sample(&s2));
        let ab = forward_batch(&w, &cfg, &[i1.clone(), i2.clone()], false, None).unwrap();
        let ba = forward_batch(&w, &cfg, &[i2, i1], false, None).unwrap();
        let n = 13 * 12 * 3;
        assert_eq!(&ab.data()[..n], &ba.data()[n..]);
        assert_eq!(&ab.data()[n..], &ba.data()[..n]);
    }

    #[test]
    fn training_forward_without_rng_is_an_error() {
        let (w, cfg) = test_weights();
        let sample = test_sample(9, MaskState::FULL_PRIORS);
        let input = LifterInput::from_sample(&sample);
        assert!(forward_batch(&w, &cfg, &[input], true, None).is_err());
    }
}
