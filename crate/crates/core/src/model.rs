//! Tiny autoregressive model: token embedding, a stack of recurrent tanh
//! blocks and a softmax output projection, with exact backpropagation
//! through time.
//!
//! Every named tensor is one localization unit ("layer"). Parameters are
//! addressed as `(layer, flat index)` with row-major flattening.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::KnowledgeItem;
use crate::error::{Error, Result};
use crate::mask::LayerBits;

pub type Token = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub max_seq_len: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 256,
            embed_dim: 16,
            num_blocks: 2,
            hidden_dim: 32,
            max_seq_len: 8,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be at least 8, got {}",
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("num_blocks", self.num_blocks),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidConfig(
                "max_seq_len must be at least 2".into(),
            ));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "init_scale must be finite and non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// Declared `(name, rows, cols)` of every tensor, in layer order.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        let mut shapes = vec![("embed".to_string(), v, d)];
        for b in 0..self.num_blocks {
            let input = if b == 0 { d } else { h };
            shapes.push((format!("block{b}.w_in"), h, input));
            shapes.push((format!("block{b}.w_rec"), h, h));
            shapes.push((format!("block{b}.bias"), h, 1));
        }
        shapes.push(("out.weight".to_string(), v, h));
        shapes.push(("out.bias".to_string(), v, 1));
        shapes
    }
}

/// Index of a tensor in [`ModelState::layers`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, rows: usize, cols: usize) -> Self {
        Tensor {
            name,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub layers: Vec<Tensor>,
    pub step_count: u64,
}

/// Gradient with the same layer layout as the model it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros(sizes: &[usize]) -> Self {
        Gradient {
            layers: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn zeros_like(model: &ModelState) -> Self {
        Self::zeros(&model.layer_sizes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for x in layer.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|x| x.is_finite())
    }

    pub fn get(&self, layer: LayerId, j: usize) -> f64 {
        self.layers[layer.0][j]
    }
}

/// Hidden state of every block after some prefix of tokens.
#[derive(Debug, Clone)]
pub struct RecurrentState {
    hidden: Vec<Vec<f64>>,
}

struct Trace {
    /// `hidden[b][t]` is block `b`'s output after consuming token `t`.
    hidden: Vec<Vec<Vec<f64>>>,
    logits: Vec<Vec<f64>>,
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in z.iter().enumerate().skip(1) {
        if x > z[best] {
            best = i;
        }
    }
    best
}

fn matvec_add(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    for (i, o) in out.iter_mut().enumerate() {
        let row = w.row(i);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += W^T dz`
fn matvec_t_add(w: &Tensor, dz: &[f64], out: &mut [f64]) {
    for (i, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(w.row(i)) {
            *o += a * g;
        }
    }
}

/// `grad += dz ⊗ x`
fn outer_add(grad: &mut [f64], cols: usize, dz: &[f64], x: &[f64]) {
    for (i, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, v) in grad[i * cols..(i + 1) * cols].iter_mut().zip(x) {
            *o += g * v;
        }
    }
}

impl ModelState {
    /// Deterministic initialization from `config.seed`. Weight matrices are
    /// drawn uniformly in `±init_scale / sqrt(fan_in)`, the embedding in
    /// `±init_scale`, biases start at zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let mut t = Tensor::zeros(name, rows, cols);
                let is_bias = cols == 1 && t.name.ends_with("bias");
                if !is_bias && config.init_scale > 0.0 {
                    let bound = if t.name == "embed" {
                        config.init_scale
                    } else {
                        config.init_scale / (cols as f64).sqrt()
                    };
                    for x in &mut t.data {
                        *x = rng.gen_range(-bound..=bound);
                    }
                }
                t
            })
            .collect();
        Ok(ModelState {
            config,
            layers,
            step_count: 0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|t| t.data.len()).collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|t| t.name.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes().iter().sum()
    }

    pub fn layer_id(&self, name: &str) -> Option<LayerId> {
        self.layers.iter().position(|t| t.name == name).map(LayerId)
    }

    pub fn param(&self, layer: LayerId, j: usize) -> f64 {
        self.layers[layer.0].data[j]
    }

    pub fn param_mut(&mut self, layer: LayerId, j: usize) -> &mut f64 {
        &mut self.layers[layer.0].data[j]
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn record_step(&mut self) {
        self.step_count += 1;
    }

    fn embed(&self) -> &Tensor {
        &self.layers[0]
    }

    fn block(&self, b: usize) -> (&Tensor, &Tensor, &Tensor) {
        let base = 1 + 3 * b;
        (
            &self.layers[base],
            &self.layers[base + 1],
            &self.layers[base + 2],
        )
    }

    fn out_layers(&self) -> (&Tensor, &Tensor) {
        let base = 1 + 3 * self.config.num_blocks;
        (&self.layers[base], &self.layers[base + 1])
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SeqTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            hidden: vec![vec![0.0; self.config.hidden_dim]; self.config.num_blocks],
        }
    }

    /// Consumes one token and returns the next-token logits.
    pub fn step(&self, state: &mut RecurrentState, token: Token) -> Vec<f64> {
        let h = self.config.hidden_dim;
        let mut input: Vec<f64> = self.embed().row(token as usize).to_vec();
        for b in 0..self.config.num_blocks {
            let (w_in, w_rec, bias) = self.block(b);
            let mut z = bias.data.clone();
            matvec_add(w_in, &input, &mut z);
            matvec_add(w_rec, &state.hidden[b], &mut z);
            let out: Vec<f64> = z.iter().map(|x| x.tanh()).collect();
            debug_assert_eq!(out.len(), h);
            state.hidden[b].clone_from(&out);
            input = out;
        }
        let (w_out, b_out) = self.out_layers();
        let mut logits = b_out.data.clone();
        matvec_add(w_out, &input, &mut logits);
        logits
    }

    fn trace(&self, inputs: &[Token]) -> Trace {
        let mut state = self.initial_state();
        let mut hidden = vec![Vec::with_capacity(inputs.len()); self.config.num_blocks];
        let mut logits = Vec::with_capacity(inputs.len());
        for &tok in inputs {
            logits.push(self.step(&mut state, tok));
            for (b, hs) in hidden.iter_mut().enumerate() {
                hs.push(state.hidden[b].clone());
            }
        }
        Trace { hidden, logits }
    }

    /// Row `t` is the log-distribution of token `t + 1` given tokens `..=t`;
    /// a sequence of length `n` yields `n - 1` rows.
    pub fn forward_logprobs(&self, seq: &[Token]) -> Result<Vec<Vec<f64>>> {
        if seq.len() < 2 {
            return Err(Error::SeqTooShort {
                len: seq.len(),
                min: 2,
            });
        }
        self.check_tokens(seq)?;
        let trace = self.trace(&seq[..seq.len() - 1]);
        Ok(trace.logits.iter().map(|z| log_softmax(z)).collect())
    }

    /// Backpropagates sparse logit gradients `(position, dL/dlogits)` through
    /// the trace of `inputs`.
    fn backward(&self, inputs: &[Token], trace: &Trace, dlogits: &[(usize, Vec<f64>)]) -> Gradient {
        let cfg = &self.config;
        let (nb, h, d) = (cfg.num_blocks, cfg.hidden_dim, cfg.embed_dim);
        let n = inputs.len();
        let mut grad = Gradient::zeros_like(self);
        let out_w_idx = 1 + 3 * nb;
        let (w_out, _) = self.out_layers();

        let mut d_above = vec![vec![0.0; h]; n];
        for (t, dl) in dlogits {
            let top = &trace.hidden[nb - 1][*t];
            outer_add(&mut grad.layers[out_w_idx], h, dl, top);
            for (g, x) in grad.layers[out_w_idx + 1].iter_mut().zip(dl) {
                *g += x;
            }
            matvec_t_add(w_out, dl, &mut d_above[*t]);
        }

        let zero_h = vec![0.0; h];
        for b in (0..nb).rev() {
            let (w_in, w_rec, _) = self.block(b);
            let base = 1 + 3 * b;
            let in_dim = if b == 0 { d } else { h };
            let mut d_below = vec![vec![0.0; in_dim]; n];
            let mut d_rec = vec![0.0; h];
            for t in (0..n).rev() {
                let out = &trace.hidden[b][t];
                let dz: Vec<f64> = (0..h)
                    .map(|i| (d_above[t][i] + d_rec[i]) * (1.0 - out[i] * out[i]))
                    .collect();
                let input: &[f64] = if b == 0 {
                    self.embed().row(inputs[t] as usize)
                } else {
                    &trace.hidden[b - 1][t]
                };
                let prev: &[f64] = if t > 0 {
                    &trace.hidden[b][t - 1]
                } else {
                    &zero_h
                };
                outer_add(&mut grad.layers[base], in_dim, &dz, input);
                outer_add(&mut grad.layers[base + 1], h, &dz, prev);
                for (g, x) in grad.layers[base + 2].iter_mut().zip(&dz) {
                    *g += x;
                }
                matvec_t_add(w_in, &dz, &mut d_below[t]);
                d_rec.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_add(w_rec, &dz, &mut d_rec);
            }
            d_above = d_below;
        }

        for (t, &tok) in inputs.iter().enumerate() {
            let row = &mut grad.layers[0][tok as usize * d..(tok as usize + 1) * d];
            for (g, x) in row.iter_mut().zip(&d_above[t]) {
                *g += x;
            }
        }
        grad
    }

    fn check_pair(&self, prompt: &[Token], answer: &[Token]) -> Result<Vec<Token>> {
        if prompt.is_empty() {
            return Err(Error::SeqTooShort { len: 0, min: 1 });
        }
        let mut seq = prompt.to_vec();
        seq.extend_from_slice(answer);
        self.check_tokens(&seq)?;
        Ok(seq)
    }

    /// Mean negative log-likelihood of `answer` given `prompt`, teacher forced.
    /// Prompt positions do not contribute.
    pub fn answer_loss(&self, prompt: &[Token], answer: &[Token]) -> Result<f64> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer(String::new()));
        }
        let seq = self.check_pair(prompt, answer)?;
        let trace = self.trace(&seq[..seq.len() - 1]);
        let p = prompt.len();
        let nll: f64 = (0..answer.len())
            .map(|k| -log_softmax(&trace.logits[p - 1 + k])[answer[k] as usize])
            .sum();
        Ok(nll / answer.len() as f64)
    }

    /// Loss and exact gradient of [`answer_loss`](Self::answer_loss).
    pub fn answer_loss_grad(&self, prompt: &[Token], answer: &[Token]) -> Result<(f64, Gradient)> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer(String::new()));
        }
        let seq = self.check_pair(prompt, answer)?;
        let inputs = &seq[..seq.len() - 1];
        let trace = self.trace(inputs);
        let p = prompt.len();
        let scale = 1.0 / answer.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(answer.len());
        for (k, &target) in answer.iter().enumerate() {
            let pos = p - 1 + k;
            let lp = log_softmax(&trace.logits[pos]);
            loss -= lp[target as usize];
            let mut dl: Vec<f64> = lp.iter().map(|x| x.exp() * scale).collect();
            dl[target as usize] -= scale;
            dlogits.push((pos, dl));
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok((loss, self.backward(inputs, &trace, &dlogits)))
    }

    pub fn item_loss(&self, item: &KnowledgeItem) -> Result<f64> {
        self.answer_loss(&item.prompt, &item.answer)
            .map_err(|e| tag_item(e, &item.id))
    }

    pub fn item_grad(&self, item: &KnowledgeItem) -> Result<Gradient> {
        let (_, g) = self
            .answer_loss_grad(&item.prompt, &item.answer)
            .map_err(|e| tag_item(e, &item.id))?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of item `{}`", item.id)));
        }
        Ok(g)
    }

    /// Mean over answer positions of `KL(current || reference)` and its
    /// gradient with respect to this model's parameters.
    pub fn answer_kl_grad(
        &self,
        prompt: &[Token],
        answer: &[Token],
        reference_logprobs: &[Vec<f64>],
    ) -> Result<(f64, Gradient)> {
        if answer.is_empty() {
            return Err(Error::EmptyAnswer(String::new()));
        }
        if reference_logprobs.len() != answer.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} reference rows for {} answer tokens",
                reference_logprobs.len(),
                answer.len()
            )));
        }
        let seq = self.check_pair(prompt, answer)?;
        let inputs = &seq[..seq.len() - 1];
        let trace = self.trace(inputs);
        let p = prompt.len();
        let scale = 1.0 / answer.len() as f64;
        let mut total = 0.0;
        let mut dlogits = Vec::with_capacity(answer.len());
        for (k, lq) in reference_logprobs.iter().enumerate() {
            let pos = p - 1 + k;
            let lp = log_softmax(&trace.logits[pos]);
            let kl: f64 = lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b)).sum();
            total += kl;
            let dl: Vec<f64> = lp
                .iter()
                .zip(lq)
                .map(|(a, b)| scale * a.exp() * ((a - b) - kl))
                .collect();
            dlogits.push((pos, dl));
        }
        Ok((total * scale, self.backward(inputs, &trace, &dlogits)))
    }

    /// Log-distributions at the answer positions of `prompt ++ answer`.
    pub fn answer_logprobs(&self, prompt: &[Token], answer: &[Token]) -> Result<Vec<Vec<f64>>> {
        let seq = self.check_pair(prompt, answer)?;
        let rows = self.forward_logprobs(&seq)?;
        Ok(rows[prompt.len() - 1..].to_vec())
    }

    /// In-place `θ ± eta·g` on every parameter not set in `frozen`; frozen
    /// parameters are never written.
    pub fn apply_update(
        &mut self,
        g: &Gradient,
        eta: f64,
        direction: Direction,
        frozen: &LayerBits,
    ) -> Result<()> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must be positive, got {eta}"
            )));
        }
        let sizes = self.layer_sizes();
        if g.sizes() != sizes {
            return Err(Error::ShapeMismatch("gradient does not match model".into()));
        }
        if frozen.sizes() != sizes {
            return Err(Error::ShapeMismatch("mask does not match model".into()));
        }
        let step = match direction {
            Direction::Ascent => eta,
            Direction::Descent => -eta,
        };
        for (l, (tensor, gl)) in self.layers.iter_mut().zip(&g.layers).enumerate() {
            let bits = frozen.layer(l);
            if bits.is_clear() {
                for (x, gx) in tensor.data.iter_mut().zip(gl) {
                    *x += step * gx;
                }
            } else {
                for (j, (x, gx)) in tensor.data.iter_mut().zip(gl).enumerate() {
                    if !bits.contains(j) {
                        *x += step * gx;
                    }
                }
            }
        }
        Ok(())
    }

    /// Greedy continuation of `prompt` by `n` tokens.
    pub fn greedy_decode(&self, prompt: &[Token], n: usize) -> Result<Vec<Token>> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "decode length must be positive".into(),
            ));
        }
        if prompt.is_empty() {
            return Err(Error::SeqTooShort { len: 0, min: 1 });
        }
        self.check_tokens(prompt)?;
        if prompt.len() + n > self.config.max_seq_len {
            return Err(Error::SeqTooLong {
                len: prompt.len() + n,
                max: self.config.max_seq_len,
            });
        }
        let mut state = self.initial_state();
        let mut logits = Vec::new();
        for &tok in prompt {
            logits = self.step(&mut state, tok);
        }
        let mut out = Vec::with_capacity(n);
        loop {
            let next = argmax(&logits) as Token;
            out.push(next);
            if out.len() == n {
                break;
            }
            logits = self.step(&mut state, next);
        }
        Ok(out)
    }

    /// SHA-256 over the checkpoint encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn tag_item(e: Error, id: &str) -> Error {
    match e {
        Error::EmptyAnswer(_) => Error::EmptyAnswer(id.to_string()),
        Error::NonFinite(what) => Error::NonFinite(format!("{what} of item `{id}`")),
        other => other,
    }
}

// Checkpoint container:
//
//   magic "ULCKPT\0\0" | u32 version | u32 header length | header JSON |
//   f64 LE payload, tensors in header order | SHA-256 of everything before
//
// The header holds the config, step count and each tensor's name and shape.
const MAGIC: &[u8; 8] = b"ULCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    step_count: u64,
    layers: Vec<(String, usize, usize)>,
}

impl ModelState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            step_count: self.step_count,
            layers: self
                .layers
                .iter()
                .map(|t| (t.name.clone(), t.rows, t.cols))
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(16 + header.len() + 8 * self.num_params() + 32);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in &self.layers {
            for x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 + 32 {
            return Err(bad("file truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (file corrupted or truncated)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("header length exceeds file"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.config.validate()?;
        let expected = header.config.layer_shapes();
        if expected != header.layers {
            return Err(Error::Checkpoint(
                "declared tensor shapes do not match the declared config".into(),
            ));
        }
        let payload = &body[header_end..];
        let n_params: usize = expected.iter().map(|(_, r, c)| r * c).sum();
        if payload.len() != 8 * n_params {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, config requires {}",
                payload.len(),
                8 * n_params
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let layers = expected
            .into_iter()
            .map(|(name, rows, cols)| Tensor {
                name,
                rows,
                cols,
                data: values.by_ref().take(rows * cols).collect(),
            })
            .collect();
        Ok(ModelState {
            config: header.config,
            layers,
            step_count: header.step_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ModelState {
        ModelState::init(ModelConfig {
            vocab_size: 12,
            embed_dim: 4,
            num_blocks: 2,
            hidden_dim: 4,
            max_seq_len: 6,
            init_scale: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(small(7).to_bytes(), small(7).to_bytes());
        assert_ne!(small(7).layers, small(8).layers);
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut cfg = small(1).config;
        cfg.vocab_size = 0;
        assert!(ModelState::init(cfg.clone()).is_err());
        cfg.vocab_size = 12;
        cfg.hidden_dim = 0;
        assert!(ModelState::init(cfg).is_err());
    }

    #[test]
    fn rows_are_normalized() {
        let m = small(3);
        for row in m.forward_logprobs(&[1, 5, 2, 11, 0]).unwrap() {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_init_is_uniform() {
        let mut cfg = small(0).config;
        cfg.init_scale = 0.0;
        let m = ModelState::init(cfg).unwrap();
        for row in m.forward_logprobs(&[3, 4, 5]).unwrap() {
            for x in row {
                assert!((x + (12f64).ln()).abs() < 1e-12);
            }
        }
        let loss = m.answer_loss(&[1, 2], &[3, 4]).unwrap();
        assert!((loss - (12f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_is_causal() {
        let m = small(4);
        let a = m.forward_logprobs(&[1, 2, 3, 4, 5]).unwrap();
        let b = m.forward_logprobs(&[1, 2, 3, 9, 0]).unwrap();
        assert_eq!(a[..3], b[..3]);
    }

    #[test]
    fn rejects_long_and_short_sequences() {
        let m = small(4);
        assert!(matches!(
            m.forward_logprobs(&[1]),
            Err(Error::SeqTooShort { .. })
        ));
        assert!(matches!(
            m.forward_logprobs(&[1; 7]),
            Err(Error::SeqTooLong { .. })
        ));
        assert!(matches!(
            m.forward_logprobs(&[1, 12]),
            Err(Error::TokenOutOfRange { .. })
        ));
        assert!(matches!(
            m.answer_loss(&[1], &[]),
            Err(Error::EmptyAnswer(_))
        ));
    }

    #[test]
    fn certain_model_has_zero_loss() {
        let mut cfg = small(0).config;
        cfg.init_scale = 0.0;
        let mut m = ModelState::init(cfg).unwrap();
        let out_b = m.layer_id("out.bias").unwrap();
        *m.param_mut(out_b, 3) = 1e6;
        assert_eq!(m.answer_loss(&[1], &[3, 3]).unwrap(), 0.0);
        assert_eq!(m.greedy_decode(&[0], 4).unwrap(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn zeroed_block_input_cuts_gradient() {
        let mut m = small(5);
        let w_in1 = m.layer_id("block1.w_in").unwrap();
        m.layers[w_in1.0].data.iter_mut().for_each(|x| *x = 0.0);
        let (_, g) = m.answer_loss_grad(&[1, 2], &[3, 4]).unwrap();
        for name in ["embed", "block0.w_in", "block0.w_rec", "block0.bias"] {
            let id = m.layer_id(name).unwrap();
            assert!(g.layers[id.0].iter().all(|&x| x == 0.0), "{name}");
        }
        assert!(g.layers[m.layer_id("out.bias").unwrap().0]
            .iter()
            .any(|&x| x != 0.0));
    }

    #[test]
    fn update_arithmetic() {
        let mut m = small(2);
        let before = m.clone();
        let mut g = Gradient::zeros_like(&m);
        let id = LayerId(1);
        g.layers[id.0][0] = 2.0;
        let mut frozen = LayerBits::full_like(&m);
        m.apply_update(&g, 0.5, Direction::Ascent, &frozen).unwrap();
        assert_eq!(m.to_bytes(), before.to_bytes());

        frozen = LayerBits::empty_like(&m);
        m.apply_update(&g, 0.5, Direction::Ascent, &frozen).unwrap();
        assert_eq!(m.param(id, 0), before.param(id, 0) + 1.0);
        assert!(m.apply_update(&g, 0.0, Direction::Ascent, &frozen).is_err());
        let other = LayerBits::empty(&[1]);
        assert!(m.apply_update(&g, 0.1, Direction::Ascent, &other).is_err());
    }

    #[test]
    fn descent_then_ascent_recovers() {
        let mut m = small(9);
        let before = m.clone();
        let (_, g) = m.answer_loss_grad(&[1, 2], &[3, 4]).unwrap();
        let none = LayerBits::empty_like(&m);
        m.apply_update(&g, 0.3, Direction::Descent, &none).unwrap();
        m.apply_update(&g, 0.3, Direction::Ascent, &none).unwrap();
        for (a, b) in m.layers.iter().zip(&before.layers) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn decode_checks_length() {
        let m = small(1);
        assert!(m.greedy_decode(&[1], 0).is_err());
        assert!(m.greedy_decode(&[1, 2], 5).is_err());
        assert_eq!(
            m.greedy_decode(&[1, 2], 4).unwrap(),
            m.greedy_decode(&[1, 2], 4).unwrap()
        );
    }

    #[test]
    fn kl_to_self_is_zero() {
        let m = small(6);
        let reference = m.answer_logprobs(&[1, 2], &[3, 4]).unwrap();
        let (kl, g) = m.answer_kl_grad(&[1, 2], &[3, 4], &reference).unwrap();
        assert!(kl.abs() < 1e-15);
        assert!(g.layers.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = small(11);
        let bytes = m.to_bytes();
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);

        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 0xff;
        assert!(ModelState::from_bytes(&corrupt).is_err());
        assert!(ModelState::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }
}
