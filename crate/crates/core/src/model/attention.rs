//! Character-level language model: token + position embeddings, a stack of
//! single-head causal attention / tanh MLP blocks with residual connections,
//! and a linear output head with next-token cross-entropy.
//!
//! Each block is split into four layers (output-first):
//! `mlp_out [w2, b2]`, `mlp_in [w1, b1]`, `attn_out [wo]`, `attn_in [wq, wk, wv]`.

use rand::Rng;

use super::mlp::softmax_cross_entropy;
use super::{check_finite, deepest, LayerSpec, TensorSpec};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::tensor::ParamSet;

pub const MAX_VOCAB: usize = 64;
pub const MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyLmSpec {
    pub vocab: usize,
    pub context: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub depth: usize,
}

impl Default for TinyLmSpec {
    fn default() -> Self {
        Self { vocab: 32, context: 8, d_model: 16, d_ff: 32, depth: 2 }
    }
}

// Per-block tensor offsets, relative to the block's first tensor.
const W2: usize = 0;
const B2: usize = 1;
const W1: usize = 2;
const B1: usize = 3;
const WO: usize = 4;
const WQ: usize = 5;
const WK: usize = 6;
const WV: usize = 7;
const PER_BLOCK: usize = 8;

#[derive(Debug, Clone)]
struct BlockTape {
    h_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, `[rows, n, n]`, zero above the diagonal.
    p: Vec<f64>,
    o: Vec<f64>,
    h_mid: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LmTape {
    pub loss: f64,
    rows: usize,
    tokens: Vec<usize>,
    blocks: Vec<BlockTape>,
    h_final: Vec<f64>,
    dlogits: Vec<f64>,
}

impl TinyLmSpec {
    pub(super) fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.vocab > MAX_VOCAB {
            return Err(Error::config(format!("vocab must be in 2..={MAX_VOCAB}")));
        }
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::config(format!("depth must be in 1..={MAX_DEPTH}")));
        }
        if self.context == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::config("context, d_model and d_ff must be positive"));
        }
        Ok(())
    }

    fn block_base(&self, block: usize) -> usize {
        // Blocks are laid out top (last block) first after the two head tensors.
        2 + PER_BLOCK * (self.depth - 1 - block)
    }

    fn embed_base(&self) -> usize {
        2 + PER_BLOCK * self.depth
    }

    /// Layer index of the first layer (`mlp_out`) of `block`.
    fn block_layer(&self, block: usize) -> usize {
        1 + 4 * (self.depth - 1 - block)
    }

    fn embed_layer(&self) -> usize {
        1 + 4 * self.depth
    }

    pub(super) fn layers(&self) -> Vec<LayerSpec> {
        let (v, n, d, f) = (self.vocab, self.context, self.d_model, self.d_ff);
        let ts = |name: String, shape: Vec<usize>| TensorSpec { name, shape };
        let mut layers = vec![LayerSpec {
            name: "head".into(),
            tensors: vec![ts("head.weight".into(), vec![d, v]), ts("head.bias".into(), vec![v])],
        }];
        for l in (0..self.depth).rev() {
            let p = format!("block{l}");
            layers.push(LayerSpec {
                name: format!("{p}.mlp_out"),
                tensors: vec![ts(format!("{p}.mlp.w2"), vec![f, d]), ts(format!("{p}.mlp.b2"), vec![d])],
            });
            layers.push(LayerSpec {
                name: format!("{p}.mlp_in"),
                tensors: vec![ts(format!("{p}.mlp.w1"), vec![d, f]), ts(format!("{p}.mlp.b1"), vec![f])],
            });
            layers.push(LayerSpec {
                name: format!("{p}.attn_out"),
                tensors: vec![ts(format!("{p}.attn.wo"), vec![d, d])],
            });
            layers.push(LayerSpec {
                name: format!("{p}.attn_in"),
                tensors: vec![
                    ts(format!("{p}.attn.wq"), vec![d, d]),
                    ts(format!("{p}.attn.wk"), vec![d, d]),
                    ts(format!("{p}.attn.wv"), vec![d, d]),
                ],
            });
        }
        layers.push(LayerSpec {
            name: "embed".into(),
            tensors: vec![ts("embed.tok".into(), vec![v, d]), ts("embed.pos".into(), vec![n, d])],
        });
        layers
    }

    pub(super) fn init(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(stream_seed(seed, Stream::Init));
        self.layers()
            .iter()
            .flat_map(|l| l.tensors.iter())
            .map(|t| {
                let numel: usize = t.shape.iter().product();
                if t.shape.len() == 1 {
                    vec![0.0; numel]
                } else {
                    let fan_in = if t.name.starts_with("embed.") { self.d_model } else { t.shape[0] };
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
                }
            })
            .collect()
    }

    pub(super) fn costs(&self, rows: u64) -> Vec<(u64, u64, u64)> {
        let (v, n, d, f) = (self.vocab as u64, self.context as u64, self.d_model as u64, self.d_ff as u64);
        let nn = rows * n;
        let mix = 2 * rows * n * n * d;
        let mut out = vec![(2 * nn * d * v, 2 * nn * d * v, 0), (nn * v, nn * v, 2 * nn * d * v)];
        for _ in 0..self.depth {
            out.push((2 * nn * f * d, 2 * nn * f * d, 0)); // w2
            out.push((nn * d, nn * d, 2 * nn * f * d)); // b2
            out.push((2 * nn * d * f, 2 * nn * d * f, 0)); // w1
            out.push((nn * f, nn * f, 2 * nn * d * f)); // b1
            out.push((2 * nn * d * d, 2 * nn * d * d, 2 * nn * d * d)); // wo
            out.push((2 * nn * d * d + mix, 2 * nn * d * d + 2 * mix, 0)); // wq
            out.push((2 * nn * d * d, 2 * nn * d * d + 2 * mix, 0)); // wk
            out.push((2 * nn * d * d + mix, 2 * nn * d * d + 2 * mix, 6 * nn * d * d)); // wv
        }
        out.push((nn * d, nn * d, 0));
        out.push((nn * d, nn * d, 0));
        out
    }

    fn tokens(&self, values: &[f64], what: &str) -> Result<Vec<usize>> {
        values
            .iter()
            .map(|&t| {
                if t >= 0.0 && t.fract() == 0.0 && (t as usize) < self.vocab {
                    Ok(t as usize)
                } else {
                    Err(Error::config(format!("{what} token {t} outside vocabulary of {}", self.vocab)))
                }
            })
            .collect()
    }

    pub(super) fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<LmTape> {
        let rows = batch.size;
        let (n, d, f, v) = (self.context, self.d_model, self.d_ff, self.vocab);
        if batch.input_shape != [rows, n] || batch.target_shape != [rows, n] {
            return Err(Error::config(format!(
                "language model expects inputs and targets [{rows}, {n}], got {:?} / {:?}",
                batch.input_shape, batch.target_shape
            )));
        }
        let tokens = self.tokens(&batch.inputs, "input")?;
        let targets = self.tokens(&batch.targets, "target")?;
        let nn = rows * n;
        let eb = self.embed_base();
        let tok = params.tensor(eb).data();
        let pos = params.tensor(eb + 1).data();
        let mut h = vec![0.0; nn * d];
        for (i, &t) in tokens.iter().enumerate() {
            let p = i % n;
            for c in 0..d {
                h[i * d + c] = tok[t * d + c] + pos[p * d + c];
            }
        }
        check_finite(&h, self.embed_layer())?;

        let scale = 1.0 / (d as f64).sqrt();
        let mut blocks = Vec::with_capacity(self.depth);
        for l in 0..self.depth {
            let base = self.block_base(l);
            let lay = self.block_layer(l);
            let w = |off: usize| params.tensor(base + off).data();
            let q = matmul(&h, nn, d, w(WQ), d);
            let k = matmul(&h, nn, d, w(WK), d);
            let vv = matmul(&h, nn, d, w(WV), d);
            let mut p = vec![0.0; rows * n * n];
            let mut o = vec![0.0; nn * d];
            for s in 0..rows {
                for i in 0..n {
                    let qi = &q[(s * n + i) * d..(s * n + i + 1) * d];
                    let prow = &mut p[(s * n + i) * n..(s * n + i + 1) * n];
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let kj = &k[(s * n + j) * d..(s * n + j + 1) * d];
                        prow[j] = dot(qi, kj) * scale;
                        m = m.max(prow[j]);
                    }
                    let mut z = 0.0;
                    for pj in prow[..=i].iter_mut() {
                        *pj = (*pj - m).exp();
                        z += *pj;
                    }
                    let oi = &mut o[(s * n + i) * d..(s * n + i + 1) * d];
                    for j in 0..=i {
                        prow[j] /= z;
                        let vj = &vv[(s * n + j) * d..(s * n + j + 1) * d];
                        for (oc, vc) in oi.iter_mut().zip(vj) {
                            *oc += prow[j] * vc;
                        }
                    }
                }
            }
            check_finite(&o, lay + 3)?;
            let mut h_mid = matmul(&o, nn, d, w(WO), d);
            for (a, b) in h_mid.iter_mut().zip(&h) {
                *a += b;
            }
            check_finite(&h_mid, lay + 2)?;
            let mut g = matmul(&h_mid, nn, d, w(W1), f);
            add_bias(&mut g, w(B1));
            for x in g.iter_mut() {
                *x = x.tanh();
            }
            check_finite(&g, lay + 1)?;
            let mut h_out = matmul(&g, nn, f, w(W2), d);
            add_bias(&mut h_out, w(B2));
            for (a, b) in h_out.iter_mut().zip(&h_mid) {
                *a += b;
            }
            check_finite(&h_out, lay)?;
            blocks.push(BlockTape { h_in: h, q, k, v: vv, p, o, h_mid, g });
            h = h_out;
        }
        let mut logits = matmul(&h, nn, d, params.tensor(0).data(), v);
        add_bias(&mut logits, params.tensor(1).data());
        check_finite(&logits, 0)?;
        let labels: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
        let (loss, dlogits) = softmax_cross_entropy(&logits, &labels, nn, v);
        check_finite(&[loss], 0)?;
        Ok(LmTape { loss, rows, tokens, blocks, h_final: h, dlogits })
    }

    pub(super) fn backward(
        &self,
        params: &ParamSet,
        tape: &LmTape,
        active: &[bool],
        out: &mut [Option<Vec<f64>>],
    ) {
        let Some(k_deep) = deepest(active) else { return };
        let (n, d, f, v) = (self.context, self.d_model, self.d_ff, self.vocab);
        let rows = tape.rows;
        let nn = rows * n;
        let eb = self.embed_base();

        if active[0] {
            out[0] = Some(matmul_at_b(&tape.h_final, nn, d, &tape.dlogits, v));
        }
        if active[1] {
            out[1] = Some(col_sums(&tape.dlogits, nn, v));
        }
        if k_deep < 2 {
            return;
        }
        let mut dh = matmul_a_bt(&tape.dlogits, nn, v, params.tensor(0).data(), d);

        let scale = 1.0 / (d as f64).sqrt();
        for l in (0..self.depth).rev() {
            let base = self.block_base(l);
            let bt = &tape.blocks[l];
            let w = |off: usize| params.tensor(base + off).data();
            let go_below = |off: usize| k_deep > base + off;

            // mlp_out: h_out = h_mid + g W2 + b2
            if active[base + W2] {
                out[base + W2] = Some(matmul_at_b(&bt.g, nn, f, &dh, d));
            }
            if active[base + B2] {
                out[base + B2] = Some(col_sums(&dh, nn, d));
            }
            if !go_below(B2) {
                return;
            }
            let dg = matmul_a_bt(&dh, nn, d, w(W2), f);
            let mut dh_mid = dh;

            // mlp_in: g = tanh(h_mid W1 + b1)
            let dz: Vec<f64> = dg.iter().zip(&bt.g).map(|(d, g)| d * (1.0 - g * g)).collect();
            if active[base + W1] {
                out[base + W1] = Some(matmul_at_b(&bt.h_mid, nn, d, &dz, f));
            }
            if active[base + B1] {
                out[base + B1] = Some(col_sums(&dz, nn, f));
            }
            if !go_below(B1) {
                return;
            }
            add_into(&mut dh_mid, &matmul_a_bt(&dz, nn, f, w(W1), d));

            // attn_out: h_mid = h_in + o Wo
            if active[base + WO] {
                out[base + WO] = Some(matmul_at_b(&bt.o, nn, d, &dh_mid, d));
            }
            if !go_below(WO) {
                return;
            }
            let d_o = matmul_a_bt(&dh_mid, nn, d, w(WO), d);
            let mut dh_in = dh_mid;

            // attn_in: o = softmax(q k^T * scale) v
            let mut dq = vec![0.0; nn * d];
            let mut dk = vec![0.0; nn * d];
            let mut dv = vec![0.0; nn * d];
            for s in 0..rows {
                for i in 0..n {
                    let row = s * n + i;
                    let prow = &bt.p[row * n..(row + 1) * n];
                    let doi = &d_o[row * d..(row + 1) * d];
                    let mut dp = vec![0.0; i + 1];
                    for j in 0..=i {
                        let col = s * n + j;
                        dp[j] = dot(doi, &bt.v[col * d..(col + 1) * d]);
                        for (a, b) in dv[col * d..(col + 1) * d].iter_mut().zip(doi) {
                            *a += prow[j] * b;
                        }
                    }
                    let mean: f64 = (0..=i).map(|j| prow[j] * dp[j]).sum();
                    for j in 0..=i {
                        let col = s * n + j;
                        let ds = prow[j] * (dp[j] - mean) * scale;
                        for c in 0..d {
                            dq[row * d + c] += ds * bt.k[col * d + c];
                            dk[col * d + c] += ds * bt.q[row * d + c];
                        }
                    }
                }
            }
            for (off, grad) in [(WQ, &dq), (WK, &dk), (WV, &dv)] {
                if active[base + off] {
                    out[base + off] = Some(matmul_at_b(&bt.h_in, nn, d, grad, d));
                }
            }
            if !go_below(WV) {
                return;
            }
            for (off, grad) in [(WQ, &dq), (WK, &dk), (WV, &dv)] {
                add_into(&mut dh_in, &matmul_a_bt(grad, nn, d, w(off), d));
            }
            dh = dh_in;
        }

        // embed: h0 = tok[x] + pos[t]
        if active[eb] {
            let mut g = vec![0.0; v * d];
            for (i, &t) in tape.tokens.iter().enumerate() {
                for c in 0..d {
                    g[t * d + c] += dh[i * d + c];
                }
            }
            out[eb] = Some(g);
        }
        if active[eb + 1] {
            let mut g = vec![0.0; n * d];
            for i in 0..nn {
                let p = i % n;
                for c in 0..d {
                    g[p * d + c] += dh[i * d + c];
                }
            }
            out[eb + 1] = Some(g);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a [rows x inner] * b [inner x cols]`.
fn matmul(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let orow = &mut out[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let av = a[r * inner + k];
            for (o, bv) in orow.iter_mut().zip(&b[k * cols..(k + 1) * cols]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T * b` for `a [rows x m]`, `b [rows x n]`.
fn matmul_at_b(a: &[f64], rows: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..rows {
        let brow = &b[r * n..(r + 1) * n];
        for i in 0..m {
            let av = a[r * m + i];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a * b^T` for `a [rows x n]`, `b [m x n]`.
fn matmul_a_bt(a: &[f64], rows: usize, n: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * m];
    for r in 0..rows {
        let arow = &a[r * n..(r + 1) * n];
        for i in 0..m {
            out[r * m + i] = dot(arow, &b[i * n..(i + 1) * n]);
        }
    }
    out
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        for (a, b) in row.iter_mut().zip(bias) {
            *a += b;
        }
    }
}

fn col_sums(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
