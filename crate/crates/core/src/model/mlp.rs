//! Fully connected tanh network with a linear output layer.

use rand::Rng;

use super::{check_finite, deepest, LayerSpec, LossKind, TensorSpec};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// Layer widths from input to output, e.g. `[2, 16, 2]`.
    pub dims: Vec<usize>,
    /// `CrossEntropy` (integer class targets) or `Mse` (real vector targets).
    pub loss: LossKind,
}

/// Multiply-add counter for the instrumented backward.
#[derive(Debug, Default)]
pub(crate) struct OpCount {
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct MlpTape {
    pub loss: f64,
    rows: usize,
    /// `acts[j]` is the input of dense layer `j` (forward order).
    acts: Vec<Vec<f64>>,
    /// Gradient of the loss with respect to the output pre-activations.
    dout: Vec<f64>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, loss: LossKind) -> Self {
        Self { dims, loss }
    }

    fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub(super) fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(Error::config(format!("invalid MLP dims {:?}", self.dims)));
        }
        match self.loss {
            LossKind::CrossEntropy if *self.dims.last().unwrap() < 2 => {
                Err(Error::config("cross-entropy MLP needs at least two outputs"))
            }
            LossKind::Analytic => Err(Error::config("MLP loss must be MSE or cross-entropy")),
            _ => Ok(()),
        }
    }

    /// Dense layer `j` (forward order) sits at layer index `depth - 1 - j`.
    pub(super) fn layers(&self) -> Vec<LayerSpec> {
        (0..self.depth())
            .rev()
            .map(|j| LayerSpec {
                name: format!("dense{j}"),
                tensors: vec![
                    TensorSpec { name: format!("dense{j}.weight"), shape: vec![self.dims[j], self.dims[j + 1]] },
                    TensorSpec { name: format!("dense{j}.bias"), shape: vec![self.dims[j + 1]] },
                ],
            })
            .collect()
    }

    pub(super) fn init(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(stream_seed(seed, Stream::Init));
        let mut out = Vec::new();
        for j in (0..self.depth()).rev() {
            let (fan_in, fan_out) = (self.dims[j], self.dims[j + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            out.push((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect());
            out.push(vec![0.0; fan_out]);
        }
        out
    }

    pub(super) fn costs(&self, rows: u64) -> Vec<(u64, u64, u64)> {
        let mut out = Vec::new();
        for j in (0..self.depth()).rev() {
            let (fi, fo) = (self.dims[j] as u64, self.dims[j + 1] as u64);
            let mm = 2 * fi * fo * rows;
            // Nothing below the input layer needs an activation gradient.
            let dy = if j == 0 { 0 } else { mm };
            out.push((mm, mm, 0));
            out.push((fo * rows, fo * rows, dy));
        }
        out
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let rows = batch.size;
        if batch.input_shape != [rows, self.dims[0]] {
            return Err(Error::config(format!(
                "MLP expects inputs [{rows}, {}], got {:?}",
                self.dims[0], batch.input_shape
            )));
        }
        let out = *self.dims.last().unwrap();
        match self.loss {
            LossKind::CrossEntropy => {
                if batch.target_shape != [rows] {
                    return Err(Error::config("cross-entropy targets must be [rows]"));
                }
                if batch
                    .targets
                    .iter()
                    .any(|&t| t < 0.0 || t.fract() != 0.0 || t as usize >= out)
                {
                    return Err(Error::config("class labels must be integers below the output width"));
                }
            }
            _ => {
                if batch.target_shape != [rows, out] {
                    return Err(Error::config(format!("MSE targets must be [{rows}, {out}]")));
                }
            }
        }
        Ok(())
    }

    pub(super) fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<MlpTape> {
        self.check_batch(batch)?;
        let rows = batch.size;
        let depth = self.depth();
        let mut acts = vec![batch.inputs.clone()];
        let mut z = Vec::new();
        for j in 0..depth {
            let li = depth - 1 - j;
            let (fi, fo) = (self.dims[j], self.dims[j + 1]);
            let w = params.tensor(2 * li).data();
            let b = params.tensor(2 * li + 1).data();
            let x = &acts[j];
            z = vec![0.0; rows * fo];
            for r in 0..rows {
                let zr = &mut z[r * fo..(r + 1) * fo];
                zr.copy_from_slice(b);
                for a in 0..fi {
                    let xa = x[r * fi + a];
                    for (zc, wc) in zr.iter_mut().zip(&w[a * fo..(a + 1) * fo]) {
                        *zc += xa * wc;
                    }
                }
            }
            check_finite(&z, li)?;
            if j + 1 < depth {
                acts.push(z.iter().map(|v| v.tanh()).collect());
            }
        }
        let out = *self.dims.last().unwrap();
        let (loss, dout) = match self.loss {
            LossKind::CrossEntropy => softmax_cross_entropy(&z, &batch.targets, rows, out),
            _ => mse(&z, &batch.targets, rows),
        };
        check_finite(&[loss], 0)?;
        Ok(MlpTape { loss, rows, acts, dout })
    }

    pub(super) fn backward(
        &self,
        params: &ParamSet,
        tape: &MlpTape,
        active: &[bool],
        out: &mut [Option<Vec<f64>>],
        count: &mut OpCount,
    ) {
        let Some(k_deep) = deepest(active) else { return };
        let li_deep = k_deep / 2;
        let depth = self.depth();
        let rows = tape.rows as u64;
        let mut dz = tape.dout.clone();
        for li in 0..=li_deep {
            let j = depth - 1 - li;
            let (fi, fo) = (self.dims[j], self.dims[j + 1]);
            let x = &tape.acts[j];
            if active[2 * li] {
                let mut dw = vec![0.0; fi * fo];
                for r in 0..tape.rows {
                    let dzr = &dz[r * fo..(r + 1) * fo];
                    for a in 0..fi {
                        let xa = x[r * fi + a];
                        for (g, d) in dw[a * fo..(a + 1) * fo].iter_mut().zip(dzr) {
                            *g += xa * d;
                        }
                    }
                }
                count.flops += 2 * rows * (fi * fo) as u64;
                out[2 * li] = Some(dw);
            }
            if active[2 * li + 1] {
                let mut db = vec![0.0; fo];
                for r in 0..tape.rows {
                    for (g, d) in db.iter_mut().zip(&dz[r * fo..(r + 1) * fo]) {
                        *g += d;
                    }
                }
                count.flops += rows * fo as u64;
                out[2 * li + 1] = Some(db);
            }
            if li < li_deep {
                let w = params.tensor(2 * li).data();
                let mut next = vec![0.0; tape.rows * fi];
                for r in 0..tape.rows {
                    let dzr = &dz[r * fo..(r + 1) * fo];
                    for a in 0..fi {
                        let s: f64 = w[a * fo..(a + 1) * fo].iter().zip(dzr).map(|(w, d)| w * d).sum();
                        let act = x[r * fi + a];
                        next[r * fi + a] = s * (1.0 - act * act);
                    }
                }
                count.flops += 2 * rows * (fi * fo) as u64;
                dz = next;
            }
        }
    }
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub(crate) fn softmax_cross_entropy(logits: &[f64], labels: &[f64], rows: usize, classes: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let inv = 1.0 / rows as f64;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        let y = labels[r] as usize;
        loss += lse - z[y];
        let g = &mut grad[r * classes..(r + 1) * classes];
        for (c, gc) in g.iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            *gc = (p - if c == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    (loss * inv, grad)
}

/// `1/rows * sum 1/2 |out - target|^2` and its gradient.
fn mse(out: &[f64], targets: &[f64], rows: usize) -> (f64, Vec<f64>) {
    let inv = 1.0 / rows as f64;
    let loss: f64 = out.iter().zip(targets).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum::<f64>() * inv;
    let grad = out.iter().zip(targets).map(|(o, t)| (o - t) * inv).collect();
    (loss, grad)
}
