//! Batches and the synthetic / corpus data sources used by the model zoo.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A mini-batch. `inputs` and `targets` are flat row-major arrays whose
/// leading dimension is `size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub input_shape: Vec<usize>,
    pub targets: Vec<f64>,
    pub target_shape: Vec<usize>,
    pub size: usize,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        input_shape: Vec<usize>,
        targets: Vec<f64>,
        target_shape: Vec<usize>,
    ) -> Result<Self> {
        let size = *input_shape
            .first()
            .ok_or_else(|| Error::config("batch input shape is empty"))?;
        if size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if target_shape.first() != Some(&size) {
            return Err(Error::config(format!(
                "batch targets leading dimension {:?} != inputs {size}",
                target_shape.first()
            )));
        }
        if inputs.len() != input_shape.iter().product::<usize>() {
            return Err(Error::config("batch inputs do not match their shape"));
        }
        if targets.len() != target_shape.iter().product::<usize>() {
            return Err(Error::config("batch targets do not match their shape"));
        }
        Ok(Self { inputs, input_shape, targets, target_shape, size })
    }

    /// Placeholder batch for analytic objectives that ignore data.
    pub fn analytic() -> Self {
        Self {
            inputs: vec![0.0],
            input_shape: vec![1, 1],
            targets: vec![0.0],
            target_shape: vec![1, 1],
            size: 1,
        }
    }

    /// Row `i` of the inputs, assuming a rank-2 input.
    pub fn input_row(&self, i: usize) -> &[f64] {
        let w = self.inputs.len() / self.size;
        &self.inputs[i * w..(i + 1) * w]
    }
}

/// Two interleaving half circles with Gaussian jitter; labels are 0.0 / 1.0.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Batch> {
    if n == 0 {
        return Err(Error::config("two_moons needs at least one point"));
    }
    let mut rng = rng_from_seed(seed);
    let mut inputs = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        inputs.push(x + noise * nx);
        inputs.push(y + noise * ny);
        targets.push(label as f64);
    }
    Batch::new(inputs, vec![n, 2], targets, vec![n])
}

/// Split one batch into consecutive mini-batches of `batch_size` rows
/// (the last may be shorter).
pub fn split_batches(all: &Batch, batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let in_w = all.inputs.len() / all.size;
    let t_w = all.targets.len() / all.size;
    let mut out = Vec::new();
    let mut start = 0;
    while start < all.size {
        let end = (start + batch_size).min(all.size);
        let rows = end - start;
        let mut ishape = all.input_shape.clone();
        ishape[0] = rows;
        let mut tshape = all.target_shape.clone();
        tshape[0] = rows;
        out.push(Batch::new(
            all.inputs[start * in_w..end * in_w].to_vec(),
            ishape,
            all.targets[start * t_w..end * t_w].to_vec(),
            tshape,
        )?);
        start = end;
    }
    Ok(out)
}

/// Byte-level vocabulary: the most frequent bytes of a corpus plus one
/// out-of-vocabulary id (always the last id).
#[derive(Debug, Clone, PartialEq)]
pub struct ByteVocab {
    to_id: HashMap<u8, usize>,
    bytes: Vec<u8>,
}

impl ByteVocab {
    /// `cap` counts the OOV slot, so at most `cap - 1` distinct bytes are kept.
    pub fn build(corpus: &[u8], cap: usize) -> Result<Self> {
        if cap < 2 {
            return Err(Error::config("vocabulary cap must be at least 2"));
        }
        if corpus.is_empty() {
            return Err(Error::config("corpus is empty"));
        }
        let mut counts = [0usize; 256];
        for &b in corpus {
            counts[b as usize] += 1;
        }
        let mut ranked: Vec<(usize, u8)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| (c, b as u8))
            .collect();
        // Frequency descending, byte value ascending on ties.
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(cap - 1);
        let bytes: Vec<u8> = ranked.into_iter().map(|(_, b)| b).collect();
        let to_id = bytes.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        Ok(Self { to_id, bytes })
    }

    /// Vocabulary size including the OOV id.
    pub fn size(&self) -> usize {
        self.bytes.len() + 1
    }

    pub fn oov_id(&self) -> usize {
        self.bytes.len()
    }

    pub fn encode(&self, text: &[u8]) -> Vec<usize> {
        text.iter().map(|b| *self.to_id.get(b).unwrap_or(&self.oov_id())).collect()
    }
}

/// Sample `rows` random windows of `context + 1` tokens; inputs are the
/// first `context` tokens, targets the next-token shift.
pub fn char_windows(tokens: &[usize], context: usize, rows: usize, seed: u64) -> Result<Batch> {
    if tokens.len() < context + 1 {
        return Err(Error::config(format!(
            "corpus has {} tokens, need at least {}",
            tokens.len(),
            context + 1
        )));
    }
    let mut rng = rng_from_seed(seed);
    let span = tokens.len() - context;
    let mut inputs = Vec::with_capacity(rows * context);
    let mut targets = Vec::with_capacity(rows * context);
    for _ in 0..rows {
        let start = rng.random_range(0..span);
        inputs.extend(tokens[start..start + context].iter().map(|&t| t as f64));
        targets.extend(tokens[start + 1..start + context + 1].iter().map(|&t| t as f64));
    }
    Batch::new(inputs, vec![rows, context], targets, vec![rows, context])
}

/// Small built-in corpus so the character model runs without external files.
pub const BUILTIN_CORPUS: &str = "\
the quick brown fox jumps over the lazy dog. a small model reads a small text \
and learns which letter tends to follow which. the cat sat on the mat and the \
dog sat on the log. every morning the baker bakes bread, and every evening the \
baker sells the bread that is left. rivers run to the sea, and the sea sends \
rain back to the hills. to learn is to notice what repeats; to notice what \
repeats is to predict what comes next. one, two, three, four, five, six, seven, \
eight, nine, ten. the end of one line is the start of another line.\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_moons_is_deterministic_and_balanced() {
        let a = two_moons(64, 0.1, 5).unwrap();
        let b = two_moons(64, 0.1, 5).unwrap();
        assert_eq!(a, b);
        let ones = a.targets.iter().filter(|&&t| t == 1.0).count();
        assert_eq!(ones, 32);
        assert_eq!(a.input_shape, vec![64, 2]);
    }

    #[test]
    fn batch_rejects_mismatched_leading_dim() {
        assert!(Batch::new(vec![0.0; 4], vec![2, 2], vec![0.0; 3], vec![3]).is_err());
    }

    #[test]
    fn split_covers_all_rows() {
        let all = two_moons(10, 0.0, 1).unwrap();
        let parts = split_batches(&all, 4).unwrap();
        assert_eq!(parts.iter().map(|b| b.size).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(parts[2].input_row(1), all.input_row(9));
    }

    #[test]
    fn vocab_caps_and_maps_oov() {
        let v = ByteVocab::build(b"aaabbc", 3).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.encode(b"abc"), vec![0, 1, 2]);
        assert_eq!(v.oov_id(), 2);
    }

    #[test]
    fn windows_shift_targets_by_one() {
        let toks: Vec<usize> = (0..20).collect();
        let b = char_windows(&toks, 4, 3, 9).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(b.targets[r * 4 + c], b.inputs[r * 4 + c] + 1.0);
            }
        }
    }
}
