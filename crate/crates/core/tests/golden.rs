//! Frozen reference losses at initialisation.
//!
//! Each MLP row is recomputed here by a plain scalar implementation that
//! reads only the raw parameter buffers and the batch, then compared with both
//! the frozen value and the library forward pass.

use hizfo_core::data::two_moons;
use hizfo_core::{LayeredModel, LossKind, MlpSpec, ParamSet, RosenbrockSpec};

const GOLDEN: &str = include_str!("golden/losses.csv");
const TOL: f64 = 1e-12;

struct Row {
    model: String,
    seed: u64,
    batch_seed: u64,
    loss: f64,
}

fn rows() -> Vec<Row> {
    let mut lines = GOLDEN.lines();
    assert_eq!(lines.next(), Some("model,seed,batch_seed,loss"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Row { model: f[0].into(), seed: f[1].parse().unwrap(), batch_seed: f[2].parse().unwrap(), loss: f[3].parse().unwrap() }
        })
        .collect()
}

fn dims(model: &str) -> Vec<usize> {
    model.strip_prefix("mlp_").unwrap().split('-').map(|d| d.parse().unwrap()).collect()
}

/// Tanh MLP with a linear head and mean softmax cross-entropy, written out
/// one scalar at a time. Tensors are stored output layer first.
fn scalar_mlp_ce(dims: &[usize], params: &ParamSet, inputs: &[f64], labels: &[f64]) -> f64 {
    let depth = dims.len() - 1;
    let rows = labels.len();
    let mut total = 0.0;
    for r in 0..rows {
        let mut a: Vec<f64> = inputs[r * dims[0]..(r + 1) * dims[0]].to_vec();
        for j in 0..depth {
            let idx = 2 * (depth - 1 - j);
            let w = params.tensor(idx).data();
            let b = params.tensor(idx + 1).data();
            let mut z = vec![0.0; dims[j + 1]];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut s = b[o];
                for (i, ai) in a.iter().enumerate() {
                    s += ai * w[i * dims[j + 1] + o];
                }
                *zo = if j + 1 < depth { s.tanh() } else { s };
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - a[labels[r] as usize];
    }
    total / rows as f64
}

#[test]
fn golden_losses_hold() {
    let rows = rows();
    assert!(!rows.is_empty());
    for row in rows {
        if row.model == "rosenbrock" {
            let model = LayeredModel::rosenbrock(RosenbrockSpec::default()).unwrap();
            let params = model.init_params(row.seed);
            let lib = model.forward(&params, &hizfo_core::Batch::analytic()).unwrap();
            assert!((lib - row.loss).abs() <= TOL, "rosenbrock {lib} vs {}", row.loss);
            continue;
        }
        let d = dims(&row.model);
        let model = LayeredModel::mlp(MlpSpec::new(d.clone(), LossKind::CrossEntropy)).unwrap();
        let params = model.init_params(row.seed);
        let batch = two_moons(64, 0.1, row.batch_seed).unwrap();
        let oracle = scalar_mlp_ce(&d, &params, &batch.inputs, &batch.targets);
        let lib = model.forward(&params, &batch).unwrap();
        assert!((oracle - row.loss).abs() <= TOL, "{} seed {}: oracle {oracle:.17e} vs frozen {}", row.model, row.seed, row.loss);
        assert!((lib - row.loss).abs() <= TOL, "{} seed {}: library {lib:.17e} vs frozen {}", row.model, row.seed, row.loss);
    }
}
