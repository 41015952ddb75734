#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t3former_core::neural::{NeuralError, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a| + |n|, floor)`; the floor keeps near-zero gradients from
/// turning rounding noise into large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Entries bounded away from zero, for ops with a kink there.
pub fn kink_free_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let x: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { x } else { -x }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Compares tape gradients of `sum(f(inputs) * r)` against central differences,
/// `r` being a fixed random weighting of the output. Every tape is seeded with
/// `tape_seed`, so stochastic ops see the same mask on each evaluation. With
/// `coords = Some(k)` only `k` random coordinates are probed.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, tape_seed: u64, coords: Option<usize>, rng: &mut ChaCha8Rng) -> Result<f64, NeuralError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NeuralError>,
{
    let mut weights: Option<Tensor> = None;
    let eval = |values: &[Tensor], grads: bool, weights: &mut Option<Tensor>, rng: &mut ChaCha8Rng| {
        let mut tape = Tape::new(tape_seed);
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect::<Result<_, _>>()?;
        let out = f(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let (r, c) = (shape[0], shape[1]);
        let w = weights.get_or_insert_with(|| random_tensor(rng, r, c)).clone();
        let w = tape.leaf(w)?;
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod)?;
        let value = tape.value(loss).data()[0];
        let mut g = Vec::new();
        if grads {
            tape.backward(loss)?;
            for (v, t) in vars.iter().zip(values) {
                g.push(tape.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec));
            }
        }
        Ok::<_, NeuralError>((value, g))
    };
    let (_, analytic) = eval(inputs, true, &mut weights, rng)?;
    let mut all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if let Some(k) = coords {
        use rand::seq::SliceRandom;
        all.shuffle(rng);
        all.truncate(k);
    }
    let mut worst = 0.0f64;
    for (i, j) in all {
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[j] += FD_STEP;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[j] -= FD_STEP;
        let (fp, _) = eval(&plus, false, &mut weights, rng)?;
        let (fm, _) = eval(&minus, false, &mut weights, rng)?;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        if std::env::var("GRADCHECK_DEBUG").is_ok() && rel_err(analytic[i][j], numeric) > 1e-4 {
            eprintln!("input {i} coord {j}: analytic {} numeric {numeric} f+ {fp} f- {fm}", analytic[i][j]);
        }
        worst = worst.max(rel_err(analytic[i][j], numeric));
    }
    Ok(worst)
}

pub type GradCase = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64, NeuralError>);

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5))
}

fn unary(rng: &mut ChaCha8Rng, kink_free: bool, op: fn(&mut Tape, Var) -> Result<Var, NeuralError>) -> Result<f64, NeuralError> {
    let (n, m) = dims(rng);
    let x = if kink_free { kink_free_tensor(rng, n, m) } else { random_tensor(rng, n, m) };
    gradcheck(&[x], |t, v| op(t, v[0]), 0, None, rng)
}

/// One randomized finite-difference check per autodiff op.
pub fn op_cases() -> Vec<GradCase> {
    use std::sync::Arc;
    use t3former_core::neural::Axis;
    vec![
        ("matmul", |rng| {
            let (n, k) = dims(rng);
            let m = rng.gen_range(1..5);
            let (a, b) = (random_tensor(rng, n, k), random_tensor(rng, k, m));
            gradcheck(&[a, b], |t, v| t.matmul(v[0], v[1]), 0, None, rng)
        }),
        ("add", |rng| {
            let (n, m) = dims(rng);
            let b_rows = if rng.gen_bool(0.5) { 1 } else { n };
            let (a, b) = (random_tensor(rng, n, m), random_tensor(rng, b_rows, m));
            gradcheck(&[a, b], |t, v| t.add(v[0], v[1]), 0, None, rng)
        }),
        ("mul", |rng| {
            let (n, m) = dims(rng);
            let (a, b) = (random_tensor(rng, n, m), random_tensor(rng, n, m));
            gradcheck(&[a, b], |t, v| t.mul(v[0], v[1]), 0, None, rng)
        }),
        ("scale", |rng| {
            let s = rng.gen_range(-3.0..3.0);
            let (n, m) = dims(rng);
            let x = random_tensor(rng, n, m);
            gradcheck(&[x], move |t, v| t.scale(v[0], s), 0, None, rng)
        }),
        ("relu", |rng| unary(rng, true, |t, v| t.relu(v))),
        ("softmax", |rng| unary(rng, false, |t, v| t.softmax(v))),
        ("layer_norm", |rng| {
            let n = rng.gen_range(1..4);
            let m = rng.gen_range(2..6);
            let x = random_tensor(rng, n, m);
            let (g, b) = (random_tensor(rng, 1, m), random_tensor(rng, 1, m));
            gradcheck(&[x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2]), 0, None, rng)
        }),
        ("dropout", |rng| {
            let (n, m) = dims(rng);
            let x = random_tensor(rng, n, m);
            let seed = rng.gen();
            gradcheck(&[x], |t, v| t.dropout(v[0], 0.4), seed, None, rng)
        }),
        ("mean_pool_rows", |rng| unary(rng, false, |t, v| t.mean_pool(v, Axis::Rows))),
        ("mean_pool_cols", |rng| unary(rng, false, |t, v| t.mean_pool(v, Axis::Cols))),
        ("concat_rows", |rng| {
            let m = rng.gen_range(1..5);
            let (ra, rb) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (a, b) = (random_tensor(rng, ra, m), random_tensor(rng, rb, m));
            gradcheck(&[a, b], |t, v| t.concat(&[v[0], v[1], v[0]], Axis::Rows), 0, None, rng)
        }),
        ("concat_cols", |rng| {
            let n = rng.gen_range(1..5);
            let (ca, cb) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let (a, b) = (random_tensor(rng, n, ca), random_tensor(rng, n, cb));
            gradcheck(&[a, b], |t, v| t.concat(&[v[1], v[0]], Axis::Cols), 0, None, rng)
        }),
        ("transpose", |rng| unary(rng, false, |t, v| t.transpose(v))),
        ("slice_cols", |rng| {
            let n = rng.gen_range(1..4);
            let m = rng.gen_range(2..7);
            let x = random_tensor(rng, n, m);
            let start = rng.gen_range(0..m - 1);
            let len = rng.gen_range(1..=m - start);
            gradcheck(&[x], move |t, v| t.slice_cols(v[0], start, len), 0, None, rng)
        }),
        ("reshape", |rng| {
            let (n, m) = dims(rng);
            let x = random_tensor(rng, n, m * 2);
            gradcheck(&[x], move |t, v| t.reshape(v[0], 2 * n, m), 0, None, rng)
        }),
        ("sum", |rng| unary(rng, false, |t, v| t.sum(v))),
        ("neighbor_mean", |rng| {
            let n = rng.gen_range(1..7);
            let m = rng.gen_range(1..4);
            let lists: Vec<Vec<usize>> = (0..n)
                .map(|_| (0..n).filter(|_| rng.gen_bool(0.4)).collect())
                .collect();
            let lists = Arc::new(lists);
            let x = random_tensor(rng, n, m);
            gradcheck(&[x], move |t, v| t.neighbor_mean(v[0], Arc::clone(&lists)), 0, None, rng)
        }),
        ("cross_entropy", |rng| {
            let c = rng.gen_range(2..6);
            let target = rng.gen_range(0..c);
            let x = Tensor::matrix(1, c, (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect());
            gradcheck(&[x], move |t, v| t.cross_entropy_with_logits(v[0], target), 0, None, rng)
        }),
        ("embedding_add", |rng| {
            let (n, m) = dims(rng);
            let (x, table) = (random_tensor(rng, n, m), random_tensor(rng, n, m));
            gradcheck(&[x], move |t, v| t.embedding_add(v[0], &table), 0, None, rng)
        }),
    ]
}

/// Small random model and graph for end-to-end checks.
pub fn model_case(rng: &mut ChaCha8Rng, mode: t3former_core::ModelMode, dropout: f64) -> Result<f64, NeuralError> {
    use t3former_core::neural::{neighbor_lists, GraphInput, Model, ModelConfig};
    use t3former_core::StaticGraph;
    let nodes = rng.gen_range(3..7);
    let windows = rng.gen_range(1..5);
    let config = ModelConfig {
        mode,
        feature_dim: 3,
        dos_bins: 4,
        hidden_dim: 4,
        d_model: 4,
        heads: 2,
        layers: 1,
        ffn_dim: 6,
        view_dim: 3,
        num_classes: 3,
        dropout,
        ..ModelConfig::default()
    };
    let (model, params) = Model::new(config, rng.gen())?;
    let edges: Vec<(usize, usize)> = (0..nodes)
        .flat_map(|u| (u + 1..nodes).map(move |v| (u, v)))
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    let input = GraphInput {
        topo_tokens: random_tensor(rng, windows, 4),
        dos_tokens: random_tensor(rng, windows, 4),
        node_features: random_tensor(rng, nodes, 3),
        neighbors: neighbor_lists(&StaticGraph::from_edges(nodes, edges)),
    };
    let label = rng.gen_range(0..3);
    let seed = rng.gen();
    // Zero-initialized biases put some ReLU inputs exactly on the kink; probe
    // a jittered point instead of the initialization.
    let point: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|t| {
            let data = t.data().iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        })
        .collect();
    gradcheck(
        &point,
        |t, v| model.loss(t, v, &input, label).map(|(loss, _)| loss),
        seed,
        Some(60),
        rng,
    )
}
