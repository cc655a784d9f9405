//! Oracles shared by the integration tests: a finite-difference gradient
//! checker, straight-line reference evaluations on nested `Vec`s, and an
//! exhaustive sign-flip enumeration for the signed-rank test.

#![allow(dead_code, clippy::needless_range_loop)]

use hgr_core::harness::average_ranks;
use hgr_core::{Graph, Model, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients
/// from inflating the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.5..1.5))
}

fn scalarize(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

/// Largest relative error between the tape gradient and central differences
/// of `sum(w ⊙ f(inputs))` for random fixed `w`, over every input element.
pub fn grad_check<F>(seed: u64, inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    let weights = random_tensor(&mut rng, g.shape(out));
    let root = scalarize(&mut g, out, &weights);
    g.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let value = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        let root = scalarize(&mut g, out, &weights);
        g.value(root).data()[0]
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let up = value(&work);
            work[i].data_mut()[j] = x - FD_STEP;
            let down = value(&work);
            work[i].data_mut()[j] = x;
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Same check for every tensor of a parameter set, sampling up to
/// `per_tensor` coordinates of each. `loss` builds the scalar from bound
/// parameter vars.
pub fn param_grad_check<F>(
    seed: u64,
    params: &ParamSet<f64>,
    per_tensor: usize,
    loss: F,
) -> (f64, usize)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars = g.bind(params);
    let root = loss(&mut g, &vars);
    g.backward(root).unwrap();
    let mut work = params.clone();
    work.zero_grad();
    work.accumulate_grads(&g, &vars).unwrap();

    let value = |p: &ParamSet<f64>| {
        let mut g = Graph::new();
        let vars = g.bind(p);
        let root = loss(&mut g, &vars);
        g.value(root).data()[0]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let n = params.get(id).numel();
        let analytic = work.get(id).grad().unwrap().to_vec();
        for _ in 0..per_tensor.min(n) {
            let j = rng.random_range(0..n);
            let x = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = x + FD_STEP;
            let up = value(&work);
            work.get_mut(id).data_mut()[j] = x - FD_STEP;
            let down = value(&work);
            work.get_mut(id).data_mut()[j] = x;
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Adds uniform noise in `±scale` to every parameter so layer-norm
/// scales and zero biases are not at special points.
pub fn jitter(params: &mut ParamSet<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

// ---------------------------------------------------------------------------
// Straight-line reference evaluation.

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn param(p: &ParamSet<f64>, name: &str) -> Tensor<f64> {
    p.get(
        p.find(name)
            .unwrap_or_else(|| panic!("no parameter {name}")),
    )
    .clone()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn linear(a: &Mat, p: &ParamSet<f64>, name: &str) -> Mat {
    let y = mm(a, &to_mat(&param(p, &format!("{name}.weight"))));
    match p.find(&format!("{name}.bias")) {
        Some(id) => add_row(&y, p.get(id).data()),
        None => y,
    }
}

pub fn layer_norm(a: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, x)| (x - mean) / (var + 1e-5).sqrt() * gamma[i] + beta[i])
                .collect()
        })
        .collect()
}

pub fn norm(a: &Mat, p: &ParamSet<f64>, name: &str) -> Mat {
    layer_norm(
        a,
        param(p, &format!("{name}.gamma")).data(),
        param(p, &format!("{name}.beta")).data(),
    )
}

pub fn softmax(r: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = r.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Head `h` of scaled dot-product attention from the packed `[Q | K | V]`
/// projection.
pub fn attention_head(z: &Mat, w_qkv: &Mat, heads: usize, h: usize) -> Mat {
    let d = z[0].len();
    let dh = d / heads;
    let qkv = mm(z, w_qkv);
    let pick = |block: usize| -> Mat {
        qkv.iter()
            .map(|r| r[block * d + h * dh..block * d + (h + 1) * dh].to_vec())
            .collect()
    };
    let (q, k, v) = (pick(0), pick(1), pick(2));
    let t = z.len();
    let mut out = vec![vec![0.0; dh]; t];
    for i in 0..t {
        let scores: Vec<f64> = (0..t)
            .map(|j| (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
            .collect();
        let p = softmax(&scores);
        for j in 0..t {
            for c in 0..dh {
                out[i][c] += p[j] * v[j][c];
            }
        }
    }
    out
}

pub fn encoder_layer(z: &Mat, p: &ParamSet<f64>, prefix: &str, heads: usize) -> Mat {
    let n1 = norm(z, p, &format!("{prefix}.ln1"));
    let w_qkv = to_mat(&param(p, &format!("{prefix}.qkv.weight")));
    let parts: Vec<Mat> = (0..heads)
        .map(|h| attention_head(&n1, &w_qkv, heads, h))
        .collect();
    let cat: Mat = (0..z.len())
        .map(|i| parts.iter().flat_map(|m| m[i].clone()).collect())
        .collect();
    let z1 = add(&linear(&cat, p, &format!("{prefix}.proj")), z);
    let n2 = norm(&z1, p, &format!("{prefix}.ln2"));
    let h: Mat = linear(&n2, p, &format!("{prefix}.fc1"))
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(&linear(&h, p, &format!("{prefix}.fc2")), &z1)
}

/// Tokens of one `S × W × C` segment (indexed `x[s][t][c]`).
pub fn temporal_patches(x: &[Vec<Vec<f64>>]) -> Mat {
    let s = x.len();
    let w = s * (x[0].len() / s);
    x.iter()
        .map(|sensor| sensor[..w].iter().flat_map(|c| c.iter().copied()).collect())
        .collect()
}

pub fn featural_patches(x: &[Vec<Vec<f64>>]) -> Mat {
    let s = x.len();
    let n = x[0].len() / s;
    (0..n)
        .map(|j| {
            let mut row = Vec::new();
            for sensor in x {
                for t in j * s..(j + 1) * s {
                    row.extend_from_slice(&sensor[t]);
                }
            }
            row
        })
        .collect()
}

/// Class-token state after the encoder for one path.
pub fn path_class_state(
    patches: &Mat,
    p: &ParamSet<f64>,
    tag: &str,
    layers: usize,
    heads: usize,
) -> Vec<f64> {
    let proj = linear(patches, p, &format!("{tag}.embed.proj"));
    let mut z = vec![param(p, &format!("{tag}.embed.class_token"))
        .data()
        .to_vec()];
    z.extend(proj);
    let z = add(&z, &to_mat(&param(p, &format!("{tag}.embed.pos"))));
    let z = (0..layers).fold(z, |z, l| {
        encoder_layer(&z, p, &format!("{tag}.layers.{l}"), heads)
    });
    z[0].clone()
}

pub fn head(cls: &[f64], p: &ParamSet<f64>, prefix: &str) -> Vec<f64> {
    let n = norm(&vec![cls.to_vec()], p, &format!("{prefix}.norm"));
    linear(&n, p, &format!("{prefix}.linear")).remove(0)
}

/// `(y, y_tnet, y_fnet)` for one segment.
pub type Heads = (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>);

pub fn reference_forward(model: &Model<f64>, x: &[Vec<Vec<f64>>]) -> Heads {
    let c = &model.config;
    let p = &model.params;
    let has = |tag: &str| p.find(&format!("{tag}.embed.pos")).is_some();
    let t_cls =
        has("tnet").then(|| path_class_state(&temporal_patches(x), p, "tnet", c.layers, c.heads));
    let f_cls =
        has("fnet").then(|| path_class_state(&featural_patches(x), p, "fnet", c.layers, c.heads));
    let y_t = t_cls.as_ref().map(|z| head(z, p, "tnet.head"));
    let y_f = f_cls.as_ref().map(|z| head(z, p, "fnet.head"));
    let y = match (&t_cls, &f_cls) {
        (Some(a), Some(b)) => {
            let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            Some(head(&sum, p, "fusion"))
        }
        _ => None,
    };
    (y, y_t, y_f)
}

pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(r, &l)| -softmax(r)[l].ln())
        .sum::<f64>()
        / labels.len() as f64
}

// ---------------------------------------------------------------------------
// Signed-rank enumeration.

/// Two-sided p from all `2^n` sign assignments of the ranked nonzero
/// differences: `2·min(P(W+ ≤ obs), P(W+ ≥ obs))`, capped at 1.
pub fn enumerate_signed_rank_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let obs: f64 = ranks
        .iter()
        .zip(&d)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, _)| r)
        .sum();
    let n = d.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if w <= obs + 1e-9 {
            le += 1;
        }
        if w >= obs - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}

// ---------------------------------------------------------------------------
// Toy model fixtures.

/// Huge-shaped toy: L=1, D=8, h=2, 4 sensors, 24-sample windows, 3
/// channels, 5 classes. TNet has 4 tokens, FNet 6.
pub fn toy_config() -> hgr_core::ModelConfig {
    let mut c = hgr_core::ModelConfig::new(hgr_core::Variant::Huge, 12, 5);
    c.dim = 8;
    c.mlp = 16;
    c.heads = 2;
    c.n_sensors = 4;
    c.channels = 3;
    c
}

pub fn toy_batch(seed: u64, config: &hgr_core::ModelConfig, batch: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch * config.segment_len())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect()
}

/// Segment `b` of a flat batch as `x[s][t][c]`.
pub fn nested(x: &[f32], config: &hgr_core::ModelConfig, b: usize) -> Vec<Vec<Vec<f64>>> {
    let (s, w, c) = (config.n_sensors, config.window_samples(), config.channels);
    let seg = &x[b * s * w * c..(b + 1) * s * w * c];
    (0..s)
        .map(|i| {
            (0..w)
                .map(|t| (0..c).map(|k| seg[(i * w + t) * c + k] as f64).collect())
                .collect()
        })
        .collect()
}
