//! Pre-norm transformer encoder.
//!
//! Each layer computes
//!
//! ```text
//! z' = MSA(LN1(z)) + z
//! z  = MLP(LN2(z')) + z'        MLP(x) = fc2(gelu(fc1(x)))
//! ```
//!
//! `W_QKV` is one bias-free `D × 3D` matrix laid out as `[Q | K | V]`; head
//! `i` owns columns `i·d_h .. (i+1)·d_h` of each block.

use crate::error::{Error, Result};
use crate::layers::{Init, Linear, Norm};
use crate::tensor::{Float, Graph, ParamSet, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub ln1: Norm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl EncoderLayer {
    pub fn new<T: Float>(
        params: &mut ParamSet<T>,
        init: &mut Init,
        prefix: &str,
        dim: usize,
        mlp: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            ln1: Norm::new(params, &format!("{prefix}.ln1"), dim),
            qkv: Linear::new(params, init, &format!("{prefix}.qkv"), dim, 3 * dim, false),
            proj: Linear::new(params, init, &format!("{prefix}.proj"), dim, dim, true),
            ln2: Norm::new(params, &format!("{prefix}.ln2"), dim),
            fc1: Linear::new(params, init, &format!("{prefix}.fc1"), dim, mlp, true),
            fc2: Linear::new(params, init, &format!("{prefix}.fc2"), mlp, dim, true),
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn numel(&self) -> usize {
        4 * self.dim + self.qkv.numel() + self.proj.numel() + self.fc1.numel() + self.fc2.numel()
    }
}

/// One head's attention given the packed projection `qkv: [B, T, 3D]`.
/// Returns the output `[B, T, d_h]` and the probabilities `[B, T, T]`.
fn attend<T: Float>(
    g: &mut Graph<T>,
    qkv: Var,
    layer: &EncoderLayer,
    head: usize,
) -> Result<(Var, Var)> {
    let (d, dh) = (layer.dim, layer.head_dim());
    let q = g.slice_last(qkv, head * dh, dh)?;
    let k = g.slice_last(qkv, d + head * dh, dh)?;
    let v = g.slice_last(qkv, 2 * d + head * dh, dh)?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, T::one() / T::of(dh as f64).sqrt());
    let p = g.softmax_lastdim(scores)?;
    Ok((g.bmm(p, v, false)?, p))
}

/// Scaled dot-product attention of head `head` on `z: [B, T, D]`, with its
/// probability matrix.
pub fn self_attention<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    z: Var,
    layer: &EncoderLayer,
    head: usize,
) -> Result<(Var, Var)> {
    if head >= layer.heads {
        return Err(Error::Index {
            op: "self_attention",
            row: 0,
            label: head,
            bound: layer.heads,
        });
    }
    let qkv = layer.qkv.forward(g, vars, z)?;
    attend(g, qkv, layer, head)
}

/// All heads concatenated, then projected by `W_MSA` plus bias.
pub fn msa<T: Float>(g: &mut Graph<T>, vars: &[Var], z: Var, layer: &EncoderLayer) -> Result<Var> {
    let qkv = layer.qkv.forward(g, vars, z)?;
    let heads = (0..layer.heads)
        .map(|h| attend(g, qkv, layer, h).map(|(out, _)| out))
        .collect::<Result<Vec<_>>>()?;
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_last(&heads)?
    };
    layer.proj.forward(g, vars, cat)
}

pub fn mlp<T: Float>(g: &mut Graph<T>, vars: &[Var], z: Var, layer: &EncoderLayer) -> Result<Var> {
    let h = layer.fc1.forward(g, vars, z)?;
    let h = g.gelu(h);
    layer.fc2.forward(g, vars, h)
}

pub fn layer_forward<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    z: Var,
    layer: &EncoderLayer,
) -> Result<Var> {
    let n = layer.ln1.forward(g, vars, z)?;
    let a = msa(g, vars, n, layer)?;
    let z1 = g.add(a, z)?;
    let n = layer.ln2.forward(g, vars, z1)?;
    let m = mlp(g, vars, n, layer)?;
    g.add(m, z1)
}

/// `z0: [B, N+1, D] -> Z_L`.
pub fn encoder_forward<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    z0: Var,
    layers: &[EncoderLayer],
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    layers
        .iter()
        .try_fold(z0, |z, layer| layer_forward(g, vars, z, layer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn layer(dim: usize, heads: usize, seed: u64) -> (ParamSet<f64>, EncoderLayer) {
        let mut params = ParamSet::new();
        let l = EncoderLayer::new(&mut params, &mut Init::new(seed), "l0", dim, 2 * dim, heads)
            .unwrap();
        (params, l)
    }

    #[test]
    fn single_token_attention_returns_v() {
        let (params, l) = layer(4, 2, 3);
        let mut g = Graph::new();
        let vars = g.bind(&params);
        let z = g.constant(Tensor::from_fn(vec![1, 1, 4], |i| i as f64 * 0.3 - 0.5));
        let (out, p) = self_attention(&mut g, &vars, z, &l, 1).unwrap();
        assert_eq!(g.value(p).data(), &[1.0]);
        let qkv = l.qkv.forward(&mut g, &vars, z).unwrap();
        assert_eq!(g.value(out).data(), &g.value(qkv).data()[4 + 4 + 2..12]);
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let (params, l) = layer(8, 2, 5);
        let mut g = Graph::new();
        let vars = g.bind(&params);
        let row: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let z = g.constant(Tensor::from_fn(vec![1, 5, 8], |i| row[i % 8]));
        let out = msa(&mut g, &vars, z, &l).unwrap();
        let o = g.value(out);
        for t in 1..5 {
            for d in 0..8 {
                assert!((o.data()[t * 8 + d] - o.data()[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_blocks_are_identity() {
        let (mut params, l) = layer(8, 2, 7);
        for id in [
            l.ln1.gamma,
            l.ln2.gamma,
            l.proj.bias.unwrap(),
            l.fc2.weight,
            l.fc2.bias.unwrap(),
        ] {
            params.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let vars = g.bind(&params);
        let x = Tensor::from_fn(vec![2, 3, 8], |i| (i as f64 * 0.7).cos());
        let z = g.constant(x.clone());
        let out = encoder_forward(&mut g, &vars, z, &[l.clone(), l]).unwrap();
        assert_eq!(g.value(out).data(), x.data());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (params, l) = layer(8, 4, 9);
        let mut g = Graph::new();
        let vars = g.bind(&params);
        let z = g.constant(Tensor::from_fn(vec![3, 6, 8], |i| {
            ((i * 37 % 11) as f64) - 5.0
        }));
        for h in 0..4 {
            let (_, p) = self_attention(&mut g, &vars, z, &l, h).unwrap();
            for row in g.value(p).data().chunks(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(self_attention(&mut g, &vars, z, &l, 4).is_err());
    }

    #[test]
    fn head_count_must_divide_dim() {
        let mut params = ParamSet::<f32>::new();
        assert!(EncoderLayer::new(&mut params, &mut Init::new(0), "x", 6, 12, 4).is_err());
    }

    #[test]
    fn reference_layer_size() {
        let (params, l) = layer(144, 8, 1);
        assert_eq!(l.qkv.numel(), 62_208);
        assert_eq!(l.proj.numel(), 20_880);
        assert_eq!(l.numel(), params.numel());
    }
}
