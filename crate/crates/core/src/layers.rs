//! Parameter handles for the small building blocks shared by the embedding,
//! encoder and heads, plus the seeded initializer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Float, Graph, ParamId, ParamSet, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Seeded weight initializer.
///
/// Linear weights and biases draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
/// tokens and positional tables from `N(0, 0.02)`.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Float>(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
    }

    pub fn normal<T: Float>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Float>(
        params: &mut ParamSet<T>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = params.add(
            format!("{name}.weight"),
            init.uniform(vec![fan_in, fan_out], bound),
        );
        let bias =
            bias.then(|| params.add(format!("{name}.bias"), init.uniform(vec![fan_out], bound)));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// `x: [..., fan_in] -> [..., fan_out]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.weight.0])?;
        match self.bias {
            Some(b) => g.add_broadcast(y, vars[b.0]),
            None => Ok(y),
        }
    }

    pub fn numel(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Float>(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::full(vec![dim], T::one())),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(
            x,
            vars[self.gamma.0],
            vars[self.beta.0],
            T::of(LAYER_NORM_EPS),
        )
    }
}
