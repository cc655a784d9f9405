//! Patching and token embedding.
//!
//! A segment `S × W × C` is first cut to `W' = S·floor(W/S)` samples (the
//! trailing remainder is dropped), then split into tokens:
//!
//! - temporal: one token per sensor, `W'·C` values, time-major then channel;
//! - featural: one token per `S × S` slab of all sensors over `S` consecutive
//!   samples, flattened sensor-major, then time, then channel.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{Init, Linear};
use crate::tensor::{Float, Graph, ParamId, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    Temporal,
    Featural,
}

impl PathKind {
    pub const BOTH: [PathKind; 2] = [PathKind::Temporal, PathKind::Featural];

    /// Short path name used in parameter names and file names.
    pub fn tag(self) -> &'static str {
        match self {
            PathKind::Temporal => "tnet",
            PathKind::Featural => "fnet",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tnet" | "temporal" => Ok(PathKind::Temporal),
            "fnet" | "featural" => Ok(PathKind::Featural),
            other => Err(Error::Config(format!("unknown path {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchScheme {
    pub kind: PathKind,
    pub p1: usize,
    pub p2: usize,
    pub n_patches: usize,
    pub patch_dim: usize,
    pub n_sensors: usize,
    pub channels: usize,
    /// Samples per input window before truncation.
    pub width: usize,
    /// Samples actually consumed, `S·floor(W/S)`.
    pub truncated: usize,
}

impl PatchScheme {
    pub fn new(kind: PathKind, n_sensors: usize, width: usize, channels: usize) -> Result<Self> {
        if n_sensors == 0 || channels == 0 {
            return Err(Error::Config(
                "sensor and channel counts must be positive".into(),
            ));
        }
        if width < n_sensors {
            return Err(Error::Config(format!(
                "window of {width} samples is shorter than the {n_sensors} sensors"
            )));
        }
        let truncated = n_sensors * (width / n_sensors);
        let (p1, p2, n_patches) = match kind {
            PathKind::Temporal => (1, truncated, n_sensors),
            PathKind::Featural => (n_sensors, n_sensors, width / n_sensors),
        };
        Ok(Self {
            kind,
            p1,
            p2,
            n_patches,
            patch_dim: p1 * p2 * channels,
            n_sensors,
            channels,
            width,
            truncated,
        })
    }

    /// Values per input segment, `S·W·C`.
    pub fn segment_len(&self) -> usize {
        self.n_sensors * self.width * self.channels
    }

    /// Writes one segment's patches (`N × patch_dim`) into `out`.
    fn write<T: Float>(&self, x: &[f32], out: &mut [T]) {
        let (s, w, c) = (self.n_sensors, self.width, self.channels);
        match self.kind {
            PathKind::Temporal => {
                let row = self.truncated * c;
                for sensor in 0..s {
                    let src = &x[sensor * w * c..sensor * w * c + row];
                    for (o, v) in out[sensor * row..(sensor + 1) * row].iter_mut().zip(src) {
                        *o = T::of(*v as f64);
                    }
                }
            }
            PathKind::Featural => {
                let mut k = 0;
                for j in 0..self.n_patches {
                    for sensor in 0..s {
                        let base = (sensor * w + j * s) * c;
                        for v in &x[base..base + s * c] {
                            out[k] = T::of(*v as f64);
                            k += 1;
                        }
                    }
                }
            }
        }
    }

    /// Patches for a batch of segments laid out back to back, `[B, N, patch_dim]`.
    pub fn patch_batch<T: Float>(&self, x: &[f32], batch: usize) -> Result<Tensor<T>> {
        let seg = self.segment_len();
        if x.len() != batch * seg {
            return Err(Error::Shape {
                shape: vec![batch, self.n_sensors, self.width, self.channels],
                len: x.len(),
            });
        }
        let per = self.n_patches * self.patch_dim;
        let mut out = vec![T::zero(); batch * per];
        for b in 0..batch {
            self.write(&x[b * seg..(b + 1) * seg], &mut out[b * per..(b + 1) * per]);
        }
        Tensor::new(vec![batch, self.n_patches, self.patch_dim], out)
    }
}

/// `x: S × W × C -> N × patch_dim`.
pub fn make_patches(x: &Tensor<f32>, scheme: &PatchScheme) -> Result<Tensor<f32>> {
    let expected = [scheme.n_sensors, scheme.width, scheme.channels];
    if x.shape() != expected {
        return Err(Error::Dimension {
            op: "make_patches",
            lhs: x.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let t = scheme.patch_batch(x.data(), 1)?;
    t.reshape(vec![scheme.n_patches, scheme.patch_dim])
}

/// Patch projection, class token and positional table of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingParams {
    pub proj: Linear,
    pub class_token: ParamId,
    pub pos: ParamId,
    pub dim: usize,
    pub n_patches: usize,
}

impl EmbeddingParams {
    pub fn new<T: Float>(
        params: &mut ParamSet<T>,
        init: &mut Init,
        prefix: &str,
        scheme: &PatchScheme,
        dim: usize,
    ) -> Self {
        let proj = Linear::new(
            params,
            init,
            &format!("{prefix}.proj"),
            scheme.patch_dim,
            dim,
            true,
        );
        let class_token = params.add(
            format!("{prefix}.class_token"),
            init.normal(vec![dim], 0.02),
        );
        let pos = params.add(
            format!("{prefix}.pos"),
            init.normal(vec![scheme.n_patches + 1, dim], 0.02),
        );
        Self {
            proj,
            class_token,
            pos,
            dim,
            n_patches: scheme.n_patches,
        }
    }

    pub fn numel(&self) -> usize {
        self.proj.numel() + self.dim + (self.n_patches + 1) * self.dim
    }
}

/// `patches: [B, N, patch_dim] -> [B, N + 1, D]`: row 0 is the class token,
/// row `i` the projected patch `i - 1`, each plus its positional row.
pub fn embed<T: Float>(
    g: &mut Graph<T>,
    vars: &[Var],
    patches: Var,
    params: &EmbeddingParams,
) -> Result<Var> {
    let tokens = params.proj.forward(g, vars, patches)?;
    let seq = g.prepend_row(tokens, vars[params.class_token.0])?;
    g.add_broadcast(seq, vars[params.pos.0])
}
