//! TNet, FNet and the hybrid model with its fusion head.

use std::fmt;
use std::str::FromStr;

use crate::embedding::{embed, EmbeddingParams, PatchScheme, PathKind};
use crate::encoder::{encoder_forward, EncoderLayer};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::layers::{Init, Linear, Norm};
use crate::tensor::{Float, Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Base,
    Large,
    Huge,
    TNet,
    FNet,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::Large,
        Variant::Huge,
        Variant::TNet,
        Variant::FNet,
    ];

    /// `(layers, dim, mlp, heads)`. The single-path variants use the Huge
    /// encoder.
    pub fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            Variant::Base => (1, 32, 128, 4),
            Variant::Large => (2, 64, 256, 4),
            Variant::Huge | Variant::TNet | Variant::FNet => (1, 144, 720, 8),
        }
    }

    pub fn paths(self) -> Vec<PathKind> {
        match self {
            Variant::TNet => vec![PathKind::Temporal],
            Variant::FNet => vec![PathKind::Featural],
            _ => PathKind::BOTH.to_vec(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::Large => "large",
            Variant::Huge => "huge",
            Variant::TNet => "tnet",
            Variant::FNet => "fnet",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "large" => Ok(Variant::Large),
            "huge" => Ok(Variant::Huge),
            "tnet" => Ok(Variant::TNet),
            "fnet" => Ok(Variant::FNet),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossMode {
    /// Sum of the per-path and fused cross-entropies.
    #[default]
    ThreeTerm,
    /// Fused cross-entropy alone.
    FusedOnly,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::ThreeTerm => "three-term",
            LossMode::FusedOnly => "fused-only",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "three-term" => Ok(LossMode::ThreeTerm),
            "fused-only" => Ok(LossMode::FusedOnly),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

/// Output head identity, as reported in metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadKind {
    Fused,
    TNet,
    FNet,
}

impl HeadKind {
    pub fn of_path(kind: PathKind) -> Self {
        match kind {
            PathKind::Temporal => HeadKind::TNet,
            PathKind::Featural => HeadKind::FNet,
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Fused => "y",
            HeadKind::TNet => "y_tnet",
            HeadKind::FNet => "y_fnet",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "y" => Ok(HeadKind::Fused),
            "y_tnet" => Ok(HeadKind::TNet),
            "y_fnet" => Ok(HeadKind::FNet),
            other => Err(Error::Config(format!("unknown head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub dim: usize,
    pub mlp: usize,
    pub heads: usize,
    pub window_ms: u32,
    pub fs_hz: u32,
    pub n_sensors: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub paths: Vec<PathKind>,
}

impl ModelConfig {
    /// A catalog variant on 12 sensors, 3 filter channels, 2 kHz.
    pub fn new(variant: Variant, window_ms: u32, n_classes: usize) -> Self {
        let (layers, dim, mlp, heads) = variant.dims();
        Self {
            variant,
            layers,
            dim,
            mlp,
            heads,
            window_ms,
            fs_hz: 2000,
            n_sensors: 12,
            channels: 3,
            n_classes,
            paths: variant.paths(),
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms as u64 * self.fs_hz as u64 / 1000) as usize
    }

    pub fn is_hybrid(&self) -> bool {
        self.paths.len() == 2
    }

    pub fn scheme(&self, kind: PathKind) -> Result<PatchScheme> {
        PatchScheme::new(kind, self.n_sensors, self.window_samples(), self.channels)
    }

    pub fn segment_len(&self) -> usize {
        self.n_sensors * self.window_samples() * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.mlp == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "layers, dim, mlp and classes must be positive".into(),
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dimension {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        let mut sorted = self.paths.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.is_empty() || sorted.len() != self.paths.len() {
            return Err(Error::Config("paths must be a nonempty set".into()));
        }
        for &kind in &self.paths {
            self.scheme(kind)?;
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("variant", self.variant);
        kv.set("layers", self.layers);
        kv.set("dim", self.dim);
        kv.set("mlp", self.mlp);
        kv.set("heads", self.heads);
        kv.set("window_ms", self.window_ms);
        kv.set("fs_hz", self.fs_hz);
        kv.set("sensors", self.n_sensors);
        kv.set("channels", self.channels);
        kv.set("classes", self.n_classes);
        let paths: Vec<&str> = self.paths.iter().map(|p| p.tag()).collect();
        kv.set("paths", paths.join(","));
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let variant: Variant = kv.require("variant")?;
        let mut c = Self::new(variant, kv.require("window_ms")?, kv.require("classes")?);
        if let Some(v) = kv.get("layers")? {
            c.layers = v;
        }
        if let Some(v) = kv.get("dim")? {
            c.dim = v;
        }
        if let Some(v) = kv.get("mlp")? {
            c.mlp = v;
        }
        if let Some(v) = kv.get("heads")? {
            c.heads = v;
        }
        if let Some(v) = kv.get("fs_hz")? {
            c.fs_hz = v;
        }
        if let Some(v) = kv.get("sensors")? {
            c.n_sensors = v;
        }
        if let Some(v) = kv.get("channels")? {
            c.channels = v;
        }
        if let Some(raw) = kv.get_str("paths") {
            c.paths = raw.split(',').map(str::parse).collect::<Result<_>>()?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Final layer norm and linear classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub norm: Norm,
    pub linear: Linear,
}

impl HeadParams {
    fn new<T: Float>(
        params: &mut ParamSet<T>,
        init: &mut Init,
        prefix: &str,
        dim: usize,
        k: usize,
    ) -> Self {
        Self {
            norm: Norm::new(params, &format!("{prefix}.norm"), dim),
            linear: Linear::new(params, init, &format!("{prefix}.linear"), dim, k, true),
        }
    }

    /// `cls: [B, D] -> [B, K]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, vars: &[Var], cls: Var) -> Result<Var> {
        let n = self.norm.forward(g, vars, cls)?;
        self.linear.forward(g, vars, n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    pub kind: PathKind,
    pub scheme: PatchScheme,
    pub embed: EmbeddingParams,
    pub layers: Vec<EncoderLayer>,
    pub head: HeadParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Logits {
    pub fused: Option<Var>,
    pub tnet: Option<Var>,
    pub fnet: Option<Var>,
}

impl Logits {
    pub fn get(&self, head: HeadKind) -> Option<Var> {
        match head {
            HeadKind::Fused => self.fused,
            HeadKind::TNet => self.tnet,
            HeadKind::FNet => self.fnet,
        }
    }

    /// Available heads in reporting order.
    pub fn heads(&self) -> Vec<(HeadKind, Var)> {
        [HeadKind::Fused, HeadKind::TNet, HeadKind::FNet]
            .into_iter()
            .filter_map(|h| self.get(h).map(|v| (h, v)))
            .collect()
    }

    /// The head whose accuracy is the model's headline number: `y` for
    /// hybrids, the only path head otherwise.
    pub fn primary(&self) -> Var {
        self.fused
            .or(self.tnet)
            .or(self.fnet)
            .expect("at least one head")
    }
}

/// Scalar loss nodes. `total` is the sum of the terms selected by the mode;
/// the others are still computed for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossBundle {
    pub tnet: Option<Var>,
    pub fnet: Option<Var>,
    pub fused: Option<Var>,
    pub total: Var,
}

/// Loss values read back from the graph.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub tnet: Option<f64>,
    pub fnet: Option<f64>,
    pub fused: Option<f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn values<T: Float>(&self, g: &Graph<T>) -> LossValues {
        let read = |v: Var| g.value(v).data()[0].as_f64();
        LossValues {
            tnet: self.tnet.map(read),
            fnet: self.fnet.map(read),
            fused: self.fused.map(read),
            total: read(self.total),
        }
    }
}

pub fn loss<T: Float>(
    g: &mut Graph<T>,
    logits: &Logits,
    labels: &[usize],
    mode: LossMode,
) -> Result<LossBundle> {
    if mode == LossMode::FusedOnly && logits.fused.is_none() {
        return Err(Error::Config("fused-only loss needs a hybrid model".into()));
    }
    let mut ce = |v: Option<Var>| v.map(|v| g.cross_entropy(v, labels)).transpose();
    let tnet = ce(logits.tnet)?;
    let fnet = ce(logits.fnet)?;
    let fused = ce(logits.fused)?;
    let total = match mode {
        LossMode::FusedOnly => fused.expect("checked above"),
        LossMode::ThreeTerm => {
            let terms: Vec<Var> = [tnet, fnet, fused].into_iter().flatten().collect();
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            acc
        }
    };
    Ok(LossBundle {
        tnet,
        fnet,
        fused,
        total,
    })
}

/// Trainable scalar count of `config`, without building it.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let (d, m, k) = (config.dim, config.mlp, config.n_classes);
    let layer = 2 * d + 3 * d * d + d * d + d + 2 * d + d * m + m + m * d + d;
    let head = 2 * d + d * k + k;
    let mut total = 0;
    for &kind in &config.paths {
        let s = config.scheme(kind)?;
        total += s.patch_dim * d + d + d + (s.n_patches + 1) * d + config.layers * layer + head;
    }
    if config.is_hybrid() {
        total += head;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub paths: Vec<PathParams>,
    pub fusion: Option<HeadParams>,
}

impl<T: Float> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut params = ParamSet::new();
        let mut paths = Vec::new();
        let (d, k) = (config.dim, config.n_classes);
        for &kind in &config.paths {
            let tag = kind.tag();
            let scheme = config.scheme(kind)?;
            let embed =
                EmbeddingParams::new(&mut params, &mut init, &format!("{tag}.embed"), &scheme, d);
            let layers = (0..config.layers)
                .map(|l| {
                    EncoderLayer::new(
                        &mut params,
                        &mut init,
                        &format!("{tag}.layers.{l}"),
                        d,
                        config.mlp,
                        config.heads,
                    )
                })
                .collect::<Result<_>>()?;
            let head = HeadParams::new(&mut params, &mut init, &format!("{tag}.head"), d, k);
            paths.push(PathParams {
                kind,
                scheme,
                embed,
                layers,
                head,
            });
        }
        let fusion = config
            .is_hybrid()
            .then(|| HeadParams::new(&mut params, &mut init, "fusion", d, k));
        Ok(Self {
            config,
            params,
            paths,
            fusion,
        })
    }

    pub fn path(&self, kind: PathKind) -> Option<&PathParams> {
        self.paths.iter().find(|p| p.kind == kind)
    }

    /// Output heads in reporting order, matching [`Logits::heads`].
    pub fn heads(&self) -> Vec<HeadKind> {
        let mut out = Vec::new();
        if self.fusion.is_some() {
            out.push(HeadKind::Fused);
        }
        for kind in PathKind::BOTH {
            if self.path(kind).is_some() {
                out.push(HeadKind::of_path(kind));
            }
        }
        out
    }

    /// Final class-token states `[B, D]` of each path.
    pub fn class_states(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: &[f32],
        batch: usize,
    ) -> Result<Vec<(PathKind, Var)>> {
        if x.len() != batch * self.config.segment_len() {
            return Err(Error::Config(format!(
                "batch of {} values does not match {batch} segments of {} ({}×{}×{})",
                x.len(),
                self.config.segment_len(),
                self.config.n_sensors,
                self.config.window_samples(),
                self.config.channels
            )));
        }
        let mut out = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let patches = g.constant(path.scheme.patch_batch(x, batch)?);
            let z0 = embed(g, vars, patches, &path.embed)?;
            let zl = encoder_forward(g, vars, z0, &path.layers)?;
            out.push((path.kind, g.select_row(zl, 0)?));
        }
        Ok(out)
    }

    /// Logits for `batch` segments laid out back to back in `x`
    /// (`S × W × C` each). `vars` must come from `g.bind(&self.params)`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: &[f32],
        batch: usize,
    ) -> Result<Logits> {
        let states = self.class_states(g, vars, x, batch)?;
        let mut logits = Logits::default();
        for ((kind, cls), path) in states.iter().zip(&self.paths) {
            let y = path.head.forward(g, vars, *cls)?;
            match kind {
                PathKind::Temporal => logits.tnet = Some(y),
                PathKind::Featural => logits.fnet = Some(y),
            }
        }
        if let Some(fusion) = &self.fusion {
            let sum = g.add(states[0].1, states[1].1)?;
            logits.fused = Some(fusion.forward(g, vars, sum)?);
        }
        Ok(logits)
    }

    /// Inference-only forward; returns `(head, [B, K] logits)` per head.
    pub fn predict(&self, x: &[f32], batch: usize) -> Result<Vec<(HeadKind, Tensor<T>)>> {
        let mut g = Graph::new();
        let vars = g.bind_frozen(&self.params);
        let logits = self.forward(&mut g, &vars, x, batch)?;
        Ok(logits
            .heads()
            .into_iter()
            .map(|(h, v)| (h, g.value(v).clone()))
            .collect())
    }
}
