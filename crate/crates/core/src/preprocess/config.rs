use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Preprocessing knobs, read from / written to `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub cutoff_hz: f64,
    pub mu: f64,
    pub window_ms: u32,
    pub step_ms: u32,
    /// Forward-backward filtering instead of causal.
    pub zero_phase: bool,
    /// Butterworth order per output channel.
    pub filter_orders: Vec<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 1.0,
            mu: 255.0,
            window_ms: 200,
            step_ms: 10,
            zero_phase: false,
            filter_orders: vec![1, 3, 5],
        }
    }
}

impl PreprocessConfig {
    /// Overrides defaults with whatever keys `kv` carries.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = kv.get("cutoff_hz")? {
            c.cutoff_hz = v;
        }
        if let Some(v) = kv.get("mu")? {
            c.mu = v;
        }
        if let Some(v) = kv.get("window_ms")? {
            c.window_ms = v;
        }
        if let Some(v) = kv.get("step_ms")? {
            c.step_ms = v;
        }
        if let Some(v) = kv.get("zero_phase")? {
            c.zero_phase = v;
        }
        if let Some(raw) = kv.get_str("filter_orders") {
            c.filter_orders = raw
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad filter_orders {raw:?}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("cutoff_hz", self.cutoff_hz);
        kv.set("mu", self.mu);
        kv.set("window_ms", self.window_ms);
        kv.set("step_ms", self.step_ms);
        kv.set("zero_phase", self.zero_phase);
        let orders: Vec<String> = self.filter_orders.iter().map(ToString::to_string).collect();
        kv.set("filter_orders", orders.join(","));
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.window_ms == 0 || self.step_ms == 0 {
            return Err(Error::Config(
                "window_ms and step_ms must be positive".into(),
            ));
        }
        if self.filter_orders.is_empty() || self.filter_orders.contains(&0) {
            return Err(Error::Config("filter_orders must be positive".into()));
        }
        Ok(())
    }

    /// Samples per window at `fs_hz`.
    pub fn window_samples(&self, fs_hz: u32) -> usize {
        (self.window_ms as u64 * fs_hz as u64 / 1000) as usize
    }

    pub fn step_samples(&self, fs_hz: u32) -> usize {
        ((self.step_ms as u64 * fs_hz as u64 / 1000) as usize).max(1)
    }
}
