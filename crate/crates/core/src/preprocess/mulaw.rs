//! μ-law companding, `F(x) = sign(x)·ln(1 + μ|x|) / ln(1 + μ)`, applied after
//! scaling each sensor by its training-set maximum magnitude.

/// `sign(x)·ln(1 + μ|x|) / ln(1 + μ)`.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuLawParams {
    pub mu: f64,
    /// Max |x| per sensor over training-repetition samples.
    pub per_channel_scale: Vec<f64>,
}

impl MuLawParams {
    /// Fits per-sensor scales from `T × S × C` filtered recordings, looking
    /// only at samples whose repetition id is in `train_reps`. A sensor that
    /// is flat on every training sample gets scale 1.
    pub fn fit<'a>(
        mu: f64,
        n_sensors: usize,
        channels: usize,
        sessions: impl IntoIterator<Item = (&'a [f32], &'a [u16])>,
        train_reps: &[u16],
    ) -> Self {
        let mut scale = vec![0f64; n_sensors];
        let stride = n_sensors * channels;
        for (data, reps) in sessions {
            for (frame, rep) in data.chunks_exact(stride).zip(reps) {
                if !train_reps.contains(rep) {
                    continue;
                }
                for (s, sensor) in frame.chunks_exact(channels).enumerate() {
                    for &v in sensor {
                        scale[s] = scale[s].max((v as f64).abs());
                    }
                }
            }
        }
        for (s, v) in scale.iter_mut().enumerate() {
            if *v == 0.0 || !v.is_finite() {
                log::warn!("sensor {s} is flat on the training repetitions; using scale 1");
                *v = 1.0;
            }
        }
        Self {
            mu,
            per_channel_scale: scale,
        }
    }
}

/// Normalizes a `T × S × C` array: divide by the sensor scale, clamp to
/// [-1, 1], then apply [`mu_law`].
pub fn mu_law_normalize(x: &[f32], params: &MuLawParams, channels: usize) -> Vec<f32> {
    let n_sensors = params.per_channel_scale.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = (i / channels) % n_sensors;
            let scaled = (v as f64 / params.per_channel_scale[s]).clamp(-1.0, 1.0);
            mu_law(scaled, params.mu) as f32
        })
        .collect()
}
