//! Raw sEMG to model input: low-pass filter bank, μ-law normalization and
//! sliding-window segmentation, applied in that order.

mod config;
mod filter;
mod mulaw;
mod segment;

pub use config::PreprocessConfig;
pub use filter::{design_butterworth_lowpass, filter_bank, FilterBank, FilterSpec, Section};
pub use mulaw::{mu_law, mu_law_normalize, MuLawParams};
pub use segment::{homogeneous_windows, segment, PreparedSession, Segment, WindowRef};

use crate::dataset::RecordingSession;
use crate::error::Result;

/// Filters every session of one subject, fits the per-sensor μ-law scale on
/// `train_reps` samples across all of them, and normalizes.
pub fn prepare_subject(
    sessions: &[RecordingSession],
    config: &PreprocessConfig,
    train_reps: &[u16],
) -> Result<(Vec<PreparedSession>, MuLawParams)> {
    let mut filtered = Vec::with_capacity(sessions.len());
    for s in sessions {
        let bank = FilterBank::new(config, s.fs_hz as f64)?;
        filtered.push(filter_bank(&s.signal, s.n_sensors, &bank)?);
    }
    let n_sensors = sessions.first().map_or(0, |s| s.n_sensors);
    let channels = config.filter_orders.len();
    let params = MuLawParams::fit(
        config.mu,
        n_sensors,
        channels,
        filtered
            .iter()
            .zip(sessions)
            .map(|(f, s)| (f.as_slice(), s.repetition.as_slice())),
        train_reps,
    );
    let prepared = filtered
        .into_iter()
        .zip(sessions)
        .map(|(f, s)| {
            let data = mu_law_normalize(&f, &params, channels);
            PreparedSession {
                subject: s.subject,
                exercise: s.exercise,
                fs_hz: s.fs_hz,
                n_sensors: s.n_sensors,
                channels,
                data,
                stimulus: s.stimulus.clone(),
                repetition: s.repetition.clone(),
            }
        })
        .collect();
    Ok((prepared, params))
}
