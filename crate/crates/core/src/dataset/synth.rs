//! Deterministic synthetic recordings for desk-scale experiments.
//!
//! Each class has its own per-sensor amplitude pattern. The signal is
//! rectified band-limited Gaussian noise scaled by the active amplitude, so
//! the low-pass filter bank recovers a class-dependent envelope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Exercise, RecordingSession};
use crate::error::{Error, Result};

const REST_AMPLITUDE: f64 = 0.03;
const NOISE_BANDWIDTH_HZ: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub subjects: u32,
    /// Total classes, laid out across exercises B (17), C (23), D (9).
    pub classes: usize,
    pub reps: u16,
    /// Length of each movement repetition.
    pub duration_s: f64,
    /// Rest after every repetition (and once at the start).
    pub rest_s: f64,
    pub n_sensors: usize,
    pub fs_hz: u32,
}

impl SynthSpec {
    pub fn new(seed: u64, subjects: u32, classes: usize, reps: u16, duration_s: f64) -> Self {
        Self {
            seed,
            subjects,
            classes,
            reps,
            duration_s,
            rest_s: duration_s,
            n_sensors: 12,
            fs_hz: 2000,
        }
    }

    /// Amplitude pattern per class (`classes × sensors`). With no more classes
    /// than sensors, class `c` drives exactly the sensors `s ≡ c (mod classes)`,
    /// so active sets are disjoint.
    pub fn class_patterns(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x05ee_d0fc_1a55);
        let s = self.n_sensors;
        (0..self.classes)
            .map(|c| {
                let active: Vec<bool> = if self.classes <= s {
                    (0..s).map(|j| j % self.classes == c).collect()
                } else {
                    let mut a = vec![false; s];
                    for _ in 0..3 {
                        a[rng.random_range(0..s)] = true;
                    }
                    a
                };
                active
                    .into_iter()
                    .map(|on| {
                        if on {
                            rng.random_range(0.6..1.0)
                        } else {
                            rng.random_range(0.02..0.08)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Vec<RecordingSession>> {
        let max_classes = Exercise::ALL.iter().map(|e| e.movements() as usize).sum();
        if self.classes < 2 || self.classes > max_classes {
            return Err(Error::Parameter(format!(
                "synthetic class count must be in 2..={max_classes}, got {}",
                self.classes
            )));
        }
        if self.reps == 0 || self.subjects == 0 || self.n_sensors == 0 || self.duration_s <= 0.0 {
            return Err(Error::Parameter(
                "subjects, reps, sensors and duration must be positive".into(),
            ));
        }
        let patterns = self.class_patterns();
        let mut sessions = Vec::new();
        for subject in 1..=self.subjects {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(subject as u64),
            );
            let gains: Vec<f64> = (0..self.n_sensors)
                .map(|_| rng.random_range(0.8..1.2))
                .collect();
            for exercise in Exercise::ALL {
                let offset = exercise.class_offset();
                if offset >= self.classes {
                    break;
                }
                let count = (self.classes - offset).min(exercise.movements() as usize);
                sessions.push(self.session(
                    subject,
                    exercise,
                    &patterns[offset..offset + count],
                    &gains,
                    &mut rng,
                ));
            }
        }
        Ok(sessions)
    }

    fn session(
        &self,
        subject: u32,
        exercise: Exercise,
        patterns: &[Vec<f64>],
        gains: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> RecordingSession {
        let fs = self.fs_hz as f64;
        let move_len = (self.duration_s * fs).round() as usize;
        let rest_len = (self.rest_s * fs).round() as usize;
        let s = self.n_sensors;

        let mut stimulus = vec![0u16; rest_len];
        let mut repetition = vec![0u16; rest_len];
        let mut amplitude: Vec<(usize, Option<(usize, f64)>)> = vec![(rest_len, None)];
        for (c, _) in patterns.iter().enumerate() {
            for r in 1..=self.reps {
                let jitter = rng.random_range(0.9..1.1);
                stimulus.extend(std::iter::repeat_n(c as u16 + 1, move_len));
                repetition.extend(std::iter::repeat_n(r, move_len));
                amplitude.push((move_len, Some((c, jitter))));
                stimulus.extend(std::iter::repeat_n(0, rest_len));
                repetition.extend(std::iter::repeat_n(0, rest_len));
                amplitude.push((rest_len, None));
            }
        }

        let alpha = (-2.0 * std::f64::consts::PI * NOISE_BANDWIDTH_HZ / fs).exp();
        // unit-variance output of the one-pole smoother
        let norm = ((1.0 + alpha) / (1.0 - alpha)).sqrt();
        let mut state = vec![0f64; s];
        let mut signal = Vec::with_capacity(stimulus.len() * s);
        for (len, active) in amplitude {
            for _ in 0..len {
                for j in 0..s {
                    let w: f64 = rng.sample(StandardNormal);
                    state[j] = alpha * state[j] + (1.0 - alpha) * w;
                    let amp = match active {
                        Some((c, jitter)) => patterns[c][j] * jitter,
                        None => REST_AMPLITUDE,
                    };
                    signal.push((amp * gains[j] * (state[j] * norm).abs()) as f32);
                }
            }
        }

        RecordingSession {
            subject,
            exercise,
            fs_hz: self.fs_hz,
            n_sensors: s,
            signal,
            stimulus,
            repetition,
        }
    }
}

/// Sessions for `subjects` subjects with `classes` movements, each repeated
/// `reps` times for `duration_s` seconds.
pub fn synth_dataset(
    seed: u64,
    subjects: u32,
    classes: usize,
    reps: u16,
    duration_s: f64,
) -> Result<Vec<RecordingSession>> {
    SynthSpec::new(seed, subjects, classes, reps, duration_s).generate()
}
