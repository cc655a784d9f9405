use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// DB2 exercise. Movement ids inside an exercise are 1-based; 0 is rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Exercise {
    B,
    C,
    D,
}

impl Exercise {
    pub const ALL: [Exercise; 3] = [Exercise::B, Exercise::C, Exercise::D];

    pub fn movements(self) -> u16 {
        match self {
            Exercise::B => 17,
            Exercise::C => 23,
            Exercise::D => 9,
        }
    }

    /// Number of movements in the exercises before this one, i.e. the offset
    /// of this exercise's first class in the combined 49-class labelling.
    pub fn class_offset(self) -> usize {
        match self {
            Exercise::B => 0,
            Exercise::C => 17,
            Exercise::D => 40,
        }
    }

    /// On-disk code: B = 1, C = 2, D = 3.
    pub fn code(self) -> u8 {
        match self {
            Exercise::B => 1,
            Exercise::C => 2,
            Exercise::D => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Exercise::B),
            2 => Some(Exercise::C),
            3 => Some(Exercise::D),
            _ => None,
        }
    }
}

impl fmt::Display for Exercise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Exercise::B => "B",
            Exercise::C => "C",
            Exercise::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Exercise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" => Ok(Exercise::B),
            "C" => Ok(Exercise::C),
            "D" => Ok(Exercise::D),
            other => Err(Error::Config(format!("unknown exercise {other:?}"))),
        }
    }
}

/// One subject/exercise recording: `signal` is `T × S` row-major with one
/// stimulus (movement) id and repetition id per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSession {
    pub subject: u32,
    pub exercise: Exercise,
    pub fs_hz: u32,
    pub n_sensors: usize,
    pub signal: Vec<f32>,
    pub stimulus: Vec<u16>,
    pub repetition: Vec<u16>,
}

impl RecordingSession {
    pub fn len(&self) -> usize {
        self.stimulus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimulus.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(Error::Format("session has no sensors".into()));
        }
        if self.fs_hz == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        let t = self.stimulus.len();
        if self.signal.len() != t * self.n_sensors || self.repetition.len() != t {
            return Err(Error::Format(format!(
                "signal has {} values for {} sensors, {} stimulus and {} repetition labels",
                self.signal.len(),
                self.n_sensors,
                t,
                self.repetition.len()
            )));
        }
        let max = self.exercise.movements();
        if let Some(i) = self.stimulus.iter().position(|&m| m > max) {
            return Err(Error::Format(format!(
                "sample {i}: movement {} outside exercise {} (1..={max})",
                self.stimulus[i], self.exercise
            )));
        }
        Ok(())
    }

    /// Repetition ids that occur with a non-rest movement.
    pub fn repetitions(&self) -> Vec<u16> {
        let mut reps: Vec<u16> = self
            .stimulus
            .iter()
            .zip(&self.repetition)
            .filter(|(&m, _)| m != 0)
            .map(|(_, &r)| r)
            .collect();
        reps.sort_unstable();
        reps.dedup();
        reps
    }
}
