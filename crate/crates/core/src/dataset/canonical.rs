//! `EMG1` canonical container (little-endian):
//!
//! ```text
//! magic "EMG1" | version u32 | subject u32 | exercise u8 | fs u32 | S u32 | T u64
//! f32 signal[T × S] (row-major) | u16 stimulus[T] | u16 repetition[T]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{Exercise, RecordingSession};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMG1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 1 + 4 + 4 + 8;

pub fn encode_canonical(session: &RecordingSession) -> Vec<u8> {
    let t = session.len();
    let mut out = Vec::with_capacity(HEADER_LEN + t * (session.n_sensors * 4 + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&session.subject.to_le_bytes());
    out.push(session.exercise.code());
    out.extend_from_slice(&session.fs_hz.to_le_bytes());
    out.extend_from_slice(&(session.n_sensors as u32).to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    for v in &session.signal {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &session.stimulus {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &session.repetition {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn field<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().unwrap()
}

/// Parses and validates one session. Nothing partial is ever returned.
pub fn decode_canonical(bytes: &[u8]) -> Result<RecordingSession> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing EMG1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt {
            offset: bytes.len() as u64,
            reason: format!("header needs {HEADER_LEN} bytes"),
        });
    }
    let version = u32::from_le_bytes(field(bytes, 4));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EMG1 version {version}")));
    }
    let subject = u32::from_le_bytes(field(bytes, 8));
    let exercise_code = bytes[12];
    let exercise = Exercise::from_code(exercise_code)
        .ok_or_else(|| Error::Format(format!("unknown exercise code {exercise_code}")))?;
    let fs_hz = u32::from_le_bytes(field(bytes, 13));
    let n_sensors = u32::from_le_bytes(field(bytes, 17)) as usize;
    let t = u64::from_le_bytes(field(bytes, 21));

    let expected = (t as u128) * (n_sensors as u128 * 4 + 4) + HEADER_LEN as u128;
    if bytes.len() as u128 != expected {
        let offset = (bytes.len() as u128).min(expected) as u64;
        let reason = if (bytes.len() as u128) < expected {
            format!(
                "truncated: expected {expected} bytes, found {}",
                bytes.len()
            )
        } else {
            format!("{} trailing bytes", bytes.len() as u128 - expected)
        };
        return Err(Error::Corrupt { offset, reason });
    }
    let t = t as usize;
    let mut at = HEADER_LEN;
    let signal = bytes[at..at + t * n_sensors * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    at += t * n_sensors * 4;
    let mut u16s = |n: usize| -> Vec<u16> {
        let v = bytes[at..at + n * 2]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += n * 2;
        v
    };
    let stimulus = u16s(t);
    let repetition = u16s(t);

    let session = RecordingSession {
        subject,
        exercise,
        fs_hz,
        n_sensors,
        signal,
        stimulus,
        repetition,
    };
    session.validate()?;
    Ok(session)
}

pub fn load_canonical(path: impl AsRef<Path>) -> Result<RecordingSession> {
    decode_canonical(&fs::read(path)?)
}

pub fn save_canonical(session: &RecordingSession, path: impl AsRef<Path>) -> Result<()> {
    session.validate()?;
    fs::write(path, encode_canonical(session))?;
    Ok(())
}

/// Loads every `*.emg` file in `dir`, sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<RecordingSession>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "emg"))
        .collect();
    paths.sort();
    paths.iter().map(load_canonical).collect()
}
