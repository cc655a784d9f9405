use crate::dataset::Exercise;
use crate::tensor::Tensor;

/// A filtered and normalized recording, `T × S × C` row-major, with the
/// original per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSession {
    pub subject: u32,
    pub exercise: Exercise,
    pub fs_hz: u32,
    pub n_sensors: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub stimulus: Vec<u16>,
    pub repetition: Vec<u16>,
}

impl PreparedSession {
    pub fn len(&self) -> usize {
        self.stimulus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimulus.is_empty()
    }

    /// Copies samples `start..start + width` into an `S × W × C` tensor.
    pub fn window(&self, start: usize, width: usize) -> Tensor<f32> {
        let (s, c) = (self.n_sensors, self.channels);
        let mut out = Tensor::zeros(vec![s, width, c]);
        self.write_window(start, width, out.data_mut());
        out
    }

    /// Like [`window`](Self::window) but into a caller buffer of length
    /// `S·W·C`.
    pub fn write_window(&self, start: usize, width: usize, out: &mut [f32]) {
        let (s, c) = (self.n_sensors, self.channels);
        debug_assert_eq!(out.len(), s * width * c);
        for t in 0..width {
            let frame = &self.data[(start + t) * s * c..(start + t + 1) * s * c];
            for sensor in 0..s {
                let dst = (sensor * width + t) * c;
                out[dst..dst + c].copy_from_slice(&frame[sensor * c..(sensor + 1) * c]);
            }
        }
    }
}

/// A window position inside a [`PreparedSession`]; cheap to store in bulk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub start: usize,
    pub movement: u16,
    pub repetition: u16,
}

/// One model input `x: S × W × C` with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub x: Tensor<f32>,
    pub label: usize,
    pub subject: u32,
    pub repetition: u16,
}

/// Window starts over every maximal run of constant (movement, repetition)
/// with a non-rest movement. Windows are laid out from the start of each run
/// with stride `step`; a run shorter than `width` yields nothing.
pub fn homogeneous_windows(
    stimulus: &[u16],
    repetition: &[u16],
    width: usize,
    step: usize,
) -> Vec<WindowRef> {
    assert_eq!(stimulus.len(), repetition.len());
    assert!(width > 0 && step > 0);
    let mut out = Vec::new();
    let mut run_start = 0;
    while run_start < stimulus.len() {
        let key = (stimulus[run_start], repetition[run_start]);
        let mut run_end = run_start + 1;
        while run_end < stimulus.len() && (stimulus[run_end], repetition[run_end]) == key {
            run_end += 1;
        }
        if key.0 != 0 {
            let mut start = run_start;
            while start + width <= run_end {
                out.push(WindowRef {
                    start,
                    movement: key.0,
                    repetition: key.1,
                });
                start += step;
            }
        }
        run_start = run_end;
    }
    out
}

/// Materializes every homogeneous window of `session`. `label` is the raw
/// movement id; class remapping happens at split time.
pub fn segment(session: &PreparedSession, window_ms: u32, step_ms: u32) -> Vec<Segment> {
    let width = (window_ms as u64 * session.fs_hz as u64 / 1000) as usize;
    let step = ((step_ms as u64 * session.fs_hz as u64 / 1000) as usize).max(1);
    if width == 0 {
        return Vec::new();
    }
    homogeneous_windows(&session.stimulus, &session.repetition, width, step)
        .into_iter()
        .map(|w| Segment {
            x: session.window(w.start, width),
            label: w.movement as usize,
            subject: session.subject,
            repetition: w.repetition,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(stimulus: Vec<u16>, repetition: Vec<u16>) -> PreparedSession {
        let t = stimulus.len();
        PreparedSession {
            subject: 1,
            exercise: Exercise::B,
            fs_hz: 2000,
            n_sensors: 2,
            channels: 3,
            data: (0..t * 6).map(|i| (i % 7) as f32 / 7.0).collect(),
            stimulus,
            repetition,
        }
    }

    /// floor((run - width) / step) + 1 for runs at least `width` long.
    fn count_oracle(run: usize, width: usize, step: usize) -> usize {
        if run < width {
            0
        } else {
            (run - width) / step + 1
        }
    }

    #[test]
    fn homogeneous_run_count() {
        let s = session(vec![3; 1000], vec![1; 1000]);
        assert_eq!(segment(&s, 200, 10).len(), count_oracle(1000, 400, 20));
        assert_eq!(count_oracle(1000, 400, 20), 31);
    }

    #[test]
    fn short_run_and_rest_yield_nothing() {
        let s = session(vec![3; 399], vec![1; 399]);
        assert!(segment(&s, 200, 10).is_empty());
        let s = session(vec![0; 2000], vec![0; 2000]);
        assert!(segment(&s, 200, 10).is_empty());
    }

    #[test]
    fn windows_never_straddle_label_changes() {
        let mut stim = vec![1u16; 500];
        stim.extend(vec![2u16; 450]);
        stim.extend(vec![0u16; 100]);
        stim.extend(vec![2u16; 410]);
        let mut rep = vec![1u16; 950];
        rep.extend(vec![0u16; 100]);
        rep.extend(vec![2u16; 410]);
        let s = session(stim.clone(), rep);
        let segs = homogeneous_windows(&s.stimulus, &s.repetition, 400, 20);
        assert_eq!(
            segs.len(),
            count_oracle(500, 400, 20) + count_oracle(450, 400, 20) + count_oracle(410, 400, 20)
        );
        for w in segs {
            assert!(stim[w.start..w.start + 400]
                .iter()
                .all(|&m| m == w.movement));
        }
    }

    #[test]
    fn window_layout_is_sensor_time_channel() {
        let s = session(vec![1; 10], vec![1; 10]);
        let x = s.window(2, 4);
        assert_eq!(x.shape(), &[2, 4, 3]);
        for sensor in 0..2 {
            for t in 0..4 {
                for c in 0..3 {
                    let src = s.data[((2 + t) * 2 + sensor) * 3 + c];
                    assert_eq!(x.get(&[sensor, t, c]), src);
                }
            }
        }
    }
}
