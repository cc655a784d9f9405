//! Digital Butterworth low-pass design (bilinear transform with frequency
//! pre-warping) and the three-channel filter bank.
//!
//! Very low cutoffs relative to the sample rate put every pole close to
//! `z = 1`, where the expanded transfer-function polynomials lose most of
//! their precision. The expanded `b`/`a` arrays are kept for inspection, but
//! filtering and frequency responses go through second-order sections built
//! directly from the poles.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::PreprocessConfig;
use crate::error::{Error, Result};

/// One biquad, `a[0] == 1`. First-order sections have `b[2] == a[2] == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2)
            / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    /// Numerator of the expanded transfer function, length `order + 1`.
    pub b: Vec<f64>,
    /// Denominator of the expanded transfer function, `a[0] == 1`.
    pub a: Vec<f64>,
    pub sections: Vec<Section>,
    poles: Vec<Complex64>,
}

pub fn design_butterworth_lowpass(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::Parameter("filter order must be positive".into()));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)"
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let warped = fs2 * (PI * cutoff_hz / sample_rate_hz).tan();

    let n = order as f64;
    let poles: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            let s = Complex64::from_polar(warped, theta);
            (fs2 + s) / (fs2 - s)
        })
        .collect();

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    // poles[k] and poles[n-1-k] are conjugates; the middle one is real for odd n
    for p in &poles[..order / 2] {
        let a1 = -2.0 * p.re;
        let a2 = p.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Section {
            b: [g, 2.0 * g, g],
            a: [1.0, a1, a2],
        });
    }
    if order % 2 == 1 {
        let real = poles[order / 2].re;
        let g = (1.0 - real) / 2.0;
        sections.push(Section {
            b: [g, g, 0.0],
            a: [1.0, -real, 0.0],
        });
    }

    let mut a = vec![1.0];
    for s in &sections {
        let taps = if s.a[2] == 0.0 { 2 } else { 3 };
        a = poly_mul(&a, &s.a[..taps]);
    }
    // Numerator zeros all sit at z = -1; scale so the expanded form has unit
    // DC gain with respect to the denominator actually stored.
    let binom = binomial_row(order);
    let k = a.iter().sum::<f64>() / binom.iter().sum::<f64>();
    let b = binom.iter().map(|c| c * k).collect();

    Ok(FilterSpec {
        order,
        cutoff_hz,
        sample_rate_hz,
        b,
        a,
        sections,
        poles,
    })
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, &x) in p.iter().enumerate() {
        for (j, &y) in q.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..n {
        row = poly_mul(&row, &[1.0, 1.0]);
    }
    row
}

impl FilterSpec {
    /// `sum(b) / sum(a)`.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.norm() < 1.0)
    }

    /// Complex frequency response at `freq_hz`, evaluated from the sections.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Causal filtering from zero initial state (transposed direct form II
    /// per section).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward pass followed by a time-reversed pass (zero phase, squared
    /// magnitude).
    pub fn apply_zero_phase(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply(x);
        y.reverse();
        let mut y = self.apply(&y);
        y.reverse();
        y
    }
}

/// The filters producing the model's input channels, in channel order.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub filters: Vec<FilterSpec>,
    pub zero_phase: bool,
}

impl FilterBank {
    pub fn new(config: &PreprocessConfig, sample_rate_hz: f64) -> Result<Self> {
        let filters = config
            .filter_orders
            .iter()
            .map(|&order| design_butterworth_lowpass(order, config.cutoff_hz, sample_rate_hz))
            .collect::<Result<_>>()?;
        Ok(Self {
            filters,
            zero_phase: config.zero_phase,
        })
    }

    pub fn channels(&self) -> usize {
        self.filters.len()
    }
}

/// Filters a row-major `T × S` recording into `T × S × C`, channel `c` being
/// `bank.filters[c]` applied independently to every sensor.
pub fn filter_bank(raw: &[f32], n_sensors: usize, bank: &FilterBank) -> Result<Vec<f32>> {
    if n_sensors == 0 || !raw.len().is_multiple_of(n_sensors) {
        return Err(Error::Shape {
            shape: vec![raw.len() / n_sensors.max(1), n_sensors],
            len: raw.len(),
        });
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("raw signal (sensor {})", i % n_sensors),
            index: i / n_sensors,
        });
    }
    let t = raw.len() / n_sensors;
    let c = bank.channels();
    let mut out = vec![0f32; t * n_sensors * c];
    let mut column = vec![0f64; t];
    for s in 0..n_sensors {
        for (i, v) in column.iter_mut().enumerate() {
            *v = raw[i * n_sensors + s] as f64;
        }
        for (ch, filter) in bank.filters.iter().enumerate() {
            let y = if bank.zero_phase {
                filter.apply_zero_phase(&column)
            } else {
                filter.apply(&column)
            };
            for (i, v) in y.into_iter().enumerate() {
                out[(i * n_sensors + s) * c + ch] = v as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 2000.0;

    #[test]
    fn dc_gain_and_cutoff_magnitude() {
        for order in [1, 2, 3, 4, 5] {
            for cutoff in [1.0, 10.0, 250.0, 900.0] {
                let f = design_butterworth_lowpass(order, cutoff, FS).unwrap();
                assert!(
                    (f.dc_gain() - 1.0).abs() < 1e-9,
                    "order {order} fc {cutoff}"
                );
                assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
                let at_cut = f.magnitude(cutoff);
                assert!(
                    (at_cut - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6,
                    "order {order} fc {cutoff}: {at_cut}"
                );
                assert!(f.is_stable());
                assert_eq!(f.b.len(), order + 1);
                assert_eq!(f.a.len(), order + 1);
            }
        }
    }

    // Reference coefficients from an independent filter-design tool
    // (scipy.signal.butter(N, 1.0, fs=2000)).
    #[test]
    fn matches_reference_coefficients() {
        let f = design_butterworth_lowpass(1, 1.0, FS).unwrap();
        let b = [0.00156833408328098, 0.00156833408328098];
        let a = [1.0, -0.996863331833438];
        for (x, y) in f.b.iter().zip(b) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in f.a.iter().zip(a) {
            assert!((x - y).abs() < 1e-9);
        }

        let f = design_butterworth_lowpass(3, 1.0, FS).unwrap();
        let a = [
            1.0,
            -2.9937168172766526,
            2.9874533582428486,
            -0.9937365100570993,
        ];
        for (x, y) in f.a.iter().zip(a) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((f.b[0] - 3.8636370830198804e-09).abs() < 1e-15);
    }

    #[test]
    fn rejects_cutoff_at_or_above_nyquist() {
        assert!(design_butterworth_lowpass(3, 1000.0, FS).is_err());
        assert!(design_butterworth_lowpass(3, 1500.0, FS).is_err());
        assert!(design_butterworth_lowpass(3, 0.0, FS).is_err());
        assert!(design_butterworth_lowpass(0, 1.0, FS).is_err());
    }

    fn bank() -> FilterBank {
        FilterBank::new(&PreprocessConfig::default(), FS).unwrap()
    }

    #[test]
    fn constant_input_settles_to_constant() {
        let k = 0.37f32;
        let raw = vec![k; 40_000 * 2];
        let out = filter_bank(&raw, 2, &bank()).unwrap();
        let last = &out[out.len() - 6..];
        for &v in last {
            assert!((v - k).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let out = filter_bank(&vec![0.0; 300], 3, &bank()).unwrap();
        assert_eq!(out.len(), 300 * 3);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_sinusoid_far_above_cutoff() {
        let f = design_butterworth_lowpass(5, 1.0, FS).unwrap();
        let n = 60_000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 50.0 * i as f64 / FS).sin())
            .collect();
        let y = f.apply(&x);
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        // past the transient
        let tail = n / 2;
        assert!(rms(&y[tail..]) < 1e-3 * rms(&x[tail..]));
        // the frequency response predicts the same attenuation
        assert!(f.magnitude(50.0) < 1e-3);
    }

    #[test]
    fn non_finite_input_reports_sample() {
        let mut raw = vec![0.0f32; 40];
        raw[2 * 4 + 1] = f32::NAN;
        match filter_bank(&raw, 4, &bank()) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn channel_order_follows_configured_orders() {
        let b = bank();
        let raw: Vec<f32> = (0..2000).map(|i| if i > 100 { 1.0 } else { 0.0 }).collect();
        let out = filter_bank(&raw, 1, &b).unwrap();
        for (ch, filter) in b.filters.iter().enumerate() {
            let direct = filter.apply(&raw.iter().map(|&v| v as f64).collect::<Vec<_>>());
            for i in (0..2000).step_by(97) {
                assert!((out[i * 3 + ch] as f64 - direct[i]).abs() < 1e-6);
            }
        }
        assert_eq!(
            b.filters.iter().map(|f| f.order).collect::<Vec<_>>(),
            vec![1, 3, 5]
        );
    }
}
