//! Breathing-signal ingestion and conditioning.

use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::compensated::dot2;
use crate::error::{Error, Result};

pub const DEFAULT_F1_HZ: f64 = 0.1;
pub const DEFAULT_F2_HZ: f64 = 0.85;
pub const DEFAULT_FS_HZ: f64 = 8.0;
pub const DEFAULT_WINDOW_S: u32 = 20;
pub const DEFAULT_STRIDE_S: u32 = 1;

/// A uniformly sampled respiration trace belonging to one recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct BreathingSignal {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    pub participant_id: String,
    pub session_id: String,
}

impl BreathingSignal {
    pub fn new(
        samples: Vec<f64>,
        fs_hz: f64,
        participant_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(Error::InvalidSignal(format!("sampling rate {fs_hz} Hz")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSignal("no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("non-finite value at sample {i}")));
        }
        Ok(Self {
            samples,
            fs_hz,
            participant_id: participant_id.into(),
            session_id: session_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            fs_hz: self.fs_hz,
            participant_id: self.participant_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}

/// Pass band of interest for breathing frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub f1_hz: f64,
    pub f2_hz: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            f1_hz: DEFAULT_F1_HZ,
            f2_hz: DEFAULT_F2_HZ,
        }
    }
}

impl BandConfig {
    pub fn new(f1_hz: f64, f2_hz: f64) -> Result<Self> {
        let band = Self { f1_hz, f2_hz };
        if !(f1_hz.is_finite() && f2_hz.is_finite() && 0.0 < f1_hz && f1_hz < f2_hz) {
            return Err(Error::Config(format!(
                "band edges must satisfy 0 < f1 < f2, got [{f1_hz}, {f2_hz}]"
            )));
        }
        Ok(band)
    }

    /// Checks the band against a sampling rate (upper edge below Nyquist).
    pub fn validate_for(&self, fs_hz: f64) -> Result<()> {
        Self::new(self.f1_hz, self.f2_hz)?;
        if self.f2_hz >= fs_hz / 2.0 {
            return Err(Error::Config(format!(
                "upper band edge {} Hz is not below Nyquist ({} Hz)",
                self.f2_hz,
                fs_hz / 2.0
            )));
        }
        Ok(())
    }
}

/// Per-session metadata accompanying a signal CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub participant_id: String,
    pub session_id: String,
    pub fs_hz: f64,
    pub vas_score_cm: f64,
}

impl SessionManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::Config(format!("fs_hz {} must be positive", self.fs_hz)));
        }
        if !(0.0..=10.0).contains(&self.vas_score_cm) {
            return Err(Error::OutOfRange(format!(
                "vas_score_cm {} outside [0, 10]",
                self.vas_score_cm
            )));
        }
        Ok(())
    }
}

/// A short-time analysis window cut from a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub values: Vec<f64>,
    /// Window end time in whole seconds.
    pub t_end_s: u32,
}

/// Reads a `time_s,value` CSV and resamples it onto a uniform grid at the
/// manifest rate, starting at the first timestamp.
pub fn load_signal(path: &Path, manifest: &SessionManifest) -> Result<BreathingSignal> {
    manifest.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "value" {
        return Err(Error::format(path, "expected header `time_s,value`"));
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parse = |field: &str| -> Result<f64> {
            field
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("row {}: cannot parse `{field}`", i + 1)))
        };
        times.push(parse(&record[0])?);
        values.push(parse(&record[1])?);
    }

    resample_linear(&times, &values, manifest.fs_hz).and_then(|samples| {
        BreathingSignal::new(
            samples,
            manifest.fs_hz,
            manifest.participant_id.clone(),
            manifest.session_id.clone(),
        )
    })
}

/// Linear interpolation of `(times, values)` onto `t0 + i / fs_hz`, covering
/// `[t0, t_last]`.
pub fn resample_linear(times: &[f64], values: &[f64], fs_hz: f64) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::Shape("time and value columns differ in length".into()));
    }
    if times.len() < 2 {
        return Err(Error::InvalidSignal(format!(
            "need at least 2 samples, got {}",
            times.len()
        )));
    }
    if let Some(i) = times
        .iter()
        .chain(values)
        .position(|v| !v.is_finite())
    {
        let row = i % times.len();
        return Err(Error::InvalidSignal(format!("non-finite value at row {}", row + 1)));
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTimestamps { row: i + 2 });
    }

    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let count = (span * fs_hz + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut seg = 0usize;
    for i in 0..count {
        let t = t0 + i as f64 / fs_hz;
        while seg + 2 < times.len() && times[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (times[seg], times[seg + 1]);
        let (va, vb) = (values[seg], values[seg + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(match frac {
            0.0 => va,
            1.0 => vb,
            _ => va + (vb - va) * frac,
        });
    }
    Ok(out)
}

/// Zero-phase brick-wall band-pass: every DFT bin whose absolute frequency
/// lies outside `[f1, f2]` is zeroed before the inverse transform.
pub fn bandpass(signal: &BreathingSignal, band: &BandConfig) -> Result<BreathingSignal> {
    let n = signal.len();
    if n < 2 {
        return Err(Error::InvalidSignal(format!(
            "band-pass needs at least 2 samples, got {n}"
        )));
    }
    band.validate_for(signal.fs_hz)?;

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut spectrum: Vec<Complex<f64>> =
        signal.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward.process(&mut spectrum);

    let resolution = signal.fs_hz / n as f64;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        // Signed bin index: k for the first half, k - n for the mirrored half.
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let f = (signed * resolution).abs();
        if f < band.f1_hz || f > band.f2_hz {
            *bin = Complex::new(0.0, 0.0);
        }
    }

    inverse.process(&mut spectrum);
    let scale = 1.0 / n as f64;
    let filtered = spectrum.iter().map(|c| c.re * scale).collect();
    Ok(signal.with_samples(filtered))
}

/// Cuts windows of `window_s` seconds ending at every whole second from
/// `window_s` to `floor(duration)`, advancing by `stride_s`.
pub fn extract_windows(
    signal: &BreathingSignal,
    window_s: u32,
    stride_s: u32,
) -> Result<Vec<SignalWindow>> {
    if window_s == 0 || stride_s == 0 {
        return Err(Error::Config("window and stride must be at least 1 s".into()));
    }
    let duration = signal.duration_s();
    if duration + 1e-9 < window_s as f64 {
        return Err(Error::SignalTooShort {
            duration_s: duration,
            required_s: window_s,
        });
    }
    let len = samples_for(window_s, signal.fs_hz);
    if len == 0 {
        return Err(Error::Config(format!(
            "window of {window_s} s holds no samples at {} Hz",
            signal.fs_hz
        )));
    }
    let last_end = (duration + 1e-9).floor() as u32;
    let windows = (window_s..=last_end)
        .step_by(stride_s as usize)
        .map(|t_end_s| {
            let end = samples_for(t_end_s, signal.fs_hz).min(signal.len());
            SignalWindow {
                values: signal.samples[end - len..end].to_vec(),
                t_end_s,
            }
        })
        .collect();
    Ok(windows)
}

fn samples_for(seconds: u32, fs_hz: f64) -> usize {
    (seconds as f64 * fs_hz).round() as usize
}

/// Biased autocorrelation `R(k) = (1/N) sum_t w[t] w[t+k]` for `k = 0..N-1`,
/// each lag summed with compensated arithmetic.
pub fn biased_autocorrelation(window: &[f64]) -> Vec<f64> {
    let n = window.len();
    let scale = 1.0 / n as f64;
    (0..n)
        .map(|k| dot2(window[..n - k].iter().copied().zip(window[k..].iter().copied())) * scale)
        .collect()
}
