//! Respiration variability spectrogram: short-time PSD columns built from the
//! biased autocorrelation of 1 s-stepped windows, sampled on `m` linearly
//! spaced frequency bins.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::compensated::{cos_cycles, dot2};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::signal::{
    biased_autocorrelation, extract_windows, BandConfig, BreathingSignal, DEFAULT_STRIDE_S,
    DEFAULT_WINDOW_S,
};

pub const DEFAULT_M: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub band: BandConfig,
    /// Number of frequency bins (highest bin index).
    pub m: usize,
    /// Lowest bin index.
    pub l: usize,
    pub window_s: u32,
    pub stride_s: u32,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            band: BandConfig::default(),
            m: DEFAULT_M,
            l: 1,
            window_s: DEFAULT_WINDOW_S,
            stride_s: DEFAULT_STRIDE_S,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        BandConfig::new(self.band.f1_hz, self.band.f2_hz)?;
        if self.m < 2 {
            return Err(Error::Config(format!("m must be at least 2, got {}", self.m)));
        }
        if self.l != 1 {
            return Err(Error::Config(format!("lowest bin must be 1, got {}", self.l)));
        }
        if self.window_s < 1 || self.stride_s < 1 {
            return Err(Error::Config("window and stride must be at least 1 s".into()));
        }
        Ok(())
    }
}

/// Maps a frequency in `[f1, f2]` to its bin in `[l, m]`, rounding half away
/// from zero.
pub fn freq_to_bin(f: f64, config: &SpectrogramConfig) -> Result<usize> {
    let SpectrogramConfig { band, m, l, .. } = *config;
    if !(band.f1_hz..=band.f2_hz).contains(&f) {
        return Err(Error::OutOfRange(format!(
            "frequency {f} Hz outside [{}, {}]",
            band.f1_hz, band.f2_hz
        )));
    }
    let scaled = (f - band.f1_hz) / (band.f2_hz - band.f1_hz) * (m - l) as f64;
    Ok(l + scaled.round() as usize)
}

pub fn bin_to_freq(y: usize, config: &SpectrogramConfig) -> Result<f64> {
    let SpectrogramConfig { band, m, l, .. } = *config;
    if !(l..=m).contains(&y) {
        return Err(Error::OutOfRange(format!("bin {y} outside [{l}, {m}]")));
    }
    Ok(band.f1_hz + (y - l) as f64 / (m - l) as f64 * (band.f2_hz - band.f1_hz))
}

/// Spectrogram of one session. Row `r` holds bin `y = l + r` (ascending
/// frequency); column `c` holds the window ending at
/// `t_end_first_s + c * stride_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RvsMatrix {
    pub values: Grid,
    pub config: SpectrogramConfig,
    pub fs_hz: f64,
    pub t_end_first_s: u32,
    pub participant_id: String,
    pub session_id: String,
}

impl RvsMatrix {
    pub fn bins(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    /// Replaces the values, keeping metadata.
    pub fn with_values(&self, values: Grid) -> Self {
        Self {
            values,
            config: self.config,
            fs_hz: self.fs_hz,
            t_end_first_s: self.t_end_first_s,
            participant_id: self.participant_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}

/// Evaluates `R(0) + 2 sum_k R(k) cos(2 pi (f / fs) k)` for every window and
/// every bin frequency. The signal is expected to be band-passed already.
pub fn compute_rvs(signal: &BreathingSignal, config: &SpectrogramConfig) -> Result<RvsMatrix> {
    config.validate()?;
    config.band.validate_for(signal.fs_hz)?;
    let windows = extract_windows(signal, config.window_s, config.stride_s)?;
    let n = windows[0].values.len();

    let cos_table: Vec<Vec<f64>> = (config.l..=config.m)
        .map(|y| {
            let cycles_per_sample = bin_to_freq(y, config).expect("bin within range") / signal.fs_hz;
            (0..n).map(|k| cos_cycles(k, cycles_per_sample)).collect()
        })
        .collect();

    let columns: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| {
            let r = biased_autocorrelation(&w.values);
            cos_table
                .iter()
                .map(|cos| {
                    let terms = r[1..].iter().zip(&cos[1..]).map(|(&rk, &c)| (rk, 2.0 * c));
                    dot2(std::iter::once((r[0], 1.0)).chain(terms))
                })
                .collect()
        })
        .collect();

    let values = Grid::from_fn(cos_table.len(), columns.len(), |row, col| columns[col][row]);
    Ok(RvsMatrix {
        values,
        config: *config,
        fs_hz: signal.fs_hz,
        t_end_first_s: windows[0].t_end_s,
        participant_id: signal.participant_id.clone(),
        session_id: signal.session_id.clone(),
    })
}

/// Scales a session by its maximum so every entry lies in `[0, 1]`.
pub fn normalize_session(rvs: &RvsMatrix) -> Result<RvsMatrix> {
    let max = rvs.values.max();
    if !(max > 0.0) {
        return Err(Error::DegenerateSession);
    }
    Ok(rvs.with_values(rvs.values.map(|v| (v / max).clamp(0.0, 1.0))))
}

/// Writes a binary 16-bit PGM with the highest bin on the top row.
pub fn export_pgm(rvs: &RvsMatrix, path: &Path) -> Result<()> {
    let grid = &rvs.values;
    if let Some(v) = grid.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!(
            "PGM export needs values in [0, 1], found {v}"
        )));
    }
    let words: Vec<u16> = (0..grid.rows())
        .rev()
        .flat_map(|r| grid.row(r).iter().map(|&v| (65535.0 * v).round() as u16))
        .collect();
    write_pgm16(path, grid.cols(), grid.rows(), &words)
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, words: &[u16]) -> Result<()> {
    if words.len() != width * height {
        return Err(Error::Shape(format!(
            "{width}x{height} image needs {} pixels, got {}",
            width * height,
            words.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(words.len() * 2);
    for w in words {
        bytes.extend_from_slice(&w.to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct RvsHeader {
    m: usize,
    cols: usize,
    #[serde(serialize_with = "compact_number")]
    f1: f64,
    #[serde(serialize_with = "compact_number")]
    f2: f64,
    #[serde(serialize_with = "compact_number")]
    fs: f64,
    participant_id: String,
    session_id: String,
}

/// Integral values print without a trailing `.0`.
fn compact_number<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

/// Serializes to the `.rvs` layout: one JSON header line, then `cols * m`
/// little-endian f64 values, row-major with rows in ascending bin order.
pub fn encode_rvs(rvs: &RvsMatrix) -> Result<Vec<u8>> {
    let header = RvsHeader {
        m: rvs.bins(),
        cols: rvs.cols(),
        f1: rvs.config.band.f1_hz,
        f2: rvs.config.band.f2_hz,
        fs: rvs.fs_hz,
        participant_id: rvs.participant_id.clone(),
        session_id: rvs.session_id.clone(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(rvs.values.as_slice().len() * 8);
    for v in rvs.values.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_rvs(rvs: &RvsMatrix, path: &Path) -> Result<()> {
    let bytes = encode_rvs(rvs)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Parses a `.rvs` file. Window and stride are not stored and come back as
/// the defaults; the first column is taken to end at `window_s`.
pub fn read_rvs(path: &Path) -> Result<RvsMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rvs(&bytes).map_err(|reason| Error::format(path, reason))
}

fn decode_rvs(bytes: &[u8]) -> std::result::Result<RvsMatrix, String> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header: RvsHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| format!("header: {e}"))?;
    let body = &bytes[newline + 1..];
    let expected = header.m * header.cols * 8;
    if body.len() != expected {
        return Err(format!(
            "expected {expected} data bytes for {}x{}, found {}",
            header.m,
            header.cols,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let config = SpectrogramConfig {
        band: BandConfig::new(header.f1, header.f2).map_err(|e| e.to_string())?,
        m: header.m,
        ..SpectrogramConfig::default()
    };
    Ok(RvsMatrix {
        values: Grid::from_vec(header.m, header.cols, data).map_err(|e| e.to_string())?,
        config,
        fs_hz: header.fs,
        t_end_first_s: config.window_s,
        participant_id: header.participant_id,
        session_id: header.session_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;
    use crate::signal::bandpass;
    use std::f64::consts::TAU;

    fn cfg() -> SpectrogramConfig {
        SpectrogramConfig::default()
    }

    fn sig(samples: Vec<f64>) -> BreathingSignal {
        BreathingSignal::new(samples, 8.0, "P01", "S1").unwrap()
    }

    #[test]
    fn bin_mapping_examples() {
        assert_eq!(freq_to_bin(0.1, &cfg()).unwrap(), 1);
        assert_eq!(freq_to_bin(0.85, &cfg()).unwrap(), 120);
        // 1 + round(0.2 / 0.75 * 119) = 1 + round(31.733)
        assert_eq!(freq_to_bin(0.3, &cfg()).unwrap(), 33);
        assert!(freq_to_bin(0.05, &cfg()).is_err());
        assert!(freq_to_bin(0.9, &cfg()).is_err());

        assert!((bin_to_freq(1, &cfg()).unwrap() - 0.1).abs() < 1e-15);
        assert!((bin_to_freq(120, &cfg()).unwrap() - 0.85).abs() < 1e-15);
        let f33 = 0.1 + 32.0 / 119.0 * 0.75;
        assert!((bin_to_freq(33, &cfg()).unwrap() - f33).abs() < 1e-15);
        assert!((f33 - 0.30168).abs() < 1e-5);
        assert!(bin_to_freq(0, &cfg()).is_err());
        assert!(bin_to_freq(121, &cfg()).is_err());
    }

    #[test]
    fn bin_round_trip() {
        for y in 1..=120 {
            let f = bin_to_freq(y, &cfg()).unwrap();
            assert_eq!(freq_to_bin(f, &cfg()).unwrap(), y);
        }
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let rvs = compute_rvs(&sig(vec![0.0; 800]), &cfg()).unwrap();
        assert_eq!((rvs.bins(), rvs.cols()), (120, 81));
        assert!(rvs.values.as_slice().iter().all(|&v| v == 0.0));
        assert!(matches!(normalize_session(&rvs), Err(Error::DegenerateSession)));
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let x: Vec<f64> = (0..800).map(|i| (TAU * 0.3 * i as f64 / 8.0 + 0.3).sin()).collect();
        let s = bandpass(&sig(x), &BandConfig::default()).unwrap();
        let rvs = compute_rvs(&s, &cfg()).unwrap();
        let expected_row = freq_to_bin(0.3, &cfg()).unwrap() - 1;
        for c in 0..rvs.cols() {
            let column: Vec<f64> = (0..rvs.bins()).map(|r| rvs.values.get(r, c)).collect();
            let argmax = column
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, expected_row, "column {c}");
        }
    }

    /// (1/N) |sum_t w[t] e^{-j 2 pi (f/fs) t}|^2, evaluated directly.
    fn periodogram(w: &[f64], f: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in w.iter().enumerate() {
            let phase = TAU * f / fs * t as f64;
            re += v * phase.cos();
            im -= v * phase.sin();
        }
        (re * re + im * im) / w.len() as f64
    }

    #[test]
    fn matches_periodogram_identity() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(21);
        let raw: Vec<f64> = (0..320).map(|_| rng.normal()).collect();
        let s = bandpass(&sig(raw), &BandConfig::default()).unwrap();
        let rvs = compute_rvs(&s, &cfg()).unwrap();
        let windows = extract_windows(&s, 20, 1).unwrap();
        for (c, w) in windows.iter().enumerate() {
            for y in 1..=120 {
                let f = bin_to_freq(y, &cfg()).unwrap();
                let oracle = periodogram(&w.values, f, 8.0);
                let got = rvs.values.get(y - 1, c);
                assert!((got - oracle).abs() <= 1e-9 * oracle.abs(), "{got} vs {oracle}");
            }
        }
    }

    #[test]
    fn time_shift_moves_columns() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        let x: Vec<f64> = (0..480).map(|_| rng.normal()).collect();
        let a = compute_rvs(&sig(x.clone()), &cfg()).unwrap();
        let b = compute_rvs(&sig(x[8..].to_vec()), &cfg()).unwrap();
        assert_eq!(b.cols() + 1, a.cols());
        for c in 0..b.cols() {
            for r in 0..120 {
                assert_eq!(b.values.get(r, c), a.values.get(r, c + 1));
            }
        }
    }

    #[test]
    fn normalize_scales_to_unit_max() {
        let base = compute_rvs(&sig(vec![0.0; 160]), &cfg()).unwrap();
        let grid = Grid::from_vec(2, 2, vec![1.0, 4.0, 2.0, 0.5]).unwrap();
        let rvs = base.with_values(grid);
        let n = normalize_session(&rvs).unwrap();
        assert_eq!(n.values.max(), 1.0);
        assert_eq!(n.values.as_slice(), &[0.25, 1.0, 0.5, 0.125]);
        assert_eq!(normalize_session(&n).unwrap(), n);
    }

    #[test]
    fn pgm_quantization_and_flip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let base = compute_rvs(&sig(vec![0.0; 160]), &cfg()).unwrap();
        // Displayed top-down the image reads {{0, 1}, {0.5, 0.25}}; in storage
        // order (ascending bin) the top row is the last one.
        let grid = Grid::from_vec(2, 2, vec![0.5, 0.25, 0.0, 1.0]).unwrap();
        export_pgm(&base.with_values(grid), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let words: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(words, vec![0, 65535, 32768, 16384]);
    }

    #[test]
    fn pgm_full_size_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("full.pgm");
        let mut rng = Xoshiro256StarStar::seed_from_u64(4);
        let x: Vec<f64> = (0..800).map(|_| rng.normal()).collect();
        let s = bandpass(&sig(x), &BandConfig::default()).unwrap();
        let rvs = normalize_session(&compute_rvs(&s, &cfg()).unwrap()).unwrap();
        export_pgm(&rvs, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n81 120\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len() - header.len(), 19440);

        let raw = compute_rvs(&s, &cfg()).unwrap();
        if raw.values.max() > 1.0 {
            assert!(export_pgm(&raw, &path).is_err());
        }
    }

    #[test]
    fn rvs_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.rvs");
        let mut rng = Xoshiro256StarStar::seed_from_u64(8);
        let x: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let rvs = compute_rvs(&sig(x), &cfg()).unwrap();
        write_rvs(&rvs, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap();
        assert_eq!(
            std::str::from_utf8(first_line).unwrap(),
            r#"{"m":120,"cols":31,"f1":0.1,"f2":0.85,"fs":8,"participant_id":"P01","session_id":"S1"}"#
        );
        assert_eq!(read_rvs(&path).unwrap(), rvs);

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_rvs(&path), Err(Error::Format { .. })));
    }
}
