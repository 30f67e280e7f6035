//! Sliding-crop augmentation of a session spectrogram into square patches,
//! and the bicubic resize applied at network input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::labeling::StressLabel;
use crate::spectrogram::{normalize_session, RvsMatrix};

/// How values are scaled to `[0, 1]` before cropping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the session-wide maximum.
    #[default]
    Session,
    /// Divide each patch by its own maximum.
    Patch,
}

/// An `m x m` crop of a session spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramPatch {
    pub values: Grid,
    /// Zero-based index of the first source column.
    pub origin_col: usize,
    pub participant_id: String,
    pub session_id: String,
    pub label: Option<StressLabel>,
}

/// Extracts every `m`-column window of `rvs` with a one-column step,
/// `cols - m + 1` patches in ascending order.
pub fn sliding_crop(rvs: &RvsMatrix) -> Result<Vec<SpectrogramPatch>> {
    let m = rvs.bins();
    let cols = rvs.cols();
    if cols < m {
        return Err(Error::SessionTooShort { cols, m });
    }
    Ok((0..=cols - m)
        .map(|origin_col| SpectrogramPatch {
            values: rvs.values.column_slice(origin_col, m),
            origin_col,
            participant_id: rvs.participant_id.clone(),
            session_id: rvs.session_id.clone(),
            label: None,
        })
        .collect())
}

/// Normalizes then crops, following the chosen normalization policy.
pub fn augment_session(rvs: &RvsMatrix, normalization: Normalization) -> Result<Vec<SpectrogramPatch>> {
    match normalization {
        Normalization::Session => sliding_crop(&normalize_session(rvs)?),
        Normalization::Patch => sliding_crop(rvs)?
            .into_iter()
            .map(|mut p| {
                let max = p.values.max();
                if !(max > 0.0) {
                    return Err(Error::DegenerateSession);
                }
                p.values = p.values.map(|v| (v / max).clamp(0.0, 1.0));
                Ok(p)
            })
            .collect(),
    }
}

const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate (pixel-center aligned).
fn taps(dst: usize, src_len: usize, dst_len: usize) -> [(usize, f64); 4] {
    let scale = src_len as f64 / dst_len as f64;
    let src = (dst as f64 + 0.5) * scale - 0.5;
    let base = src.floor();
    let t = src - base;
    let clamp = |i: f64| i.clamp(0.0, (src_len - 1) as f64) as usize;
    [
        (clamp(base - 1.0), cubic_weight(t + 1.0)),
        (clamp(base), cubic_weight(t)),
        (clamp(base + 1.0), cubic_weight(1.0 - t)),
        (clamp(base + 2.0), cubic_weight(2.0 - t)),
    ]
}

/// Bicubic resize of a square image to `side x side`, clipped to `[0, 1]`.
pub fn resize_bicubic(src: &Grid, side: usize) -> Grid {
    assert!(side >= 2, "target side must be at least 2");
    let row_taps: Vec<_> = (0..side).map(|d| taps(d, src.rows(), side)).collect();
    let col_taps: Vec<_> = (0..side).map(|d| taps(d, src.cols(), side)).collect();
    Grid::from_fn(side, side, |r, c| {
        let mut acc = 0.0;
        for &(sr, wr) in &row_taps[r] {
            let row = src.row(sr);
            let mut inner = 0.0;
            for &(sc, wc) in &col_taps[c] {
                inner += wc * row[sc];
            }
            acc += wr * inner;
        }
        acc.clamp(0.0, 1.0)
    })
}
