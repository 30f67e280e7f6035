//! Error-free transformations for the spectrogram sums, which cancel heavily
//! where the PSD is small next to `R(0)`.

/// Dot product accumulated as if in twice the working precision
/// (TwoProduct + TwoSum with a running correction term).
pub(crate) fn dot2(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut correction) = (0.0f64, 0.0f64);
    for (a, b) in pairs {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let t = sum + p;
        let z = t - sum;
        let s_err = (sum - (t - z)) + (p - z);
        sum = t;
        correction += s_err + p_err;
    }
    sum + correction
}

/// `cos(2 pi k r)` with the product `k r` reduced to `[-1/2, 1/2]` cycles
/// without rounding error, so large `k` loses no phase accuracy.
pub(crate) fn cos_cycles(k: usize, r: f64) -> f64 {
    let kf = k as f64;
    let p = kf * r;
    let p_err = kf.mul_add(r, -p);
    let frac = (p - p.round()) + p_err;
    (std::f64::consts::TAU * frac).cos()
}
