//! Small dense matrix products with a fixed summation order.

/// Row-addressed view of a matrix: row `i` starts at `base[offsets[i]]`.
pub(crate) struct Rows<'a> {
    pub base: &'a [f64],
    pub offsets: &'a [usize],
}

impl<'a> Rows<'a> {
    /// Consecutive rows of a row-major buffer with the given stride.
    pub(crate) fn strided(base: &'a [f64], offsets: &'a mut Vec<usize>, rows: usize, stride: usize) -> Self {
        offsets.clear();
        offsets.extend((0..rows).map(|i| i * stride));
        Self { base, offsets }
    }
}

/// `c = a * b` where `a` has `m = a.offsets.len()` rows of length `k` and `b`
/// has `k` rows of which the first `n` columns are used; `c` is row-major
/// `m x n`. Each output element sums its `k` products in ascending order
/// starting from zero.
///
/// The microkernel keeps an `MR x NR` block in registers; rows of `b` are read
/// `NR` at a time, so every `b` row must be readable up to `n` rounded up to a
/// multiple of `NR` (the extra columns are discarded).
pub(crate) fn gemm_rows<const MR: usize, const NR: usize>(k: usize, a: &Rows, b: &Rows, n: usize, c: &mut [f64]) {
    let m = a.offsets.len();
    assert_eq!(b.offsets.len(), k, "inner dimensions differ");
    assert_eq!(c.len(), m * n, "output shape");
    if m == 0 || n == 0 {
        return;
    }
    let nb = n.div_ceil(NR);
    assert!(a.offsets.iter().all(|&o| o + k <= a.base.len()), "lhs row out of range");
    assert!(
        b.offsets.iter().all(|&o| o + nb * NR <= b.base.len()),
        "rhs row out of range"
    );

    for ib in 0..m.div_ceil(MR) {
        let rows = (m - ib * MR).min(MR);
        // Rows past the end repeat the last row; their results are dropped.
        let a_rows: [&[f64]; MR] = std::array::from_fn(|r| {
            let i = (ib * MR + r).min(m - 1);
            &a.base[a.offsets[i]..a.offsets[i] + k]
        });
        for jb in 0..nb {
            let cols = (n - jb * NR).min(NR);
            let mut acc = [[0.0f64; NR]; MR];
            for (kk, &off) in b.offsets.iter().enumerate() {
                let bv: &[f64; NR] = b.base[off + jb * NR..off + (jb + 1) * NR]
                    .try_into()
                    .expect("NR block");
                for r in 0..MR {
                    let av = a_rows[r][kk];
                    for j in 0..NR {
                        acc[r][j] = av.mul_add(bv[j], acc[r][j]);
                    }
                }
            }
            for (r, &acc_row) in acc.iter().enumerate().take(rows) {
                let at = (ib * MR + r) * n + jb * NR;
                let staged = acc_row;
                c[at..at + cols].copy_from_slice(&staged[..cols]);
            }
        }
    }
}
