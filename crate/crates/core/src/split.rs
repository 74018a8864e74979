//! Two-term scaled fp16 decomposition of an fp32 matrix.
//!
//! An fp32 matrix A is represented as a1*M1 + a2*M2 with M1, M2 in binary16
//! and the scales in fp32. M1 holds the leading ~3 decimal digits of each
//! entry, M2 the next ~3; a2 is pinned to 2^-11 * a1 so the second term sits
//! exactly one fp16 significand below the first.

use crate::half::Half;
use crate::matrix::{HalfMatrix, MatrixError, MatrixF32};

/// Target bound for |entries of M1| after scaling. Keeps the leading term
/// well inside fp16's finite range (max 65504) even after rounding up.
const M1_TARGET: f32 = 2048.0;

/// The two-term scaled fp16 decomposition of an fp32 matrix.
///
/// Invariants, established by [`split_matrix`]: `a1` is a positive power of
/// two, `a2 == 2^-11 * a1` exactly, both half matrices share dimensions, and
/// every entry of `m1` decodes to a magnitude of at most 2048.
#[derive(Clone, Debug)]
pub struct SplitMatrix {
    a1: f32,
    m1: HalfMatrix,
    a2: f32,
    m2: HalfMatrix,
}

impl SplitMatrix {
    pub fn a1(&self) -> f32 {
        self.a1
    }

    pub fn a2(&self) -> f32 {
        self.a2
    }

    pub fn m1(&self) -> &HalfMatrix {
        &self.m1
    }

    pub fn m2(&self) -> &HalfMatrix {
        &self.m2
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m1.dims()
    }
}

/// Split an fp32 matrix into its two-term scaled fp16 representation.
///
/// `a1` is the smallest power of two >= 1 with `max|A| / a1 <= 2048`; for a
/// well-scaled matrix (entries in [-1, 1]) this gives a1 = 1 and a2 = 2^-11.
/// The scale never drops below 1: tiny matrices lose nothing that the
/// residual term cannot absorb, and the stated reconstruction bound
/// `|A - reconstruct| <= 2^-22 |A| + a2 * 2^-24` holds elementwise either
/// way. The residual A - a1*decode(M1) is formed in f64 so its fp16 encoding
/// is the only rounding in the second term.
///
/// Returns the offending index if the input has a non-finite entry.
pub fn split_matrix(a: &MatrixF32) -> Result<SplitMatrix, MatrixError> {
    if let Some((row, col)) = a.find_non_finite() {
        return Err(MatrixError::NonFinite { row, col });
    }

    let maxabs = a.max_abs();
    let mut a1 = 1.0f32;
    while maxabs / a1 > M1_TARGET {
        a1 *= 2.0;
    }
    let a2 = a1 * (2.0f32).powi(-11);

    // Division by a power of two is exact; the encode is the only rounding.
    let m1 = a.map(|v| Half::encode(v / a1));

    let a1_64 = a1 as f64;
    let a2_64 = a2 as f64;
    let m2_data: Vec<Half> = a
        .data()
        .iter()
        .zip(m1.data())
        .map(|(&v, h)| {
            let residual = v as f64 - a1_64 * h.decode() as f64;
            Half::encode((residual / a2_64) as f32)
        })
        .collect();
    let m2 = HalfMatrix::from_vec(a.rows(), a.cols(), m2_data).expect("same shape as input");

    Ok(SplitMatrix { a1, m1, a2, m2 })
}

/// Evaluate a1*decode(M1) + a2*decode(M2) elementwise in fp32.
pub fn reconstruct(s: &SplitMatrix) -> MatrixF32 {
    let data: Vec<f32> =
        s.m1.data()
            .iter()
            .zip(s.m2.data())
            .map(|(h1, h2)| s.a1 * h1.decode() + s.a2 * h2.decode())
            .collect();
    MatrixF32::from_vec(s.m1.rows(), s.m1.cols(), data).expect("same shape as split")
}

/// Error metrics of a split against the matrix it claims to represent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitErrorReport {
    /// Largest elementwise |A - reconstruct|.
    pub max_abs: f64,
    /// Largest elementwise |A - reconstruct| / |A| over nonzero entries;
    /// infinite if a zero entry fails to reconstruct to zero.
    pub max_rel: f64,
    /// ||A - reconstruct||_F / ||A||_F, zero for an exactly recovered zero
    /// matrix.
    pub frobenius_rel: f64,
}

/// Measure a split against an fp32 matrix. All metrics are computed in f64.
///
/// The split need not come from `a`; mismatched inputs simply produce large
/// errors.
pub fn split_error(a: &MatrixF32, s: &SplitMatrix) -> Result<SplitErrorReport, MatrixError> {
    let rec = reconstruct(s);
    a.check_same_dims(&rec, "split_error")?;

    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut diff_sq = 0.0f64;
    let mut ref_sq = 0.0f64;
    for (&v, &r) in a.data().iter().zip(rec.data()) {
        let diff = (v as f64 - r as f64).abs();
        max_abs = max_abs.max(diff);
        if v != 0.0 {
            max_rel = max_rel.max(diff / (v as f64).abs());
        } else if diff != 0.0 {
            max_rel = f64::INFINITY;
        }
        diff_sq += diff * diff;
        ref_sq += (v as f64) * (v as f64);
    }
    let frobenius_rel = if ref_sq == 0.0 {
        if diff_sq == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff_sq / ref_sq).sqrt()
    };
    Ok(SplitErrorReport {
        max_abs,
        max_rel,
        frobenius_rel,
    })
}

/// The stated elementwise reconstruction bound: 2^-22 |a| + a2 * 2^-24.
pub fn roundtrip_bound(entry: f64, a2: f32) -> f64 {
    (2.0f64).powi(-22) * entry.abs() + a2 as f64 * (2.0f64).powi(-24)
}
