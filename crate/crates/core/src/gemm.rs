//! Emulated fp32 matrix multiplication from fp16 matrix products, plus
//! reference multiplications and accuracy/operation-count reporting.
//!
//! The emulated modes multiply the two-term splits of the operands: four
//! scaled fp16 products reconstruct the fp32 product almost exactly, and
//! because the smallest term carries an exact 2^-22 relative scale it can be
//! dropped, leaving three fp16 products per fp32 multiply.

use crate::half::{dot_acc32, Half};
use crate::matrix::{frobenius_rel_error, HalfMatrix, MatrixError, MatrixF32, MatrixF64};
use crate::split::{split_matrix, SplitMatrix};
use std::cell::Cell;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Multiplication semantics selector.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum GemmMode {
    /// fp32 arithmetic throughout.
    Exact32,
    /// Promote to f64, multiply, keep f64. The accuracy reference.
    Oracle64,
    /// Encode both operands to fp16 once, then a single fp16 product with
    /// fp32 accumulation.
    Naive16,
    /// All four scaled fp16 products of the operand splits.
    FourTerm,
    /// The four-term scheme with the 2^-22-scaled term dropped.
    ThreeTerm,
}

impl GemmMode {
    pub const ALL: [GemmMode; 5] = [
        GemmMode::Exact32,
        GemmMode::Oracle64,
        GemmMode::Naive16,
        GemmMode::FourTerm,
        GemmMode::ThreeTerm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GemmMode::Exact32 => "exact32",
            GemmMode::Oracle64 => "oracle64",
            GemmMode::Naive16 => "naive16",
            GemmMode::FourTerm => "fourterm",
            GemmMode::ThreeTerm => "threeterm",
        }
    }

    /// True for the modes that multiply split operands.
    pub fn is_emulated(self) -> bool {
        matches!(self, GemmMode::FourTerm | GemmMode::ThreeTerm)
    }

    /// fp16 matrix products one multiplication in this mode consumes.
    pub fn half_products(self) -> u64 {
        match self {
            GemmMode::Exact32 | GemmMode::Oracle64 => 0,
            GemmMode::Naive16 => 1,
            GemmMode::FourTerm => 4,
            GemmMode::ThreeTerm => 3,
        }
    }
}

impl fmt::Display for GemmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum GemmError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("mode {mode} is not valid for {op}")]
    UnsupportedMode { mode: GemmMode, op: &'static str },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown gemm mode \"{0}\"; valid modes: exact32, oracle64, naive16, fourterm, threeterm")]
pub struct UnknownMode(pub String);

impl FromStr for GemmMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, UnknownMode> {
        GemmMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

/// Per-report multiplication context: owns the fp16-product tally so
/// concurrent reports never interfere.
#[derive(Debug, Default)]
pub struct GemmEngine {
    half_products: Cell<u64>,
}

impl GemmEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn half_product_count(&self) -> u64 {
        self.half_products.get()
    }

    pub fn reset_half_product_count(&self) {
        self.half_products.set(0);
    }

    /// One fp16 matrix product with fp32 accumulation.
    ///
    /// Each output entry is the strict left-to-right fp32 sum of exact
    /// pairwise products, exactly [`dot_acc32`] of the row/column pair.
    /// Increments the engine's fp16-product tally by one.
    pub fn half_gemm(&self, x: &HalfMatrix, y: &HalfMatrix) -> Result<MatrixF32, MatrixError> {
        x.check_mul(y, "half_gemm")?;
        let (rows, inner, cols) = (x.rows(), x.cols(), y.cols());
        let mut data = vec![0.0f32; rows * cols];
        let mut col_buf = vec![Half::ZERO; inner];
        for j in 0..cols {
            for k in 0..inner {
                col_buf[k] = y[(k, j)];
            }
            for i in 0..rows {
                data[i * cols + j] =
                    dot_acc32(x.row(i), &col_buf).expect("dimensions already checked");
            }
        }
        self.half_products.set(self.half_products.get() + 1);
        Ok(MatrixF32::from_vec(rows, cols, data).expect("sized above"))
    }

    fn scaled_half_gemm(
        &self,
        x: &HalfMatrix,
        y: &HalfMatrix,
        scale: f32,
    ) -> Result<MatrixF32, MatrixError> {
        let mut m = self.half_gemm(x, y)?;
        for v in m.data_mut() {
            *v *= scale;
        }
        Ok(m)
    }

    /// Emulated fp32 product of two splits.
    ///
    /// FourTerm evaluates all four scaled fp16 products and combines them
    /// smallest-magnitude first in the fixed order T22 + T21 + T12 + T11;
    /// ThreeTerm is the same chain with T22 omitted. Each term is scaled by
    /// the fp32 product of its scales (exact: both are powers of two) before
    /// summation. Splits may be reused across multiplications.
    pub fn emu_gemm(
        &self,
        sa: &SplitMatrix,
        sb: &SplitMatrix,
        mode: GemmMode,
    ) -> Result<MatrixF32, GemmError> {
        if !mode.is_emulated() {
            return Err(GemmError::UnsupportedMode {
                mode,
                op: "emu_gemm",
            });
        }
        let t_small = match mode {
            GemmMode::FourTerm => {
                let t22 = self.dropped_term(sa, sb)?;
                let t21 = self.scaled_half_gemm(sa.m2(), sb.m1(), sa.a2() * sb.a1())?;
                add_into(t22, &t21)
            }
            _ => self.scaled_half_gemm(sa.m2(), sb.m1(), sa.a2() * sb.a1())?,
        };
        let t12 = self.scaled_half_gemm(sa.m1(), sb.m2(), sa.a1() * sb.a2())?;
        let t11 = self.scaled_half_gemm(sa.m1(), sb.m1(), sa.a1() * sb.a1())?;
        Ok(add_into(add_into(t_small, &t12), &t11))
    }

    /// The term FourTerm keeps and ThreeTerm drops: (a2*b2) * (M2A * M2B).
    ///
    /// Its scale factor equals 2^-22 * a1 * b1 exactly.
    pub fn dropped_term(&self, sa: &SplitMatrix, sb: &SplitMatrix) -> Result<MatrixF32, GemmError> {
        Ok(self.scaled_half_gemm(sa.m2(), sb.m2(), sa.a2() * sb.a2())?)
    }

    /// Reference multiplication in one of the non-split modes.
    ///
    /// Exact32 and Naive16 results are exactly representable in the f64
    /// return; Naive16 counts one fp16 product on this engine.
    pub fn ref_gemm(
        &self,
        a: &MatrixF32,
        b: &MatrixF32,
        mode: GemmMode,
    ) -> Result<MatrixF64, GemmError> {
        a.check_mul(b, "ref_gemm")?;
        match mode {
            GemmMode::Exact32 => Ok(gemm_exact32(a, b)?.to_f64()),
            GemmMode::Oracle64 => Ok(gemm_oracle64(a, b)?),
            GemmMode::Naive16 => {
                let xa = a.map(Half::encode);
                let xb = b.map(Half::encode);
                Ok(self.half_gemm(&xa, &xb)?.to_f64())
            }
            _ => Err(GemmError::UnsupportedMode {
                mode,
                op: "ref_gemm",
            }),
        }
    }
}

fn add_into(mut acc: MatrixF32, rhs: &MatrixF32) -> MatrixF32 {
    for (a, &b) in acc.data_mut().iter_mut().zip(rhs.data()) {
        *a += b;
    }
    acc
}

/// Plain fp32 product, left-to-right accumulation per entry.
pub fn gemm_exact32(a: &MatrixF32, b: &MatrixF32) -> Result<MatrixF32, MatrixError> {
    a.check_mul(b, "gemm_exact32")?;
    let (rows, inner, cols) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0f32; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0f32;
            for k in 0..inner {
                acc += a[(i, k)] * b[(k, j)];
            }
            data[i * cols + j] = acc;
        }
    }
    Ok(MatrixF32::from_vec(rows, cols, data).expect("sized above"))
}

/// f64 product of the promoted operands, left-to-right accumulation.
pub fn gemm_oracle64(a: &MatrixF32, b: &MatrixF32) -> Result<MatrixF64, MatrixError> {
    a.check_mul(b, "gemm_oracle64")?;
    let (rows, inner, cols) = (a.rows(), a.cols(), b.cols());
    let mut data = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0f64;
            for k in 0..inner {
                acc += a[(i, k)] as f64 * b[(k, j)] as f64;
            }
            data[i * cols + j] = acc;
        }
    }
    Ok(MatrixF64::from_vec(rows, cols, data).expect("sized above"))
}

/// Multiply two fp32 matrices under any mode, returning an fp32 result.
///
/// Emulated modes split both operands internally; Oracle64 rounds its f64
/// result back to fp32.
pub fn gemm_f32(a: &MatrixF32, b: &MatrixF32, mode: GemmMode) -> Result<MatrixF32, GemmError> {
    match mode {
        GemmMode::Exact32 => Ok(gemm_exact32(a, b)?),
        GemmMode::Oracle64 => Ok(gemm_oracle64(a, b)?.to_f32()),
        GemmMode::Naive16 => {
            let engine = GemmEngine::new();
            let xa = a.map(Half::encode);
            let xb = b.map(Half::encode);
            Ok(engine.half_gemm(&xa, &xb)?)
        }
        GemmMode::FourTerm | GemmMode::ThreeTerm => {
            let engine = GemmEngine::new();
            let sa = split_matrix(a)?;
            let sb = split_matrix(b)?;
            engine.emu_gemm(&sa, &sb, mode)
        }
    }
}

/// Outcome of one end-to-end multiplication under a given mode.
#[derive(Clone, Debug, PartialEq)]
pub struct GemmReport {
    pub mode: GemmMode,
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    /// fp16 matrix products consumed: 0 for Exact32/Oracle64, 1 for
    /// Naive16, 4 for FourTerm, 3 for ThreeTerm.
    pub half_product_count: u64,
    /// Frobenius-norm relative error against the f64 oracle, in f64.
    pub frobenius_rel_error: f64,
}

/// Run the requested mode end to end (splitting internally for the emulated
/// modes), tally its fp16 products on a fresh counter, and measure the
/// result against the f64 oracle.
pub fn gemm_report(a: &MatrixF32, b: &MatrixF32, mode: GemmMode) -> Result<GemmReport, GemmError> {
    a.check_mul(b, "gemm_report")?;
    let oracle = gemm_oracle64(a, b)?;

    let engine = GemmEngine::new();
    engine.reset_half_product_count();
    let result: MatrixF64 = match mode {
        GemmMode::Exact32 | GemmMode::Oracle64 | GemmMode::Naive16 => {
            engine.ref_gemm(a, b, mode)?
        }
        GemmMode::FourTerm | GemmMode::ThreeTerm => {
            let sa = split_matrix(a)?;
            let sb = split_matrix(b)?;
            engine.emu_gemm(&sa, &sb, mode)?.to_f64()
        }
    };
    let half_product_count = engine.half_product_count();

    Ok(GemmReport {
        mode,
        rows: a.rows(),
        inner: a.cols(),
        cols: b.cols(),
        half_product_count,
        frobenius_rel_error: frobenius_rel_error(&result, &oracle)?,
    })
}
