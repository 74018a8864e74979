//! Mixed-precision numerics: fp32 matrix multiplication emulated as scaled
//! sums of fp16 matrix products, with reference oracles, accuracy and
//! operation-count reporting, and SGD training engines (synchronous,
//! lock-free asynchronous, and parameter-server staleness simulation) that
//! can drive a small dense network under any multiplication mode.

pub mod fmtnum;
pub mod gemm;
pub mod half;
pub mod matrix;
pub mod net;
pub mod sgd;
pub mod split;
pub mod spmx;

pub use gemm::{gemm_report, GemmEngine, GemmMode, GemmReport};
pub use half::Half;
pub use matrix::{HalfMatrix, Matrix, MatrixF32, MatrixF64};
pub use net::{make_blobs, Batch, DenseNet, NetObjective};
pub use sgd::{
    make_least_squares, sgd_hogwild, sgd_param_server, sgd_sync, Objective, ParamVector,
    TrainConfig, TrainTrace,
};
pub use split::{reconstruct, split_error, split_matrix, SplitMatrix};
