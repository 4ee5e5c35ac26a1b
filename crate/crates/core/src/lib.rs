// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod bessel;
pub mod config;
pub mod error;
pub mod frame;
pub mod instrument;
pub mod linalg;
pub mod mle;
pub mod optics;
pub mod optimize;
pub mod pipeline;
pub mod protocol;
pub mod spot;
