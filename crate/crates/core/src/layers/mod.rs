//! Forward and backward passes for every layer type. Each layer has a
//! batched form (one sample per row) used by the models and a single-vector
//! form for direct use.

pub mod bilinear;
pub mod cau;
pub mod competition;
pub mod dense;
pub mod loss;
pub mod pooling;

pub use bilinear::{
    bilinear_backward_rankone, bilinear_forward_rankone, concat_backward, concat_forward, BilinearRankOneParams,
};
pub use cau::{
    cau_backward_full, cau_backward_rankone, cau_forward_full, cau_forward_rankone, CauFullRankParams, CauRankOneParams,
};
pub use competition::{softmin_backward, softmin_forward, wta};
pub use dense::{linear_backward, linear_forward, prelu_backward, prelu_forward, PReluParams};
pub use loss::mse_loss;
pub use pooling::{l2norm_backward, l2norm_forward, sumpool_backward, sumpool_forward};
