//! Training data: CIFAR-10 ingestion, the transformation tasks, warping,
//! dataset files and real-world patch pairs.

pub mod cifar;
pub mod dataset;
pub mod homography;
pub mod realworld;
pub mod synthetic;
pub mod warp;

pub use cifar::{load_cifar, to_gray, GrayImage, RgbImage};
pub use dataset::{generate_dataset, generate_samples, Dataset, Sample, Split};
pub use homography::{build_homography, projective_params, Homography, TaskKind, TaskSpec};
pub use realworld::{allocate_counts, ingest_patch_pairs, patch_homography, PatchPair};
pub use warp::{center_crop, warp_image, PATCH_DIM, PATCH_SIDE};
