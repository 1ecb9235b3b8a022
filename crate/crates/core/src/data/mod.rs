//! Image I/O, range scaling, affine augmentation, corpus expansion and
//! shuffled batching.

mod augment;
mod dataset;
mod image;

pub use augment::{apply_params, augment, AugmentParams, AugmentSpec, FillMode, Interpolation};
pub use dataset::{
    batch_indices, batches, expand_dataset, item_rng, synthetic_textures, Dataset, Provenance,
};
pub use image::{
    from_model_range, load_image, load_image_resized, save_image, to_model_range, ImageU8,
};
