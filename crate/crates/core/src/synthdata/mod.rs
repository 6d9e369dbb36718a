//! Synthetic paired-compression data: pristine and spliced images, the
//! block-DCT quantizer that produces the high/low quality members, mask
//! utilities and the on-disk dataset layout.

mod dataset;
mod dct;
mod generate;
mod image;
mod mask;

pub use dataset::{
    generate_dataset, generate_sample, make_paired_dataset, Dataset, DatasetConfig,
    DatasetManifest, Label, ManifestEntry, PairedSample, Splits, MANIFEST_FILE,
};
pub use dct::{
    compress, forward_dct, inverse_dct, quantization_table, zeroed_ac_count, CompressionLevel,
    QuantTable, BASE_LUMINANCE_TABLE,
};
pub use generate::{
    generate_fake_pair, generate_fake_pair_styled, generate_real_image, mix_seed, ForgeryStyle,
    MAX_MASK_FRACTION, MIN_IMAGE_SIZE, MIN_MASK_FRACTION,
};
pub use image::{GroundTruthMask, Image, BLOCK_SIZE};
pub use mask::{
    binarize_mask, crop_enlarged, crop_enlarged_mask, crop_rect, BBox, CropRect, CROP_FACTOR,
    MASK_THRESHOLD,
};
