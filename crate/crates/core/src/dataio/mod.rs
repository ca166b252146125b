//! Sample schema, input encodings, and the TilePack dataset container.

mod encode;
mod sample;
mod tilepack;

pub use encode::{
    normalize, one_hot_masks, seasonality_features, valid_pixel_mask, FieldStats, NormStats,
    YEAR_DAYS,
};
pub use sample::{
    MaskClass, SceneSample, MASK_CHANNELS, PAST_FRAMES, POLARIZATIONS, S1_CHANNELS, TIMESTAMPS,
};
pub use tilepack::{
    load_tilepack, read_manifest, save_tilepack, BlobEntry, Split, TilePack, TilePackManifest,
    MANIFEST_FILE, TILEPACK_VERSION,
};
