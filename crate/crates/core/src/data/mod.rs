mod batch;
mod labels;
mod normalize;
mod patch;
mod pca;
mod prep;
mod raster;
mod synth;

pub use batch::{epoch_seed, make_batches};
pub use labels::{max_class, read_labels, validate_labels, write_labels, LabeledPixel};
pub use normalize::{normalize_bands, BandRanges};
pub use patch::{check_patch_size, extract_patch, extract_patch_into, mirror_index};
pub use pca::{apply_pca, fit_pca, PcaModel};
pub use prep::{one_hot, PatchBatch, PreparedScene, Preprocessor};
pub use raster::{data_path_for, Raster, RasterHeader, RasterScene};
pub use synth::{
    generate_synthetic_scene, SynthSpec, SyntheticScene, HEIGHT_NOISE, SPECTRAL_NOISE,
};
