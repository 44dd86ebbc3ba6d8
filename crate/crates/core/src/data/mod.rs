pub mod dataset;
pub mod font;
pub mod image;
pub mod otsu;
pub mod render;
pub mod transform;

pub use dataset::{
    generate_sample, generate_sample_noisy, make_dataset, plate_specs, DatasetConfig, DatasetSummary,
    Manifest, ManifestRecord, TrainingSample, ANGLES,
};
pub use font::{Glyph, GlyphSet, GLYPH_HEIGHT, GLYPH_WIDTH};
pub use image::Image;
pub use otsu::{gray_histogram, otsu_binarize, otsu_threshold, Histogram};
pub use render::{glyph_scale, max_digits, render_plate, CharBox, Layout, PlateSpec, RenderedPlate};
pub use transform::{degrade, downsample_area, rotate, upsample_bilinear, DEGRADE_FACTOR};
