//! CT slices, HU windowing, preprocessing, augmentation and synthetic data.

mod annotation;
mod augment;
mod clip;
mod image;
mod pipeline;
pub mod synth;
mod volume;
mod window;

pub use annotation::{read_annotations, write_annotations, BoxAnnotation, Organ};
pub use augment::{apply_augment, augment, AugmentConfig, AugmentParams, Sample};
pub use clip::{clip_black_borders, clip_with_threshold, ClipResult, CropRect, AIR_THRESHOLD_HU};
pub use image::Image;
pub use pipeline::{fit_to_canvas, preprocess_volume, Preprocessed};
pub use synth::{render_background, synth_dataset, synth_generate, SynthCase, SynthConfig, SynthLesion};
pub use volume::{
    read_volume, resample_to_spacing, write_volume, HuVolume, HU_MAX, HU_MIN, TARGET_SPACING_MM,
    VOLUME_META_FILE, VOLUME_VOXELS_FILE,
};
pub use window::{
    build_multi_intensity, default_windows, hu_window_normalize, windows_for_count, windows_with_convention,
    MultiIntensityStack, WindowConvention, WindowSpec, DEFAULT_WINDOW_PAIRS, FULL_RANGE_PAIR,
};
