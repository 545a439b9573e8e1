//! Data plumbing: track schema I/O, box rasterization, image loading and
//! augmentation, and the deterministic synthetic corpus generator.

mod images;
mod preprocess;
mod raster;
mod synth;
mod tracks;

pub use images::{load_image, save_gray_png, save_rgb_png};
pub use preprocess::{resize_bilinear, scale_box, translate_augment, resize_with_box};
pub use raster::render_box_mask;
pub use synth::{generate_corpus, write_corpus, Motion, SynthConfig, SynthCorpus, TrackMeta};
pub use tracks::{load_queries, load_tracks, load_truth, save_tracks, Track, TrackSet};
