//! Synthetic data: glyph rendering from fonts, augmentation, text-line
//! composition with ground-truth boxes, and crop/line datasets.

mod augment;
mod corpus;
pub mod builtin;
mod dataset;
mod font;
mod line;
mod words;

pub use augment::{augment, AugmentConfig};
pub use corpus::{make_corpus, CorpusConfig};
pub use builtin::{StrokeStyle, BUILTIN_FONTS};
pub use dataset::{
    load_crop_dataset, load_line_dataset, make_crop_dataset, make_crop_dataset_with,
    save_crop_dataset, save_line_dataset, CropDataset, LineSample, RenderConfig,
};
pub(crate) use dataset::write_json;
pub use font::{exemplar_crop, FontSource, FontSpec, RenderedChar};
pub use line::{compose_line, random_text, ComposedLine, LineSpec};
pub use words::{make_joint_dataset, word_augment, WordConfig, COMMON_WORDS};
