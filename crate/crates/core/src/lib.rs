//! Character-retrieval OCR.
//!
//! A line image is decoded in four steps: a localizer finds character (or
//! word) boxes, a small convolutional encoder embeds each crop, every
//! embedding takes the label of its nearest exemplar in an offline index of
//! clean font renders, and the boxes are reused to order the labels and
//! place spaces. The encoder is trained with a supervised contrastive loss
//! on m-per-class batches with interspersed hard negatives.
//!
//! * [`synth`] renders glyphs and lines, augments crops, builds datasets
//! * [`encoder`] is the embedding network with exact gradients
//! * [`contrastive`] holds the loss, sampler, mining, optimizer and trainer
//! * [`index`] is the exact inner-product exemplar index
//! * [`localize`] finds character and word boxes
//! * [`decode`] turns a line image into text
//! * [`eval`] measures CER, throughput, sample efficiency and ablations

pub mod error;
pub mod eval;
pub mod index;
pub mod localize;
pub mod cli;
pub mod contrastive;
pub mod decode;
pub mod encoder;
pub mod rng;
pub mod synth;
pub mod types;

mod imageio;

pub use error::{Error, Result};
pub use types::{crop, iou, normalize_crop, BBox, CropSource, GlyphCatalog, GrayImage, LabeledCrop, TextDirection};

/// Side of the square crops the encoder consumes.
pub const CROP_SIZE: usize = 32;
/// Background margin kept around a normalized crop.
pub const CROP_MARGIN: usize = 2;
