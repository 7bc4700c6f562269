//! Lossy compression for event-camera streams.
//!
//! The encoder derives a rate-distortion optimal quad-tree from the two
//! intensity frames that bracket an event volume, thins the binned events
//! inside each tree block with a priority-scaled Poisson disk radius, and
//! entropy-codes what survives (differential coordinates, run-length counts,
//! canonical Huffman). The [`codec`] module owns the bitstream container,
//! [`metrics`] reproduces the evaluation measures, and [`pipeline`] /
//! [`sweep`] drive whole sequences.

pub mod binning;
pub mod codec;
pub mod entropy;
mod error;
pub mod event;
pub mod frame;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod quadtree;
pub mod sampling;
pub mod sweep;
pub mod synth;

pub use binning::{bin_events, BinnedVolume, HistogramSubframe, TQuantMode, TimeGrid};
pub use codec::{
    decode, encode, encode_random_baseline, encode_temporal_only, evaluate_decoded, CompressedVolume, DecodedMetrics,
    DecodeError, DecodedVolume, EncodeReport, EncoderConfig,
};
pub use error::{Error, Result};
pub use event::{load_events, parse_events, slice_volumes, Event, EventVolume, Polarity};
pub use frame::IntensityFrame;
pub use quadtree::{LeafMap, LeafMode, QuadTree, RateModel};
