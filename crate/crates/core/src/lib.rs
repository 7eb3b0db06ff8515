//! Speech-driven 3D facial motion synthesis with a transformer
//! encoder-decoder.
//!
//! The decoder predicts vertex trajectories autoregressively. Its causal
//! self-attention is biased by a period-quantized temporal bias and fed a
//! periodic positional encoding, and its cross-modal attention is restricted
//! by an alignment bias to the audio frames belonging to each motion frame.

pub mod attention;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod positional;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use config::{ModelConfig, OutputSpace, PeMode};
pub use decoder::MotionSequence;
pub use encoder::{AudioInput, EncodedAudio};
pub use error::{Error, Result};
pub use model::FaceFormer;
pub use tensor::Matrix;
pub use training::{train, TrainOptions, TrainingSample};
