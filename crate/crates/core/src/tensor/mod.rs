//! Matrix storage, taped differentiable operations, parameter bundles and Adam.

mod adam;
mod matrix;
mod params;
mod tape;

#[doc(hidden)]
pub mod testing;

use std::fmt;
use std::str::FromStr;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{softmax_rows, Matrix};
pub use params::{BoundParameters, Parameters};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Pointwise nonlinearity for the feature extractor and feed-forward blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Valid (unpadded) strided 1-D convolution over the time axis followed by
/// `act`.
///
/// `x` is `time × in_channels`; `kernel` is `(width · in_channels) ×
/// out_channels` with rows ordered tap-major; `bias` is `1 × out_channels`.
/// The output has `⌊(time − width) / stride⌋ + 1` rows.
pub fn conv1d_strided(
    tape: &mut Tape,
    x: Var,
    kernel: Var,
    bias: Var,
    width: usize,
    stride: usize,
    act: Activation,
) -> Result<Var> {
    let unfolded = tape.unfold(x, width, stride)?;
    let pre = tape.linear(unfolded, kernel, bias)?;
    Ok(tape.activation(pre, act))
}

/// Output length of [`conv1d_strided`].
pub fn conv_output_len(len: usize, width: usize, stride: usize) -> Option<usize> {
    (len >= width && width > 0 && stride > 0).then(|| (len - width) / stride + 1)
}
