//! Small dense neural-network kernel in 64-bit floats: valid 5x5
//! convolution, 2x2 average pooling, sigmoid, fully connected layers,
//! sum-of-squares loss and plain mini-batch SGD.

mod gemm;
mod network;
mod ops;
mod tensor;

pub use network::{init_weights, sgd_step, Gradients, Layer, LayerGrads, Network, Shape};
pub use ops::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_forward, fc_backward, fc_forward,
    mse_loss, sigmoid, sigmoid_backward, ConvGrads, ConvParams, DenseGrads, DenseParams, KERNEL,
};
pub use tensor::Tensor;
