//! A small neural-network toolkit: dense, convolution, pooling, dropout and
//! softmax cross-entropy with hand-written backpropagation.

pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use layers::{
    conv2d_forward, cross_entropy_loss, dense_forward, dropout, maxpool_2x2, relu, softmax,
    Activation, ConvLayer, DenseLayer, Mode, Padding,
};
pub use network::{argmax, Gradients, Layer, Network, Shape, Trace};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use tensor::Tensor;
