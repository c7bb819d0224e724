//! Convolutional network: primitives, the multi-tower model, exact
//! backpropagation and the model file format.

mod gemm;
mod io;
mod layers;
mod net;
mod tensor;

pub use io::{decode_model, encode_model, load_model, save_model, MAGIC, VERSION};
pub use layers::{
    conv_valid, lrelu, lrelu_grad, maxpool_2x2, nll_loss, pooled, softmax, ConvLayer, FcLayer, Loss, DEFAULT_SLOPE,
    KERNEL, PROB_FLOOR,
};
pub use net::{
    argmax, Cnn, Geometry, LayerExtents, LayerKind, LayerView, LayerViewMut, ParamBreakdown, Params, Tower, Trace,
};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
