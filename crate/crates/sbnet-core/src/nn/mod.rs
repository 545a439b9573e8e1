//! Reusable layers: thin, scalar-free structs that own parameter handles and
//! replay themselves onto any graph.

mod attention;
mod conv;
mod linear;
mod norm;

pub use attention::{MultiHeadSelfAttention, TransformerBlock};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm2d, LayerNorm};
