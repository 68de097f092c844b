//! Dense arrays with reverse-mode differentiation and the neural building
//! blocks used by the network.

mod array;
pub mod check;
mod layers;
mod tape;

pub use array::{Array, Real, PRECISION};
pub use layers::{
    gru_cell, mlp3, Bound, GruCell, Init, Linear, Mlp3, ParamEntry, ParamSpec, ParamStore,
    LAYER_NORM_EPS, LEAKY_SLOPE,
};
pub use tape::{Gradients, Tape, Var};
