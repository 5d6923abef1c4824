//! Dense-network substrate: flat-parameter MLPs with hand-written reverse
//! passes, a last-layer overlay for externally generated weights, and Adam.

mod adam;
pub mod checkpoint;
mod net;

pub use adam::{AdamConfig, AdamState};
pub use net::{
    chain, Activation, DenseNet, GradientBundle, LayerSpec, LayerView, OverlaidNet,
    OverlayGradients, OverlayTape, Tape,
};
