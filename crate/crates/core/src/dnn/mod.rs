//! Tanh networks emulating the Legendre dictionary.

mod emulate;
mod gadgets;
mod network;
mod train;

pub use emulate::{
    emulate_legendre, emulate_legendre_with, halton_points, product_tree, CertificationReport, Emulation,
    EmulationOptions,
};
pub use gadgets::{identity_gadget, mult_gadget, square_floor, square_gadget, SHIFT};
pub use network::{Activation, FeedforwardNetwork, SparseAffine};
pub use train::{prune_network, train_last_layer, PerturbationCheck, TrainableClass, TrainedNetwork};
