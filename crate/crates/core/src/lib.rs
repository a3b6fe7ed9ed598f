//! Desk-scale workbench for three MNIST experiments:
//!
//! * semi-restricted Boltzmann machines whose hidden layer is coupled along a
//!   Chimera graph, trained with exact, Gibbs or annealing samplers
//!   ([`boltzmann`], [`sampling`], [`chimera`]);
//! * integer-genome evolutionary search over LeNet hyperparameters
//!   ([`evolution`], [`cnn`]);
//! * an integrate-and-fire spiking network simulator with structural
//!   evolution and a memristive energy ledger ([`snn`], [`energy`]).
//!
//! All stochastic routines take explicit seeds and draw from ChaCha8 streams
//! (see [`rng`]) so results replay bit-identically across platforms and
//! worker counts.

pub mod boltzmann;
pub mod chimera;
pub mod cnn;
pub mod data;
pub mod energy;
pub mod evolution;
pub mod rng;
pub mod sampling;
pub mod snn;

pub use chimera::ChimeraGraph;
pub use data::{AugmentedVector, Dataset, ImageSample, Split};
