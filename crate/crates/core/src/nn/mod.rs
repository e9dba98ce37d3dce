//! Small dense networks with hand-written backpropagation.

pub mod autoencoder;
pub mod dec;
pub mod dense;
pub mod optim;

pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig, ModelRegistry, TrainedAutoencoder};
pub use dense::{mse, Activation, Dense, DenseNet, Mode};
pub use optim::{Adam, Momentum};
