pub mod gtgnn;
pub mod text_encoder;
pub mod autoencoder;
