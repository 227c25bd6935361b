//! Network checkpoints on disk. See [`edgeqos_core::nn::checkpoint`] for the
//! byte layout.

use std::fs;
use std::path::Path;

use edgeqos_core::nn::MlpNetwork;

use crate::Error;

pub fn save_checkpoint(net: &MlpNetwork, path: &Path) -> Result<(), Error> {
    fs::write(path, net.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpNetwork, Error> {
    let bytes = fs::read(path)?;
    Ok(MlpNetwork::from_bytes(&bytes)?)
}
