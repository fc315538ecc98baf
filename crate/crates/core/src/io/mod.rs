//! File formats: the `VITW1` weight container, images and masks, and map
//! documents.

pub mod container;
pub mod image_io;
pub mod mapfile;

use std::path::Path;

use crate::error::{Error, Result};
use crate::vit::ModelBundle;

pub fn save_model(path: &Path, model: &ModelBundle) -> Result<()> {
    container::write_container(path, &model.to_named_tensors())
}

/// Reads a container and checks it holds a complete, consistent model.
pub fn load_model(path: &Path) -> Result<ModelBundle> {
    let tensors = container::read_container(path)?;
    ModelBundle::from_named_tensors(tensors)
        .and_then(|m| m.validate().map(|_| m))
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{gen_model, ToySpec};

    #[test]
    fn model_round_trip() {
        let dir = std::env::temp_dir().join(format!("caap-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.vitw");
        let model = gen_model(&ToySpec::new(7)).unwrap();
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.fingerprint(), model.fingerprint());
        // A container missing tensors is a format error.
        let mut tensors = model.to_named_tensors();
        tensors.pop();
        container::write_container(&path, &tensors).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
