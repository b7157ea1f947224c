//! Degradation model checkpoints: one flat tensor with every parameter in
//! visit order, plus a manifest carrying the architecture, training epoch,
//! and a hash of the training configuration.

use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::tensor::Tensor;

use super::mixture::MixtureKind;
use super::model::{DegradationArch, DegradationModel};

pub const WEIGHTS_FILE: &str = "weights.mrt";
pub const MANIFEST_FILE: &str = "model.txt";

/// Writes `dir/weights.mrt` and `dir/model.txt`.
pub fn save_model(
    dir: impl AsRef<Path>,
    model: &DegradationModel,
    epoch: usize,
    train_config_hash: &str,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut flat = Vec::with_capacity(model.param_count());
    model.visit_params(|t| flat.extend_from_slice(t.data()));
    save_tensor(dir.join(WEIGHTS_FILE), &Tensor::from_vec(vec![flat.len()], flat)?)?;

    let mut manifest = Config::new();
    let arch = &model.arch;
    manifest.set("arch.image_channels", arch.image_channels);
    manifest.set("arch.hidden", arch.hidden);
    manifest.set("arch.blocks", arch.blocks);
    manifest.set("arch.mixtures", arch.mixtures);
    manifest.set("arch.kernel", arch.kernel);
    manifest.set("arch.kind", arch.kind.name());
    manifest.set("train.epoch", epoch);
    manifest.set("train.config_hash", train_config_hash);
    manifest.set("params.count", model.param_count());
    manifest.save(dir.join(MANIFEST_FILE))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<DegradationModel> {
    let dir = dir.as_ref();
    let manifest = Config::load(dir.join(MANIFEST_FILE))?;
    let arch = DegradationArch {
        image_channels: manifest.usize_or("arch.image_channels", 1)?,
        hidden: manifest.usize_or("arch.hidden", 32)?,
        blocks: manifest.usize_or("arch.blocks", 3)?,
        mixtures: manifest.usize_or("arch.mixtures", 10)?,
        kernel: manifest.usize_or("arch.kernel", 3)?,
        kind: MixtureKind::parse(&manifest.str_or("arch.kind", "gaussian"))?,
    };
    let mut model = DegradationModel::new(arch, 0)?;
    let flat = load_tensor(dir.join(WEIGHTS_FILE))?;
    if flat.len() != model.param_count() {
        return Err(Error::format(
            dir.join(WEIGHTS_FILE).display().to_string(),
            format!(
                "parameter count mismatch: file {} vs arch {}",
                flat.len(),
                model.param_count()
            ),
        ));
    }
    let data = flat.data();
    let mut offset = 0usize;
    model.visit_params_mut(|t| {
        let n = t.len();
        t.data_mut().copy_from_slice(&data[offset..offset + n]);
        offset += n;
    });
    Ok(model)
}
