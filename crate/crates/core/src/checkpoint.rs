//! Weight archives: safetensors with keys `<component>.<layer_index>.<param>`
//! and a JSON manifest stored under the metadata key `manifest`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{component_rng, feature_side, Classifier, Component, Encoder, InferenceModel, JigsawNet};
use crate::puzzle::GridSpec;
use crate::tensor::Tensor;

const MANIFEST_KEY: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub n: usize,
    pub classes: usize,
    pub piece_px: usize,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    /// Opaque trainer state needed to resume (absent in inference exports).
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
}

impl CheckpointManifest {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.piece_px)
    }
}

pub type TensorMap = BTreeMap<String, Tensor<f32>>;

pub fn save(path: &Path, tensors: &TensorMap, manifest: &CheckpointManifest) -> Result<()> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let raw = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), t.shape().to_vec(), raw)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(k, shape, raw)| {
            TensorView::new(Dtype::F32, shape.clone(), raw)
                .map(|v| (k.as_str(), v))
                .map_err(|e| Error::Checkpoint(format!("{k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let json = serde_json::to_string(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = HashMap::from([(MANIFEST_KEY.to_string(), json)]);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(views, Some(meta), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(TensorMap, CheckpointManifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| bad("missing manifest".into()))?;
    let manifest: CheckpointManifest = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut out = TensorMap::new();
    for (name, view) in st.iter() {
        if view.dtype() != Dtype::F32 {
            return Err(bad(format!("{name} has dtype {:?}, expected F32", view.dtype())));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.insert(name.to_string(), Tensor::from_vec(view.shape(), data)?);
    }
    Ok((out, manifest))
}

/// Parameters and batch-norm buffers of all components.
pub fn export_net(net: &mut JigsawNet<f32>) -> TensorMap {
    let mut map = TensorMap::new();
    net.visit_params(&mut |k, p| {
        map.insert(k.to_string(), p.value.clone());
    });
    net.visit_buffers(&mut |k, b| {
        map.insert(k.to_string(), b.clone());
    });
    map
}

fn take(map: &TensorMap, key: &str, target: &mut Tensor<f32>) -> Result<()> {
    let src = map
        .get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
    if src.shape() != target.shape() {
        return Err(Error::Checkpoint(format!(
            "{key}: stored shape {:?} does not match model shape {:?}",
            src.shape(),
            target.shape()
        )));
    }
    target.data_mut().copy_from_slice(src.data());
    Ok(())
}

/// Copy every tensor a component owns from `map`.
pub fn import_component<C: Component<f32>>(component: &mut C, map: &TensorMap) -> Result<()> {
    let mut result = Ok(());
    component.visit_params(&mut |k, p| {
        if result.is_ok() {
            result = take(map, k, &mut p.value);
        }
    });
    component.visit_buffers(&mut |k, b| {
        if result.is_ok() {
            result = take(map, k, b);
        }
    });
    result
}

pub fn import_net(net: &mut JigsawNet<f32>, map: &TensorMap) -> Result<()> {
    import_component(&mut net.encoder, map)?;
    import_component(&mut net.classifier, map)?;
    import_component(&mut net.generator, map)?;
    import_component(&mut net.discriminator, map)
}

/// Build the inference model from a checkpoint, reading only encoder and
/// classifier tensors.
pub fn load_inference(path: &Path) -> Result<(InferenceModel, CheckpointManifest)> {
    let (map, manifest) = load(path)?;
    let grid = manifest.grid()?;
    let f = feature_side(grid.piece_px)?;
    let mut encoder = Encoder::new(grid.n, &mut component_rng(manifest.seed, 1));
    let mut classifier = Classifier::new(grid.n * f, manifest.classes, &mut component_rng(manifest.seed, 2));
    import_component(&mut encoder, &map)?;
    import_component(&mut classifier, &map)?;
    Ok((
        InferenceModel {
            encoder,
            classifier,
            grid,
            classes: manifest.classes,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn manifest(grid: GridSpec) -> CheckpointManifest {
        CheckpointManifest {
            n: grid.n,
            classes: 6,
            piece_px: grid.piece_px,
            seed: 5,
            epoch: 2,
            step: 40,
            trainer: None,
        }
    }

    #[test]
    fn round_trip_restores_every_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        let grid = GridSpec::new(2, 8).unwrap();
        let mut net = JigsawNet::<f32>::new(grid, 6, 5).unwrap();
        let map = export_net(&mut net);
        assert!(map.contains_key("encoder.0.weight"));
        assert!(map.contains_key("encoder.1.running_var"));
        assert!(map.contains_key("generator.0.1.running_mean"));
        save(&path, &map, &manifest(grid)).unwrap();
        let (back, m) = load(&path).unwrap();
        assert_eq!(back, map);
        assert_eq!(m, manifest(grid));

        let mut other = JigsawNet::<f32>::new(grid, 6, 99).unwrap();
        import_net(&mut other, &back).unwrap();
        assert_eq!(export_net(&mut other), map);
    }

    #[test]
    fn saving_twice_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(2, 8).unwrap();
        let mut net = JigsawNet::<f32>::new(grid, 6, 1).unwrap();
        let map = export_net(&mut net);
        save(&dir.path().join("a"), &map, &manifest(grid)).unwrap();
        save(&dir.path().join("b"), &map, &manifest(grid)).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a")).unwrap(),
            std::fs::read(dir.path().join("b")).unwrap()
        );
    }

    #[test]
    fn inference_model_matches_full_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        let grid = GridSpec::new(2, 8).unwrap();
        let mut net = JigsawNet::<f32>::new(grid, 6, 3).unwrap();
        save(&path, &export_net(&mut net), &manifest(grid)).unwrap();
        let (mut inf, _) = load_inference(&path).unwrap();
        let x = Tensor::full(&[4, 3, 8, 8], 0.25);
        let f = net.encoder.forward(&x, Mode::Eval).unwrap();
        assert_eq!(inf.logits(&x).unwrap(), net.classifier.forward(&f, Mode::Eval));
    }

    #[test]
    fn corrupt_or_mismatched_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
        let grid = GridSpec::new(2, 8).unwrap();
        let mut small = JigsawNet::<f32>::new(grid, 6, 3).unwrap();
        let mut wide = JigsawNet::<f32>::new(grid, 7, 3).unwrap();
        assert!(import_net(&mut wide, &export_net(&mut small)).is_err());
    }
}
