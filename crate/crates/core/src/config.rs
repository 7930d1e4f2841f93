//! Training configuration, read from TOML with sections `[train]`,
//! `[puzzle]`, `[jigsaw]`, `[loss]`, `[boundary]`, `[gan]` and `[data]`.
//! Individual keys are addressed as `section.field`, e.g. `train.lr`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SplitFractions;
use crate::error::{Error, Result};
use crate::losses::{BoundaryLossConfig, LossWeights};
use crate::networks::feature_side;
use crate::nn::AdamConfig;
use crate::puzzle::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Draw a fresh shuffle for every jigsaw image each epoch.
    pub reshuffle: bool,
    /// Run every loop on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 10,
            reshuffle: true,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuzzleSection {
    pub n: usize,
    pub piece_px: usize,
    /// Size `P` of the permutation set.
    pub classes: usize,
    pub permset_seed: u64,
}

impl Default for PuzzleSection {
    fn default() -> Self {
        PuzzleSection {
            n: 3,
            piece_px: 24,
            classes: 100,
            permset_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefLabelSource {
    /// Boundary-compatibility solver run on every sample.
    Internal,
    /// Labels read from `jigsaw.ref_label_csv`.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpSource {
    /// The classifier's most likely class.
    Argmax,
    /// The sample's reference label.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JigsawSection {
    /// Focal-loss exponent.
    pub gamma: f64,
    /// Strip width of the reference solver.
    pub pix: usize,
    pub ref_label_source: RefLabelSource,
    pub ref_label_csv: Option<PathBuf>,
    pub warp_source: WarpSource,
}

impl Default for JigsawSection {
    fn default() -> Self {
        JigsawSection {
            gamma: 2.0,
            pix: 1,
            ref_label_source: RefLabelSource::Internal,
            ref_label_csv: None,
            warp_source: WarpSource::Argmax,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    /// Use the saturating generator objective `mean log(1 - D(G))`.
    pub saturating: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub permset: Option<PathBuf>,
    pub fractions: SplitFractions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train: TrainSection,
    pub puzzle: PuzzleSection,
    pub jigsaw: JigsawSection,
    pub loss: LossWeights,
    pub boundary: BoundaryLossConfig,
    pub gan: GanSection,
    pub data: DataSection,
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.puzzle.n, self.puzzle.piece_px).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.adam_eps,
        }
    }

    /// Set one dotted key, e.g. `("loss.w_gan", 0.0)`, and re-validate.
    pub fn with_override(&self, key: &str, value: toml::Value) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {key} must look like section.field")))?;
        let table = doc
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown config section {section}")))?;
        table.insert(field.to_string(), value);
        let cfg: TrainConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let t = &self.train;
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return bad(format!("train.lr must be > 0, got {}", t.lr));
        }
        if t.epochs < 1 {
            return bad("train.epochs must be >= 1".into());
        }
        if t.batch_size < 1 {
            return bad("train.batch_size must be >= 1".into());
        }
        if t.checkpoint_every < 1 {
            return bad("train.checkpoint_every must be >= 1".into());
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.adam_eps > 0.0) {
            return bad("Adam betas must be in [0, 1) and eps > 0".into());
        }
        let grid = self.grid()?;
        feature_side(grid.piece_px)?;
        let limit = factorial(grid.cells());
        if self.puzzle.classes < 1 || self.puzzle.classes as u128 > limit {
            return bad(format!(
                "puzzle.classes = {} is impossible for n = {}: a permutation set holds between 1 and {limit} entries",
                self.puzzle.classes, grid.n
            ));
        }
        if !(self.jigsaw.gamma.is_finite() && self.jigsaw.gamma >= 0.0) {
            return bad(format!("jigsaw.gamma must be >= 0, got {}", self.jigsaw.gamma));
        }
        if self.jigsaw.pix == 0 || 2 * self.jigsaw.pix >= grid.piece_px {
            return bad(format!("jigsaw.pix = {} is invalid for {}px pieces", self.jigsaw.pix, grid.piece_px));
        }
        if self.jigsaw.ref_label_source == RefLabelSource::External {
            if self.jigsaw.ref_label_csv.is_none() {
                return bad("jigsaw.ref_label_source = \"external\" needs jigsaw.ref_label_csv".into());
            }
            if t.reshuffle {
                return bad("external reference labels describe fixed shuffles; set train.reshuffle = false".into());
            }
        }
        self.loss.validate()?;
        self.boundary.validate(grid.piece_px)?;
        self.data.fractions.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.train.lr, 2e-4);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.jigsaw.gamma, 2.0);
        assert_eq!(c.loss, LossWeights::default());
    }

    #[test]
    fn parses_sections_and_rejects_typos() {
        let c = TrainConfig::from_toml_str(
            "[train]\nlr = 0.001\nepochs = 3\n[loss]\nw_boundary = 0.5\n[jigsaw]\ngamma = 1.0\nwarp_source = \"reference\"\n",
        )
        .unwrap();
        assert_eq!((c.train.lr, c.train.epochs), (0.001, 3));
        assert_eq!(c.loss.w_boundary, 0.5);
        assert_eq!(c.jigsaw.warp_source, WarpSource::Reference);
        assert!(TrainConfig::from_toml_str("[train]\nlearning_rate = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[train]\nepochs = 0\n",
            "[train]\nlr = 0.0\n",
            "[train]\nlr = -1.0\n",
            "[loss]\nw_gan = -0.5\n",
            "[puzzle]\nn = 2\nclasses = 100\n",
            "[puzzle]\npiece_px = 26\n",
            "[jigsaw]\nref_label_source = \"external\"\n",
            "[jigsaw]\nref_label_source = \"external\"\nref_label_csv = \"x.csv\"\n",
        ] {
            let err = TrainConfig::from_toml_str(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
        let ok = "[train]\nreshuffle = false\n[jigsaw]\nref_label_source = \"external\"\nref_label_csv = \"x.csv\"\n";
        TrainConfig::from_toml_str(ok).unwrap();
    }

    #[test]
    fn dotted_overrides() {
        let base = TrainConfig::default();
        let c = base.with_override("loss.w_gan", toml::Value::Float(0.0)).unwrap();
        assert_eq!(c.loss.w_gan, 0.0);
        let c = c.with_override("puzzle.classes", toml::Value::Integer(10)).unwrap();
        assert_eq!(c.puzzle.classes, 10);
        assert!(base.with_override("loss.w_gann", toml::Value::Float(0.0)).is_err());
        assert!(base.with_override("train.epochs", toml::Value::Integer(0)).is_err());
        assert!(base.with_override("nosection", toml::Value::Integer(0)).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::default();
        c.jigsaw.ref_label_csv = Some("refs.csv".into());
        let text = c.to_toml_string().unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
    }
}
