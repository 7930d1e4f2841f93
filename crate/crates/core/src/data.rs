//! Corpus ingestion: manifests, image preprocessing and shuffled samples.
//!
//! A corpus directory is laid out as `<category>/<domain>/<file>`. Images
//! are resized on their shorter side, center-cropped to the puzzle side and
//! scaled to `[-1, 1]`.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{imageops::FilterType, RgbImage};
use log::warn;
use rand::{seq::SliceRandom, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::puzzle::{split_image, GridSpec, PermutationSet, PieceBatch};
use crate::synth;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Shuffled inputs for the classifier.
    Jigsaw,
    /// Unshuffled target-domain images for the discriminator.
    Real,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Jigsaw => "jigsaw",
            Split::Real => "real",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub jigsaw: f64,
    pub real: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            jigsaw: 0.4,
            real: 0.4,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.jigsaw, self.real, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Split sizes for `count` items; each is within one of its exact share.
    pub fn sizes(&self, count: usize) -> [usize; 3] {
        let share = |f: f64| (f * count as f64).round() as usize;
        let jigsaw = share(self.jigsaw).min(count);
        let real = share(self.real).min(count - jigsaw);
        [jigsaw, real, count - jigsaw - real]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: String,
    pub category: String,
    pub domain: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub fractions: SplitFractions,
    pub seed: u64,
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Stratified split of a `<category>/<domain>/<file>` corpus.
///
/// Entries are ordered by category, then domain and file name; each
/// category is shuffled with its own seeded stream before being cut into
/// the three splits.
pub fn build_manifest(corpus: &Path, seed: u64, fractions: SplitFractions) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut entries = Vec::new();
    let categories: Vec<PathBuf> = sorted_dir(corpus)?.into_iter().filter(|p| p.is_dir()).collect();
    if categories.is_empty() {
        return Err(Error::Data(format!("{}: no category directories", corpus.display())));
    }
    for (ci, cat_dir) in categories.iter().enumerate() {
        let category = file_name(cat_dir);
        let mut items = Vec::new();
        for dom_dir in sorted_dir(cat_dir)?.into_iter().filter(|p| p.is_dir()) {
            let domain = file_name(&dom_dir);
            for file in sorted_dir(&dom_dir)?.into_iter().filter(|p| p.is_file()) {
                if let Err(e) = image::open(&file) {
                    warn!("skipping {}: {e}", file.display());
                    continue;
                }
                let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                items.push(ManifestEntry {
                    image_id: format!("{category}/{domain}/{stem}"),
                    path: file.to_string_lossy().into_owned(),
                    category: category.clone(),
                    domain: domain.clone(),
                    split: Split::Test,
                });
            }
        }
        if items.is_empty() {
            warn!("category {category} has no decodable images");
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let [nj, nr, _] = fractions.sizes(items.len());
        for (rank, &i) in order.iter().enumerate() {
            items[i].split = if rank < nj {
                Split::Jigsaw
            } else if rank < nj + nr {
                Split::Real
            } else {
                Split::Test
            };
        }
        entries.extend(items);
    }
    Ok(DatasetManifest {
        entries,
        fractions,
        seed,
    })
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|err| Error::Data(err.to_string()))?;
            writeln!(w, "{line}").map_err(|err| Error::io("<manifest>", err))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a JSON-lines manifest. Fractions and seed are not stored in the
    /// file; the returned manifest carries the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| Error::Data(format!("{}:{}: {err}", path.display(), k + 1)))?;
            entries.push(e);
        }
        let mut ids: Vec<&str> = entries.iter().map(|e| e.image_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("{}: duplicate image id {}", path.display(), w[0])));
        }
        Ok(DatasetManifest {
            entries,
            fractions: SplitFractions::default(),
            seed: 0,
        })
    }
}

/// Shorter-side resize to `side` followed by a center crop to `side x side`.
/// Images already of that size are returned unchanged.
pub fn preprocess(img: &RgbImage, side: usize) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = side as u32;
    if w == s && h == s {
        return img.clone();
    }
    let scale = s as f64 / w.min(h) as f64;
    let nw = ((w as f64 * scale).round() as u32).max(s);
    let nh = ((h as f64 * scale).round() as u32).max(s);
    let resized = image::imageops::resize(img, nw, nh, FilterType::Triangle);
    image::imageops::crop_imm(&resized, (nw - s) / 2, (nh - s) / 2, s, s).to_image()
}

/// `[3, H, W]` tensor in `[-1, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("shape matches")
}

pub fn tensor_to_image(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| ((d[(c * h + y as usize) * w + x as usize] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    }))
}

/// Decode, preprocess and normalise one image file.
pub fn load_image(path: &Path, side: usize) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(image_to_tensor(&preprocess(&img.to_rgb8(), side)))
}

pub fn save_image(t: &Tensor<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    tensor_to_image(t)?.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Preprocessed images of one split, in manifest order.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub ids: Vec<String>,
    pub categories: Vec<String>,
    pub images: Vec<Tensor<f32>>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn load_split(manifest: &DatasetManifest, split: Split, side: usize, exec: Exec) -> Result<LoadedSplit> {
    let entries = manifest.split(split);
    let images = exec
        .map(entries.len(), |i| load_image(Path::new(&entries[i].path), side))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedSplit {
        ids: entries.iter().map(|e| e.image_id.clone()).collect(),
        categories: entries.iter().map(|e| e.category.clone()).collect(),
        images,
    })
}

/// A shuffled puzzle. `true_class` is for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledSample {
    pub pieces: PieceBatch,
    pub true_class: usize,
    pub image_id: String,
}

/// Shuffle `image` with a class drawn uniformly from `set`.
pub fn make_shuffled_sample(
    image: &Tensor<f32>,
    image_id: &str,
    grid: GridSpec,
    set: &PermutationSet,
    seed: u64,
) -> Result<ShuffledSample> {
    let class = ChaCha8Rng::seed_from_u64(seed).gen_range(0..set.len());
    shuffle_with_class(image, image_id, grid, set, class)
}

/// Shuffle `image` with a given set entry.
pub fn shuffle_with_class(
    image: &Tensor<f32>,
    image_id: &str,
    grid: GridSpec,
    set: &PermutationSet,
    class: usize,
) -> Result<ShuffledSample> {
    if set.n != grid.n {
        return Err(Error::Invalid(format!(
            "permutation set is for n={} but the grid is n={}",
            set.n, grid.n
        )));
    }
    let pieces = split_image(image, grid, image_id)?.apply_permutation(set.get(class)?)?;
    Ok(ShuffledSample {
        pieces,
        true_class: class,
        image_id: image_id.to_string(),
    })
}

/// Seed of the shuffle drawn for image `index` in shuffle round `round`.
pub fn sample_seed(seed: u64, round: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Which shuffle every jigsaw image receives in every epoch.
///
/// The schedule is a pure function of `(seed, epoch, index)`, so batches do
/// not depend on worker count and a run can be replayed from any epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSchedule {
    pub grid: GridSpec,
    pub seed: u64,
    /// Draw new shuffles every epoch instead of reusing round 0.
    pub reshuffle: bool,
}

impl SampleSchedule {
    pub fn round(&self, epoch: usize) -> usize {
        if self.reshuffle {
            epoch
        } else {
            0
        }
    }

    /// Shuffled samples, with their evaluation-only classes.
    pub fn samples(
        &self,
        split: &LoadedSplit,
        set: &PermutationSet,
        epoch: usize,
        exec: Exec,
    ) -> Result<Vec<ShuffledSample>> {
        let round = self.round(epoch);
        exec.map(split.len(), |i| {
            let seed = sample_seed(self.seed, round, i);
            make_shuffled_sample(&split.images[i], &split.ids[i], self.grid, set, seed)
        })
        .into_iter()
        .collect()
    }

    /// The same samples reduced to their pieces; `source_id` is the image id.
    pub fn pieces(&self, split: &LoadedSplit, set: &PermutationSet, epoch: usize, exec: Exec) -> Result<Vec<PieceBatch>> {
        Ok(self
            .samples(split, set, epoch, exec)?
            .into_iter()
            .map(|s| s.pieces)
            .collect())
    }
}

/// Write `count` smooth synthetic images as `<category>/smooth/img_NNNN.png`.
pub fn write_synthetic_corpus(dir: &Path, count: usize, side: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(count);
    for k in 0..count {
        let category = k % synth::CATEGORIES;
        let img = synth::smooth_image(side, category, seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let path = dir
            .join(synth::category_name(category))
            .join("smooth")
            .join(format!("img_{k:04}.png"));
        save_image(&img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
