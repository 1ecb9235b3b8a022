use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{apply_params, AugmentParams, AugmentSpec};
use super::image::{to_model_range, ImageU8};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Where a dataset item came from. `params` is `None` for unaugmented originals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_index: usize,
    pub source_path: Option<String>,
    pub params: Option<AugmentParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<ImageU8>,
    provenance: Vec<Provenance>,
}

#[derive(Serialize)]
struct ManifestRecord<'a> {
    index: usize,
    source_index: usize,
    source_path: Option<&'a str>,
    params: Option<&'a AugmentParams>,
    output: Option<&'a str>,
}

impl Dataset {
    /// Unaugmented images; all must share one extent.
    pub fn from_images(items: Vec<ImageU8>) -> Result<Self> {
        let provenance = (0..items.len())
            .map(|i| Provenance {
                source_index: i,
                source_path: None,
                params: None,
            })
            .collect();
        Self::new(items, provenance)
    }

    pub fn new(items: Vec<ImageU8>, provenance: Vec<Provenance>) -> Result<Self> {
        if items.len() != provenance.len() {
            return Err(Error::Size(format!(
                "{} items but {} provenance records",
                items.len(),
                provenance.len()
            )));
        }
        if let Some(first) = items.first() {
            let extent = (first.width(), first.height());
            if let Some((i, bad)) = items
                .iter()
                .enumerate()
                .find(|(_, im)| (im.width(), im.height()) != extent)
            {
                return Err(Error::Shape(format!(
                    "item {i} is {}×{}, expected {}×{}",
                    bad.width(),
                    bad.height(),
                    extent.0,
                    extent.1
                )));
            }
        }
        Ok(Dataset { items, provenance })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ImageU8] {
        &self.items
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Width and height shared by every item.
    pub fn extent(&self) -> Option<(usize, usize)> {
        self.items.first().map(|im| (im.width(), im.height()))
    }

    /// Records `paths[i]` as the source path of every item derived from source `i`.
    pub fn set_source_paths(&mut self, paths: &[String]) {
        for p in &mut self.provenance {
            p.source_path = paths.get(p.source_index).cloned();
        }
    }

    /// Items at `indices` stacked into an N×3×H×W tensor in model range.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (w, h) = self
            .extent()
            .ok_or_else(|| Error::Size("empty dataset".into()))?;
        let mut data = Vec::with_capacity(indices.len() * 3 * w * h);
        for &i in indices {
            let item = self.items.get(i).ok_or_else(|| {
                Error::Size(format!("index {i} outside dataset of {}", self.len()))
            })?;
            data.extend_from_slice(&to_model_range::<T>(item).data());
        }
        Tensor::from_vec(&[indices.len(), 3, h, w], data)
    }

    /// One JSON object per line: index, source, augmentation draws and output path.
    pub fn write_manifest(&self, path: impl AsRef<Path>, outputs: Option<&[String]>) -> Result<()> {
        let path = path.as_ref();
        let mut out =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (i, p) in self.provenance.iter().enumerate() {
            let record = ManifestRecord {
                index: i,
                source_index: p.source_index,
                source_path: p.source_path.as_deref(),
                params: p.params.as_ref(),
                output: outputs.and_then(|o| o.get(i)).map(String::as_str),
            };
            let line = serde_json::to_string(&record).expect("manifest records serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-item generator: item `index` always sees the same stream for a given seed.
pub fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Originals first, then augmented variants round-robin over the sources
/// until `target_count` items exist. Item `i` draws from
/// `item_rng(spec.seed, i)`, so the result does not depend on scheduling.
pub fn expand_dataset(
    sources: &[ImageU8],
    target_count: usize,
    spec: &AugmentSpec,
) -> Result<Dataset> {
    spec.validate()?;
    if sources.is_empty() {
        return Err(Error::Size("no source images".into()));
    }
    if target_count < sources.len() {
        return Err(Error::Size(format!(
            "target count {target_count} is below the {} sources",
            sources.len()
        )));
    }
    Dataset::from_images(sources.to_vec())?;
    let n = sources.len();
    let extra: Vec<(ImageU8, Provenance)> = (n..target_count)
        .into_par_iter()
        .map(|i| {
            let source_index = (i - n) % n;
            let params = AugmentParams::draw(spec, &mut item_rng(spec.seed, i));
            let image = apply_params(
                &sources[source_index],
                &params,
                spec.fill_mode,
                spec.interpolation,
            );
            let provenance = Provenance {
                source_index,
                source_path: None,
                params: Some(params),
            };
            (image, provenance)
        })
        .collect();
    let mut items = sources.to_vec();
    let mut provenance: Vec<Provenance> = (0..n)
        .map(|i| Provenance {
            source_index: i,
            source_path: None,
            params: None,
        })
        .collect();
    for (im, p) in extra {
        items.push(im);
        provenance.push(p);
    }
    Dataset::new(items, provenance)
}

/// Index batches for one epoch: a Fisher–Yates shuffle of `0..len`, cut
/// into runs of `batch_size`. `drop_last` discards a ragged tail.
pub fn batch_indices<R: Rng + ?Sized>(
    len: usize,
    batch_size: usize,
    rng: &mut R,
    drop_last: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > len {
        return Err(Error::Size(format!(
            "batch size {batch_size} must lie in 1..={len}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// One shuffled epoch of model-range batches.
pub fn batches<T: Real, R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
    drop_last: bool,
) -> Result<Vec<Tensor<T>>> {
    batch_indices(dataset.len(), batch_size, rng, drop_last)?
        .iter()
        .map(|idx| dataset.batch(idx))
        .collect()
}

/// Two-texture corpus: even indices carry stripes, odd indices a
/// checkerboard, each with its own random period, phase and tint.
pub fn synthetic_textures(count: usize, size: usize, seed: u64) -> Vec<ImageU8> {
    (0..count)
        .map(|i| {
            let mut rng = item_rng(seed, i);
            let period = rng.gen_range(3..=6usize);
            let phase = rng.gen_range(0..period);
            let tint: [u8; 3] = [
                rng.gen_range(150..=255),
                rng.gen_range(150..=255),
                rng.gen_range(150..=255),
            ];
            let base: u8 = rng.gen_range(0..=60);
            ImageU8::from_fn(size, size, |x, y| {
                let on = if i % 2 == 0 {
                    (x + y + phase) % period < period / 2
                } else {
                    ((x + phase) / period + (y + phase) / period) % 2 == 0
                };
                if on {
                    tint
                } else {
                    [base; 3]
                }
            })
            .expect("size is positive")
        })
        .collect()
}
