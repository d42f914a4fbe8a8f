//! Cross-domain inference: translate images, segment, and score.

use std::fs;
use std::path::Path;

use super::gan::GeneratorNet;
use super::load_generator;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::image::{pnm, to_model_range, to_unit_range, ImageRgb, MaskImage};
use crate::metrics::{self, SegScore};
use crate::networks::Segmentor;
use crate::scalar::Scalar;
use crate::synth::Sample;

/// Hard segmentation of one image.
pub fn predict_mask<T: Scalar>(seg: &Segmentor<T>, img: &ImageRgb) -> Result<MaskImage> {
    let x = to_model_range(&img.to_tensor::<T>());
    MaskImage::from_class_scores(&seg.forward(&x)?)
}

/// Per-image and mean scores of one segmentation system on one dataset.
#[derive(Clone, Debug)]
pub struct SystemReport {
    pub name: String,
    pub per_image: Vec<(String, SegScore)>,
    pub mean: SegScore,
}

impl SystemReport {
    /// Rows `id,dsc,iou` as percentages with one decimal, then a mean row.
    pub fn csv(&self) -> String {
        let mut out = String::from("id,dsc,iou\n");
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        for (id, s) in &self.per_image {
            out.push_str(&format!("{id},{},{}\n", pct(s.dsc), pct(s.iou)));
        }
        out.push_str(&format!("mean,{},{}\n", pct(self.mean.dsc), pct(self.mean.iou)));
        out
    }
}

/// Scores `segmentor ∘ translator` against ground truth. Without a
/// translator the images are segmented directly, which is the
/// no-translation baseline; an identity translator scores identically.
pub fn evaluate_system<T: Scalar>(
    name: &str,
    segmentor: &Segmentor<T>,
    translator: Option<&GeneratorNet<T>>,
    samples: &[Sample],
) -> Result<SystemReport> {
    if samples.is_empty() {
        return Err(Error::Dataset(format!("evaluation set for {name} is empty")));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut x = to_model_range(&sample.image.to_tensor::<T>());
        if let Some(gen) = translator {
            x = gen.forward(&x)?;
        }
        let pred = MaskImage::from_class_scores(&segmentor.forward(&x)?)?;
        per_image.push((sample.id.clone(), metrics::score(&pred, &sample.mask)?));
    }
    let mean = metrics::mean_scores(&per_image.iter().map(|(_, s)| *s).collect::<Vec<_>>())?;
    Ok(SystemReport {
        name: name.into(),
        per_image,
        mean,
    })
}

/// Maps every `.ppm` under `input_dir` through `map` (applied in model
/// range) and writes the result under `out_dir` with the same file name.
/// Returns the processed file names in sorted order.
pub fn translate_images<T: Scalar>(
    input_dir: &Path,
    out_dir: &Path,
    map: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<Vec<String>> {
    let entries = fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(input_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ppm") {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::Dataset(format!("no .ppm images under {}", input_dir.display())));
    }
    names.sort();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for name in &names {
        let img = pnm::read_ppm(input_dir.join(name))?;
        let fake = map(&to_model_range(&img.to_tensor::<T>()))?;
        pnm::write_ppm(out_dir.join(name), &ImageRgb::from_tensor(&to_unit_range(&fake))?)?;
    }
    Ok(names)
}

/// Loads a generator checkpoint and translates a directory of images.
pub fn translate<T: Scalar>(
    checkpoint_dir: &Path,
    input_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let gen = load_generator::<T>(checkpoint_dir)?;
    translate_images(input_dir, out_dir, |x| gen.forward(x))
}
