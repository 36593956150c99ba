use std::path::{Path, PathBuf};

use crate::ami::{compose_ami_with, list_frame_files, load_ami1, load_frames, save_ami1, AffectiveImage, FrameSequence, WeightRule};
use crate::error::{Error, Result};
use crate::evalharness::augment::resize;
use crate::evalharness::{DatasetManifest, ManifestEntry};
use crate::ndnn::Tensor;

/// One network-ready example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub subject_id: String,
    pub label: usize,
    /// Raw AMI, `[H, W, 3]`.
    pub ami: AffectiveImage<f32>,
}

/// Where the cached AMI of a frame folder lives: a sibling file keyed by
/// frame count and weight rule.
pub fn ami_cache_path(clip_dir: &Path, k: usize, rule: WeightRule) -> PathBuf {
    let name = clip_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    clip_dir.with_file_name(format!("{name}.k{k}.{rule}.ami1"))
}

/// Loads (or computes and caches) the AMI of one manifest entry.
pub fn load_entry_ami(entry: &ManifestEntry, rule: WeightRule) -> Result<AffectiveImage<f32>> {
    let clip = &entry.clip_dir;
    if clip.is_file() && clip.extension().is_some_and(|e| e == "ami1") {
        let pixels = load_ami1::<f32>(clip)?;
        return Ok(AffectiveImage {
            pixels,
            source_video_id: entry.video_id.clone(),
            k_used: 0,
        });
    }
    if !clip.is_dir() {
        return Err(Error::io(
            clip,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("clip {} is unreadable", entry.video_id)),
        ));
    }
    let files = list_frame_files(clip)?;
    let cache = ami_cache_path(clip, files.len(), rule);
    if cache.is_file() {
        if let Ok(pixels) = load_ami1::<f32>(&cache) {
            return Ok(AffectiveImage {
                pixels,
                source_video_id: entry.video_id.clone(),
                k_used: files.len(),
            });
        }
    }
    let seq = FrameSequence::new(load_frames::<f32>(&files)?, &entry.video_id, &entry.subject_id, &entry.label)?;
    let ami = compose_ami_with(&seq, rule)?;
    save_ami1(&cache, &ami.pixels)?;
    Ok(ami)
}

pub fn load_samples(manifest: &DatasetManifest, rule: WeightRule) -> Result<Vec<Sample>> {
    manifest
        .entries()
        .iter()
        .map(|e| {
            let label = manifest
                .label_index(&e.label)
                .ok_or_else(|| Error::invalid(format!("label {:?} not in label set", e.label)))?;
            Ok(Sample {
                video_id: e.video_id.clone(),
                subject_id: e.subject_id.clone(),
                label,
                ami: load_entry_ami(e, rule)?,
            })
        })
        .collect()
}

/// Resizes to the network input and standardizes the image to zero mean and
/// unit variance over all pixels and channels.
pub fn prepare_input(pixels: &Tensor<f32>, input_size: (usize, usize)) -> Result<Tensor<f32>> {
    if pixels.shape().len() != 3 || pixels.shape()[2] != 3 {
        return Err(Error::invalid(format!("expected an [H, W, 3] image, got {:?}", pixels.shape())));
    }
    let img = resize(pixels, input_size.0, input_size.1);
    let n = img.len() as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    Ok(img.map(|v| ((v as f64 - mean) * inv) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_input() {
        let px = Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f32).collect()).unwrap();
        let x = prepare_input(&px, (2, 2)).unwrap();
        let mean: f32 = x.data().iter().sum::<f32>() / 12.0;
        let var: f32 = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 12.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
        let flat = prepare_input(&Tensor::full(&[3, 3, 3], 5.0), (3, 3)).unwrap();
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cache_path_is_sibling() {
        let p = ami_cache_path(Path::new("/data/s1/clip7"), 12, WeightRule::SuffixSum);
        assert_eq!(p, Path::new("/data/s1/clip7.k12.suffix_sum.ami1"));
    }
}
