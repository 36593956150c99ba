use std::fs;
use std::path::{Path, PathBuf};

use crate::ami::{normalize_for_export, AffectiveImage, FrameSequence};
use crate::error::{Error, Result};
use crate::io::write_png;
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

fn is_frame_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// PNG/JPEG files in `dir`, sorted lexicographically by file name.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_frame_file(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG/JPEG frames in {}", dir.display())));
    }
    Ok(files)
}

/// Decodes 8-bit frames to `[H, W, 3]` tensors scaled into `[0, 1]`.
pub fn load_frames<T: Scalar>(files: &[PathBuf]) -> Result<Vec<Tensor<T>>> {
    let scale = T::lit(1.0 / 255.0);
    files
        .iter()
        .map(|path| {
            let img = image::open(path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(|b| T::from_u8(b).unwrap() * scale).collect();
            Tensor::from_vec(&[h as usize, w as usize, 3], data)
        })
        .collect()
}

pub fn load_frame_sequence<T: Scalar>(
    dir: &Path,
    video_id: &str,
    subject_id: &str,
    label: &str,
) -> Result<FrameSequence<T>> {
    let frames = load_frames(&list_frame_files(dir)?)?;
    FrameSequence::new(frames, video_id, subject_id, label)
}

pub fn save_ami_png<T: Scalar>(path: &Path, img: &AffectiveImage<T>) -> Result<()> {
    let bytes = normalize_for_export(img);
    write_png(path, img.width() as u32, img.height() as u32, 3, bytes)
}
