//! File helpers shared by every writer: atomic replacement and PNG output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Encodes an 8-bit RGB (3 channels) or grayscale (1 channel) buffer as PNG.
pub fn write_png(path: &Path, width: u32, height: u32, channels: usize, pixels: Vec<u8>) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    let img_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    match channels {
        3 => image::RgbImage::from_raw(width, height, pixels)
            .ok_or_else(|| Error::invalid("rgb buffer does not match dimensions"))?
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(img_err)?,
        1 => image::GrayImage::from_raw(width, height, pixels)
            .ok_or_else(|| Error::invalid("gray buffer does not match dimensions"))?
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(img_err)?,
        c => return Err(Error::invalid(format!("cannot write {c}-channel PNG"))),
    }
    atomic_write(path, &buf.into_inner())
}
