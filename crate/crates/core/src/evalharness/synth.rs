//! Deterministic synthetic micro-expression clips.
//!
//! Each subject has a static smooth base texture. Each clip overlays a small
//! Gaussian blob whose motion encodes the class: upward, downward, expanding
//! or oscillating. Frames are written as 8-bit PNGs.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::{DatasetManifest, ManifestEntry, DEFAULT_LABELS};
use crate::io::write_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: usize,
    pub clips_per_subject: usize,
    /// Frames per clip.
    pub k: usize,
    /// Frame height and width.
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 6,
            clips_per_subject: 8,
            k: 8,
            size: 112,
            seed: 0,
        }
    }
}

/// Class-specific motion signature, indexed like [`DEFAULT_LABELS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Upward,
    Downward,
    Expanding,
    Oscillating,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::Upward, Motion::Downward, Motion::Expanding, Motion::Oscillating];

    /// Blob centre `(y, x)` and radius as fractions of the frame size at time `t` in `[0, 1]`.
    fn blob_at(self, t: f64) -> (f64, f64, f64) {
        match self {
            Motion::Upward => (0.62 - 0.26 * t, 0.5, 0.07),
            Motion::Downward => (0.36 + 0.26 * t, 0.5, 0.07),
            Motion::Expanding => (0.5, 0.5, 0.04 + 0.09 * t),
            Motion::Oscillating => (0.5, 0.5 + 0.16 * (2.0 * PI * 1.5 * t).sin(), 0.07),
        }
    }
}

struct Texture {
    waves: Vec<[f64; 4]>, // (fy, fx, phase, amplitude) per wave
    tint: [f64; 3],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                [
                    rng.gen_range(0.5..3.0) * 2.0 * PI,
                    rng.gen_range(0.5..3.0) * 2.0 * PI,
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.02..0.06),
                ]
            })
            .collect();
        let tint = [rng.gen_range(0.3..0.5), rng.gen_range(0.25..0.45), rng.gen_range(0.2..0.4)];
        Texture { waves, tint }
    }

    fn value(&self, y: f64, x: f64, channel: usize) -> f64 {
        let wave: f64 = self
            .waves
            .iter()
            .map(|[fy, fx, ph, a]| a * (fy * y + fx * x + ph).sin())
            .sum();
        self.tint[channel] + wave
    }
}

/// Renders one clip as `k` frames of `size x size x 3` bytes.
fn render_clip(texture: &Texture, motion: Motion, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let size = cfg.size;
    let jitter = (rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04));
    let amplitude = rng.gen_range(0.3..0.4);
    let colour = [1.0, rng.gen_range(0.7..1.0), rng.gen_range(0.5..0.9)];
    (0..cfg.k)
        .map(|f| {
            let t = if cfg.k > 1 { f as f64 / (cfg.k - 1) as f64 } else { 1.0 };
            let (by, bx, br) = motion.blob_at(t);
            let (by, bx) = (by + jitter.0, bx + jitter.1);
            let mut frame = Vec::with_capacity(size * size * 3);
            for py in 0..size {
                let y = (py as f64 + 0.5) / size as f64;
                for px in 0..size {
                    let x = (px as f64 + 0.5) / size as f64;
                    let d2 = (y - by).powi(2) + (x - bx).powi(2);
                    let blob = amplitude * (-d2 / (2.0 * br * br)).exp();
                    for (ch, col) in colour.iter().enumerate() {
                        let noise = rng.gen_range(-0.01..0.01);
                        let v = texture.value(y, x, ch) + blob * col + noise;
                        frame.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            frame
        })
        .collect()
}

/// Writes `out_dir/<subject>/<video>/frame_NNN.png` for every clip and
/// `out_dir/manifest.csv`. Clip `j` of every subject has class `j mod 4`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.subjects < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 subjects"));
    }
    if cfg.k < 3 {
        return Err(Error::invalid("synthetic clips need at least 3 frames"));
    }
    if cfg.size < 8 || cfg.clips_per_subject == 0 {
        return Err(Error::invalid("synthetic frames must be at least 8x8 with at least one clip"));
    }
    let mut entries = Vec::with_capacity(cfg.subjects * cfg.clips_per_subject);
    for s in 0..cfg.subjects {
        let subject = format!("sub{:02}", s + 1);
        let mut subject_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(s as u64));
        let texture = Texture::random(&mut subject_rng);
        for c in 0..cfg.clips_per_subject {
            let class = c % Motion::ALL.len();
            let video = format!("{subject}_clip{:02}", c + 1);
            let clip_dir = out_dir.join(&subject).join(&video);
            let frames = render_clip(&texture, Motion::ALL[class], cfg, &mut subject_rng);
            for (f, bytes) in frames.into_iter().enumerate() {
                let path = clip_dir.join(format!("frame_{f:03}.png"));
                write_png(&path, cfg.size as u32, cfg.size as u32, 3, bytes)?;
            }
            entries.push(ManifestEntry {
                clip_dir,
                video_id: video,
                subject_id: subject.clone(),
                label: DEFAULT_LABELS[class].to_string(),
            });
        }
    }
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    let manifest = DatasetManifest::with_inferred_labels(entries, name)?;
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
