//! Label-preserving geometric augmentation of affective-motion images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ami::AffectiveImage;
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    /// Rotation angle is drawn uniformly from `±max_rotation_deg`; 0 disables.
    pub max_rotation_deg: f64,
    /// Zoom factor is drawn uniformly from `1 ± max_zoom`; 0 disables.
    pub max_zoom: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            max_rotation_deg: 5.0,
            max_zoom: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn op_count(&self) -> usize {
        usize::from(self.flip) + usize::from(self.max_rotation_deg > 0.0) + usize::from(self.max_zoom > 0.0)
    }
}

/// Mirrors an `[H, W, C]` image left to right.
pub fn hflip<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = dims(img);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let src = &img.data()[(y * w + (w - 1 - x)) * c..][..c];
            out.data_mut()[(y * w + x) * c..][..c].copy_from_slice(src);
        }
    }
    out
}

fn dims<T: Scalar>(img: &Tensor<T>) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

/// Bilinear sample at fractional `(sy, sx)`; neighbours outside the image read as zero.
fn sample<T: Scalar>(img: &Tensor<T>, sy: f64, sx: f64, out: &mut [T]) {
    let (h, w, c) = dims(img);
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    out.iter_mut().for_each(|v| *v = T::zero());
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                continue;
            }
            let src = &img.data()[(yy as usize * w + xx as usize) * c..][..c];
            for (o, &s) in out.iter_mut().zip(src) {
                *o += T::lit(wgt) * s;
            }
        }
    }
}

/// Resamples through an inverse map from output to source coordinates.
fn warp<T: Scalar>(img: &Tensor<T>, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Tensor<T> {
    let (h, w, c) = dims(img);
    let mut out = Tensor::zeros(img.shape());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = inverse(y as f64, x as f64);
            sample(img, sy, sx, &mut out.data_mut()[(y * w + x) * c..][..c]);
        }
    }
    out
}

/// Rotation about the image centre, bilinear with zero fill.
pub fn rotate<T: Scalar>(img: &Tensor<T>, degrees: f64) -> Tensor<T> {
    let (h, w, _) = dims(img);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    warp(img, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
    })
}

/// Centre crop-and-resize by `factor` (> 1 zooms in, < 1 zooms out with zero fill).
pub fn zoom<T: Scalar>(img: &Tensor<T>, factor: f64) -> Tensor<T> {
    let (h, w, _) = dims(img);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    warp(img, |y, x| (cy + (y - cy) / factor, cx + (x - cx) / factor))
}

/// Bilinear resize of an `[H, W, C]` image to `(out_h, out_w)`, aligning corners.
pub fn resize<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w, c) = dims(img);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let ratio = |n: usize, m: usize| if m > 1 { (n as f64 - 1.0) / (m as f64 - 1.0) } else { 0.0 };
    let (ry, rx) = (ratio(h, out_h), ratio(w, out_w));
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    for y in 0..out_h {
        for x in 0..out_w {
            let sy = (y as f64 * ry).min(h as f64 - 1.0);
            let sx = (x as f64 * rx).min(w as f64 - 1.0);
            sample(img, sy, sx, &mut out.data_mut()[(y * out_w + x) * c..][..c]);
        }
    }
    out
}

/// The original image followed by one variant per enabled op, each drawn
/// from an RNG seeded with `seed`.
pub fn augment<T: Scalar>(image: &AffectiveImage<T>, seed: u64, cfg: &AugmentConfig) -> Vec<AffectiveImage<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wrap = |pixels| AffectiveImage {
        pixels,
        source_video_id: image.source_video_id.clone(),
        k_used: image.k_used,
    };
    let mut out = vec![image.clone()];
    if cfg.flip {
        out.push(wrap(hflip(&image.pixels)));
    }
    if cfg.max_rotation_deg > 0.0 {
        let angle = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        out.push(wrap(rotate(&image.pixels, angle)));
    }
    if cfg.max_zoom > 0.0 {
        let factor = rng.gen_range(1.0 - cfg.max_zoom..=1.0 + cfg.max_zoom);
        out.push(wrap(zoom(&image.pixels, factor)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(&[h, w, 3], (0..h * w * 3).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
    }

    fn ami(pixels: Tensor<f64>) -> AffectiveImage<f64> {
        AffectiveImage { pixels, source_video_id: "v".into(), k_used: 5 }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = image(5, 7, 1);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = image(9, 6, 2);
        for (a, b) in rotate(&img, 0.0).data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        for (a, b) in zoom(&img, 1.0).data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let mut img = Tensor::<f64>::zeros(&[3, 3, 1]);
        img.data_mut()[0] = 1.0; // top-left
        let r = rotate(&img, 90.0);
        let hot: Vec<usize> = r.data().iter().enumerate().filter(|(_, &v)| v > 0.5).map(|(i, _)| i).collect();
        assert_eq!(hot.len(), 1);
        assert_ne!(hot[0], 0);
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let img = Tensor::<f64>::full(&[4, 6, 3], 2.5);
        let r = resize(&img, 9, 5);
        assert_eq!(r.shape(), &[9, 5, 3]);
        assert!(r.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn augmentation_count_and_determinism() {
        let a = ami(image(8, 8, 3));
        let cfg = AugmentConfig::default();
        let out = augment(&a, 42, &cfg);
        assert_eq!(out.len(), 1 + cfg.op_count());
        assert_eq!(out[0], a);
        assert_eq!(out, augment(&a, 42, &cfg));
        let only_flip = AugmentConfig { flip: true, max_rotation_deg: 0.0, max_zoom: 0.0 };
        assert_eq!(augment(&a, 1, &only_flip).len(), 2);
    }

    proptest! {
        #[test]
        fn shape_and_identity_preserved(h in 2usize..10, w in 2usize..10, seed in any::<u64>()) {
            let a = ami(image(h, w, seed));
            for out in augment(&a, seed, &AugmentConfig::default()) {
                prop_assert_eq!(out.pixels.shape(), a.pixels.shape());
                prop_assert_eq!(&out.source_video_id, &a.source_video_id);
                prop_assert!(out.pixels.data().iter().all(|v| v.is_finite()));
            }
        }
    }
}
