//! Affective-motion imaging: collapses a clip into one rank-weighted image.
//!
//! Each frame `i` of a `k`-frame clip gets a weight that depends only on `i`
//! and `k`. With `LR[j] = (2j - k) / j`, the default rule assigns
//! `Fw(i) = sum_{j=i..k} LR[j]`; the motion image is the frame scaled by its
//! weight and the affective-motion image (AMI) is the sum of all motion images.

mod container;
mod frames;

pub use container::{decode_ami1, encode_ami1, load_ami1, save_ami1, AMI1_MAGIC};
pub use frames::{list_frame_files, load_frame_sequence, load_frames, save_ami_png};

use std::fmt;
use std::str::FromStr;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

/// How the per-frame weights accumulate the ranking coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `Fw(i) = sum_{j=i..k} LR[j]`; the last frame keeps weight `LR[k] = 1`.
    #[default]
    SuffixSum,
    /// `Fw(i) = sum_{j=1..k-i} LR[j]`; the last frame gets weight 0.
    Literal,
}

impl WeightRule {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightRule::SuffixSum => "suffix_sum",
            WeightRule::Literal => "literal",
        }
    }
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "suffix_sum" => Ok(WeightRule::SuffixSum),
            "literal" => Ok(WeightRule::Literal),
            other => Err(Error::invalid(format!(
                "unknown weight rule {other:?} (expected suffix_sum or literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    weights: Vec<T>,
}

impl<T: Copy> WeightVector<T> {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

/// Ranking coefficient `LR[j] = (2j - k) / j` for 1-based `j`.
fn rank_coefficient<T: Num + FromPrimitive>(j: usize, k: usize) -> T {
    let num = T::from_i64(2 * j as i64 - k as i64).expect("rank numerator representable");
    let den = T::from_usize(j).expect("rank denominator representable");
    num / den
}

/// Frame weights under the default [`WeightRule::SuffixSum`].
pub fn compute_frame_weights<T: Num + FromPrimitive + Copy>(k: usize) -> Result<WeightVector<T>> {
    compute_frame_weights_with(k, WeightRule::SuffixSum)
}

/// Frame weights for a clip of `k` frames. Works for any exact or floating
/// numeric type; the inner sum always runs in ascending `j`.
pub fn compute_frame_weights_with<T: Num + FromPrimitive + Copy>(
    k: usize,
    rule: WeightRule,
) -> Result<WeightVector<T>> {
    if k == 0 {
        return Err(Error::invalid("frame count k must be at least 1"));
    }
    let weights = (1..=k)
        .map(|i| {
            let range = match rule {
                WeightRule::SuffixSum => i..=k,
                WeightRule::Literal => 1..=k - i,
            };
            range.fold(T::zero(), |acc, j| acc + rank_coefficient::<T>(j, k))
        })
        .collect();
    Ok(WeightVector { weights })
}

/// An ordered clip of equal-shaped `[H, W, 3]` frames with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FrameSequence<T> {
    frames: Vec<Tensor<T>>,
    pub video_id: String,
    pub subject_id: String,
    pub label: String,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn new(
        frames: Vec<Tensor<T>>,
        video_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("a frame sequence needs at least one frame"))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::invalid(format!("frames must be [H, W, 3], got {shape:?}")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "frame {i} has shape {:?}, expected {shape:?}",
                    f.shape()
                )));
            }
            if f.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                return Err(Error::invalid(format!("frame {i} has pixels outside [0, 1]")));
            }
        }
        Ok(FrameSequence {
            frames,
            video_id: video_id.into(),
            subject_id: subject_id.into(),
            label: label.into(),
        })
    }

    pub fn k(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn frame_shape(&self) -> &[usize] {
        self.frames[0].shape()
    }
}

/// Rank-weighted summary of a clip; same shape as its frames, unbounded range.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectiveImage<T> {
    pub pixels: Tensor<T>,
    pub source_video_id: String,
    pub k_used: usize,
}

impl<T: Scalar> AffectiveImage<T> {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// `MI_i = frame_i * Fw(i)` for every frame.
pub fn motion_images<T: Scalar>(seq: &FrameSequence<T>, w: &WeightVector<T>) -> Result<Vec<Tensor<T>>> {
    if w.k() != seq.k() {
        return Err(Error::invalid(format!(
            "{} weights for a clip of {} frames",
            w.k(),
            seq.k()
        )));
    }
    Ok(seq
        .frames
        .iter()
        .zip(w.weights())
        .map(|(f, &wt)| f.scale(wt))
        .collect())
}

pub fn compose_ami<T: Scalar>(seq: &FrameSequence<T>) -> Result<AffectiveImage<T>> {
    compose_ami_with(seq, WeightRule::SuffixSum)
}

/// Pixelwise sum of the motion images; no normalization.
pub fn compose_ami_with<T: Scalar>(seq: &FrameSequence<T>, rule: WeightRule) -> Result<AffectiveImage<T>> {
    let w = compute_frame_weights_with::<T>(seq.k(), rule)?;
    let mut acc = Tensor::zeros(seq.frame_shape());
    for mi in motion_images(seq, &w)? {
        acc.add_assign(&mi)?;
    }
    acc.check_finite("affective-motion image")?;
    Ok(AffectiveImage {
        pixels: acc,
        source_video_id: seq.video_id.clone(),
        k_used: seq.k(),
    })
}

/// Global min-max rescale to `0..=255` with half-up rounding.
/// A constant image maps to all zeros.
pub fn normalize_to_u8<T: Scalar>(pixels: &Tensor<T>) -> Vec<u8> {
    let (lo, hi) = pixels.min_max();
    let range = hi - lo;
    if !(range > T::zero()) {
        return vec![0; pixels.len()];
    }
    let full = T::lit(255.0);
    let half = T::lit(0.5);
    pixels
        .data()
        .iter()
        .map(|&v| {
            let scaled = ((v - lo) / range * full + half).floor();
            scaled.max(T::zero()).min(full).to_u8().unwrap_or(0)
        })
        .collect()
}

/// 8-bit `[H, W, 3]` rendering of an AMI for inspection.
pub fn normalize_for_export<T: Scalar>(img: &AffectiveImage<T>) -> Vec<u8> {
    normalize_to_u8(&img.pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    /// Brute-force weights in exact rationals, written out independently.
    fn oracle(k: i64, literal: bool) -> Vec<Ratio<i64>> {
        let lr: Vec<Ratio<i64>> = (1..=k).map(|j| Ratio::new(2 * j - k, j)).collect();
        (1..=k)
            .map(|i| {
                let mut s = Ratio::from_integer(0);
                for j in 1..=k {
                    let inside = if literal { j <= k - i } else { j >= i };
                    if inside {
                        s += lr[(j - 1) as usize];
                    }
                }
                s
            })
            .collect()
    }

    fn constant_seq(k: usize, h: usize, w: usize, c: f64) -> FrameSequence<f64> {
        FrameSequence::new(vec![Tensor::full(&[h, w, 3], c); k], "v", "s", "l").unwrap()
    }

    #[test]
    fn small_weight_vectors() {
        assert_eq!(compute_frame_weights::<f64>(1).unwrap().weights(), &[1.0]);
        assert_eq!(compute_frame_weights::<f64>(2).unwrap().weights(), &[1.0, 1.0]);
        assert_eq!(compute_frame_weights::<f64>(3).unwrap().weights(), &[0.5, 1.5, 1.0]);
        assert!(compute_frame_weights::<f64>(0).is_err());
    }

    #[test]
    fn weights_match_rational_oracle() {
        for k in 1..=12usize {
            for (rule, literal) in [(WeightRule::SuffixSum, false), (WeightRule::Literal, true)] {
                let exact = compute_frame_weights_with::<Ratio<i64>>(k, rule).unwrap();
                assert_eq!(exact.weights(), oracle(k as i64, literal).as_slice());
                let float = compute_frame_weights_with::<f64>(k, rule).unwrap();
                for (f, r) in float.weights().iter().zip(exact.weights()) {
                    let r = *r.numer() as f64 / *r.denom() as f64;
                    assert!((f - r).abs() <= 1e-12 * r.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn literal_rule_zeroes_last_frame() {
        let w = compute_frame_weights_with::<f64>(5, WeightRule::Literal).unwrap();
        assert_eq!(*w.weights().last().unwrap(), 0.0);
    }

    #[test]
    fn weight_rule_parses() {
        assert_eq!("literal".parse::<WeightRule>().unwrap(), WeightRule::Literal);
        assert_eq!("suffix_sum".parse::<WeightRule>().unwrap(), WeightRule::SuffixSum);
        assert!("other".parse::<WeightRule>().is_err());
    }

    #[test]
    fn motion_image_examples() {
        let seq = constant_seq(3, 2, 2, 0.2);
        let w = compute_frame_weights::<f64>(3).unwrap();
        let mis = motion_images(&seq, &w).unwrap();
        for (mi, expect) in mis.iter().zip([0.1, 0.3, 0.2]) {
            assert!(mi.data().iter().all(|v| (v - expect).abs() < 1e-15));
        }
        let one = constant_seq(1, 2, 2, 1.0);
        let half = WeightVector { weights: vec![0.5] };
        assert!(motion_images(&one, &half).unwrap()[0].data().iter().all(|&v| v == 0.5));
        let ident = WeightVector { weights: vec![1.0; 3] };
        let mis = motion_images(&seq, &ident).unwrap();
        assert_eq!(mis.as_slice(), seq.frames());
        assert!(motion_images(&seq, &half).is_err());
    }

    #[test]
    fn single_frame_ami_is_the_frame() {
        let f = Tensor::from_vec(&[1, 2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let seq = FrameSequence::new(vec![f.clone()], "v", "s", "l").unwrap();
        let ami = compose_ami(&seq).unwrap();
        assert_eq!(ami.pixels, f);
        assert_eq!(ami.k_used, 1);
        assert_eq!(ami.source_video_id, "v");
    }

    #[test]
    fn constant_video_law() {
        let ami = compose_ami(&constant_seq(3, 4, 5, 0.25)).unwrap();
        assert!(ami.pixels.data().iter().all(|v| (v - 0.75).abs() < 1e-15));
        assert_eq!(ami.pixels.shape(), &[4, 5, 3]);
    }

    #[test]
    fn frame_sequence_validation() {
        assert!(FrameSequence::<f64>::new(vec![], "v", "s", "l").is_err());
        let a = Tensor::<f64>::zeros(&[2, 2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3, 3]);
        assert!(FrameSequence::new(vec![a.clone(), b], "v", "s", "l").is_err());
        assert!(FrameSequence::new(vec![Tensor::<f64>::full(&[2, 2, 3], 1.5)], "v", "s", "l").is_err());
        assert!(FrameSequence::new(vec![Tensor::<f64>::zeros(&[2, 2, 1])], "v", "s", "l").is_err());
    }

    #[test]
    fn export_normalization() {
        let px = Tensor::<f64>::from_vec(&[1, 1, 3], vec![-1.0, 1.0, 0.0]).unwrap();
        assert_eq!(normalize_to_u8(&px), vec![0, 255, 128]);
        assert_eq!(normalize_to_u8(&Tensor::<f64>::full(&[2, 2, 3], 4.2)), vec![0; 12]);
        let ramp: Vec<f64> = (0..=255).map(f64::from).collect();
        let px = Tensor::from_vec(&[1, 256, 1], ramp).unwrap();
        assert_eq!(normalize_to_u8(&px), (0..=255u8).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn ami_is_linear(seed in any::<u64>(), k in 1usize..6, a in 0.0f64..0.5, b in 0.0f64..0.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || -> Vec<Tensor<f64>> {
                (0..k).map(|_| Tensor::from_vec(&[3, 2, 3], (0..18).map(|_| rng.gen::<f64>()).collect()).unwrap()).collect()
            };
            let v = mk();
            let w = mk();
            let combo: Vec<Tensor<f64>> = v
                .iter()
                .zip(&w)
                .map(|(x, y)| {
                    let mut t = x.scale(a);
                    t.add_assign(&y.scale(b)).unwrap();
                    t
                })
                .collect();
            let ami = |frames: Vec<Tensor<f64>>| compose_ami(&FrameSequence::new(frames, "v", "s", "l").unwrap()).unwrap().pixels;
            let (ami_v, ami_w, ami_c) = (ami(v), ami(w), ami(combo));
            for ((c, &x), &y) in ami_c.data().iter().zip(ami_v.data()).zip(ami_w.data()) {
                let expect = a * x + b * y;
                prop_assert!((c - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            }
        }

        #[test]
        fn weights_ignore_pixels(k in 1usize..20) {
            let w1 = compute_frame_weights::<f64>(k).unwrap();
            let w2 = compute_frame_weights::<f64>(k).unwrap();
            prop_assert_eq!(w1.weights().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            w2.weights().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let total: f64 = w1.weights().iter().sum();
            prop_assert!((total - k as f64).abs() < 1e-9 * k as f64);
        }
    }
}
