use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variants: the full network and its six ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    AffectiveNet,
    /// Encapsulation kernels (5, 7).
    Ks1,
    /// Encapsulation kernels (7, 11).
    Ks2,
    /// The two 32-wide FC layers chained serially from Fm3.
    Lfc,
    /// No micro-feature-learning head: one FC from Fm3 to the classes.
    WoMfl,
    /// Every branch stem uses a 3x3 kernel.
    All3x3,
    /// The refining conv of every encapsulation block is 1x1.
    All1x1,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::AffectiveNet,
        Variant::Ks1,
        Variant::Ks2,
        Variant::Lfc,
        Variant::WoMfl,
        Variant::All3x3,
        Variant::All1x1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AffectiveNet => "affectivenet",
            Variant::Ks1 => "ks1",
            Variant::Ks2 => "ks2",
            Variant::Lfc => "lfc",
            Variant::WoMfl => "womfl",
            Variant::All3x3 => "all3x3",
            Variant::All1x1 => "all1x1",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// How the classifier head is wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Parallel FC taps on Fm2 and Fm3, concatenated and batch-normalized.
    Mfl,
    /// Two FC layers chained from Fm3.
    Serial,
    /// Single FC from Fm3.
    Direct,
}

pub const STEM_DEPTH: usize = 16;
pub const PARALLEL_DEPTH: usize = 32;
pub const REFINE_DEPTH: usize = 64;
pub const FM2_DEPTH: usize = 184;
pub const MID_DEPTH: usize = 128;
pub const FM3_DEPTH: usize = 196;
pub const TAP_WIDTH: usize = 32;

pub const DEFAULT_BRANCH_KERNELS: [usize; 4] = [3, 5, 7, 11];
pub const DEFAULT_ENCAP_KERNELS: (usize, usize) = (3, 5);
pub const DEFAULT_INPUT_SIZE: (usize, usize) = (112, 112);
pub const DEFAULT_CLASS_COUNT: usize = 4;

/// Declarative network description; serialized as the JSON model config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub input_size: (usize, usize),
    /// Stem kernel size of each multi-scale branch.
    pub kernels: Vec<usize>,
    pub encapfeat_kernels: (usize, usize),
    pub class_count: usize,
    pub seed: u64,
    /// Every channel depth and FC width is divided by this (rounded up).
    pub depth_divisor: usize,
}

#[derive(Deserialize)]
struct RawSpec {
    variant: Option<Variant>,
    input_size: Option<(usize, usize)>,
    kernels: Option<Vec<usize>>,
    encapfeat_kernels: Option<(usize, usize)>,
    class_count: Option<usize>,
    seed: Option<u64>,
    depth_divisor: Option<usize>,
}

impl<'de> Deserialize<'de> for NetworkSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSpec::deserialize(d)?;
        let base = NetworkSpec::variant(raw.variant.unwrap_or(Variant::AffectiveNet));
        Ok(NetworkSpec {
            input_size: raw.input_size.unwrap_or(base.input_size),
            kernels: raw.kernels.unwrap_or(base.kernels.clone()),
            encapfeat_kernels: raw.encapfeat_kernels.unwrap_or(base.encapfeat_kernels),
            class_count: raw.class_count.unwrap_or(base.class_count),
            seed: raw.seed.unwrap_or(base.seed),
            depth_divisor: raw.depth_divisor.unwrap_or(base.depth_divisor),
            variant: base.variant,
        })
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::variant(Variant::AffectiveNet)
    }
}

impl NetworkSpec {
    /// Default spec for `variant` with its kernel choices filled in.
    pub fn variant(variant: Variant) -> Self {
        let kernels = match variant {
            Variant::All3x3 => vec![3; 4],
            _ => DEFAULT_BRANCH_KERNELS.to_vec(),
        };
        let encapfeat_kernels = match variant {
            Variant::Ks1 => (5, 7),
            Variant::Ks2 => (7, 11),
            _ => DEFAULT_ENCAP_KERNELS,
        };
        NetworkSpec {
            variant,
            input_size: DEFAULT_INPUT_SIZE,
            kernels,
            encapfeat_kernels,
            class_count: DEFAULT_CLASS_COUNT,
            seed: 0,
            depth_divisor: 1,
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn with_depth_divisor(mut self, divisor: usize) -> Self {
        self.depth_divisor = divisor;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_class_count(mut self, classes: usize) -> Self {
        self.class_count = classes;
        self
    }

    pub fn head(&self) -> HeadKind {
        match self.variant {
            Variant::Lfc => HeadKind::Serial,
            Variant::WoMfl => HeadKind::Direct,
            _ => HeadKind::Mfl,
        }
    }

    pub fn refine_kernel(&self) -> usize {
        match self.variant {
            Variant::All1x1 => 1,
            _ => 3,
        }
    }

    /// A nominal depth after applying `depth_divisor`.
    pub fn depth(&self, nominal: usize) -> usize {
        nominal.div_ceil(self.depth_divisor.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::invalid("at least one branch kernel is required"));
        }
        let (a, b) = self.encapfeat_kernels;
        for k in self.kernels.iter().copied().chain([a, b]) {
            if k == 0 || k % 2 == 0 {
                return Err(Error::invalid(format!("kernel size {k} must be odd and >= 1")));
            }
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(Error::invalid("input size must be positive"));
        }
        if self.class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        if self.depth_divisor == 0 {
            return Err(Error::invalid("depth_divisor must be at least 1"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_defaults() {
        assert_eq!(NetworkSpec::variant(Variant::Ks2).encapfeat_kernels, (7, 11));
        assert_eq!(NetworkSpec::variant(Variant::Ks1).encapfeat_kernels, (5, 7));
        assert_eq!(NetworkSpec::variant(Variant::All3x3).kernels, vec![3, 3, 3, 3]);
        assert_eq!(NetworkSpec::variant(Variant::All1x1).refine_kernel(), 1);
        assert_eq!(NetworkSpec::default().kernels, vec![3, 5, 7, 11]);
    }

    #[test]
    fn json_fills_variant_defaults() {
        let s = NetworkSpec::from_json(r#"{"variant": "ks2", "seed": 7}"#).unwrap();
        assert_eq!(s.encapfeat_kernels, (7, 11));
        assert_eq!(s.input_size, (112, 112));
        assert_eq!(s.seed, 7);
        let back = NetworkSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(NetworkSpec::from_json(r#"{"kernels": [3, 4]}"#).is_err());
        assert!(NetworkSpec::from_json(r#"{"variant": "nope"}"#).is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn depth_divisor_rounds_up() {
        let s = NetworkSpec::default().with_depth_divisor(8);
        assert_eq!(s.depth(FM3_DEPTH), 25);
        assert_eq!(s.depth(STEM_DEPTH), 2);
    }
}
