use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strides a detection head may sit at.
pub const VALID_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Declarative network description. Every field has a default; see
/// `configs/default.toml` for the documented schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Square input side in pixels; must be a multiple of 32.
    pub input_size: usize,
    /// Output channels of the stride-2 stem convolution.
    pub stem_width: usize,
    /// Output channels of backbone stages 1..4 (strides 4, 8, 16, 32).
    pub stage_widths: [usize; 4],
    /// PConv bottlenecks per stage.
    pub stage_repeats: [usize; 4],
    /// Partial-convolution ratio: the first `C / r` channels are convolved.
    pub pconv_ratio: usize,
    /// SE squeeze ratio.
    pub se_ratio: usize,
    pub sppf_k: usize,
    /// Sorted ascending, no duplicates.
    pub head_strides: Vec<usize>,
    pub include_p5: bool,
    pub num_classes: usize,
    /// Hidden width of every head's regression branch.
    pub head_reg_width: usize,
    /// Hidden width of every head's classification branch.
    pub head_cls_width: usize,
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: 640,
            stem_width: 16,
            stage_widths: [32, 64, 128, 256],
            stage_repeats: [1, 2, 2, 1],
            pconv_ratio: 4,
            se_ratio: 16,
            sppf_k: 5,
            head_strides: vec![4, 8, 16],
            include_p5: false,
            num_classes: 10,
            head_reg_width: 64,
            head_cls_width: 32,
            seed: 0,
        }
    }
}

const KNOWN_KEYS: [&str; 13] = [
    "input_size",
    "stem_width",
    "stage_widths",
    "stage_repeats",
    "pconv_ratio",
    "se_ratio",
    "sppf_k",
    "head_strides",
    "include_p5",
    "num_classes",
    "head_reg_width",
    "head_cls_width",
    "seed",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    input_size: Option<usize>,
    stem_width: Option<usize>,
    stage_widths: Option<[usize; 4]>,
    stage_repeats: Option<[usize; 4]>,
    pconv_ratio: Option<usize>,
    se_ratio: Option<usize>,
    sppf_k: Option<usize>,
    head_strides: Option<Vec<usize>>,
    include_p5: Option<bool>,
    num_classes: Option<usize>,
    head_reg_width: Option<usize>,
    head_cls_width: Option<usize>,
    seed: Option<u64>,
}

impl ArchConfig {
    /// Default configuration with the stride-32 head added.
    pub fn with_p5() -> Self {
        ArchConfig {
            include_p5: true,
            head_strides: vec![4, 8, 16, 32],
            ..Default::default()
        }
    }

    /// Parses a TOML document. Missing keys take their defaults; when
    /// `head_strides` is absent it follows `include_p5`. Unknown keys are
    /// rejected by name.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_owned()))?;
        if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        for (key, value) in &table {
            let raw = toml::Table::from_iter([(key.clone(), value.clone())]);
            raw.try_into::<RawConfig>()
                .map_err(|e| Error::config(key.clone(), e.message().trim().to_owned()))?;
        }
        let raw: RawConfig = table
            .try_into()
            .map_err(|e| Error::config("<document>", e.message().to_owned()))?;

        let d = ArchConfig::default();
        let include_p5 = raw.include_p5.unwrap_or(d.include_p5);
        let head_strides = raw.head_strides.unwrap_or_else(|| {
            if include_p5 {
                vec![4, 8, 16, 32]
            } else {
                d.head_strides.clone()
            }
        });
        let cfg = ArchConfig {
            input_size: raw.input_size.unwrap_or(d.input_size),
            stem_width: raw.stem_width.unwrap_or(d.stem_width),
            stage_widths: raw.stage_widths.unwrap_or(d.stage_widths),
            stage_repeats: raw.stage_repeats.unwrap_or(d.stage_repeats),
            pconv_ratio: raw.pconv_ratio.unwrap_or(d.pconv_ratio),
            se_ratio: raw.se_ratio.unwrap_or(d.se_ratio),
            sppf_k: raw.sppf_k.unwrap_or(d.sppf_k),
            head_strides,
            include_p5,
            num_classes: raw.num_classes.unwrap_or(d.num_classes),
            head_reg_width: raw.head_reg_width.unwrap_or(d.head_reg_width),
            head_cls_width: raw.head_cls_width.unwrap_or(d.head_cls_width),
            seed: raw.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Backbone stride of stage `i` (0-based): 4, 8, 16, 32.
    pub fn stage_stride(i: usize) -> usize {
        4 << i
    }

    /// Width of the backbone feature at a pyramid stride.
    pub fn width_at_stride(&self, stride: usize) -> Option<usize> {
        (0..4)
            .find(|&i| Self::stage_stride(i) == stride)
            .map(|i| self.stage_widths[i])
    }

    /// Strides of the top-down fusion levels, coarsest first (16, 8, 4 by
    /// default). Empty when only the stride-32 head is requested.
    pub fn neck_strides(&self) -> Vec<usize> {
        let finest = self.head_strides.iter().copied().filter(|&s| s < 32).min();
        match finest {
            Some(f) => [16, 8, 4].into_iter().filter(|&s| s >= f).collect(),
            None => Vec::new(),
        }
    }

    pub fn head_channels(&self) -> usize {
        4 + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("input_size", self.input_size)?;
        if !self.input_size.is_multiple_of(32) {
            return Err(Error::config(
                "input_size",
                format!("{} is not a multiple of 32", self.input_size),
            ));
        }
        positive("stem_width", self.stem_width)?;
        positive("pconv_ratio", self.pconv_ratio)?;
        positive("se_ratio", self.se_ratio)?;
        positive("num_classes", self.num_classes)?;
        positive("head_reg_width", self.head_reg_width)?;
        positive("head_cls_width", self.head_cls_width)?;
        for (i, (&w, &n)) in self
            .stage_widths
            .iter()
            .zip(&self.stage_repeats)
            .enumerate()
        {
            if n == 0 {
                return Err(Error::config(
                    format!("stage_repeats[{i}]"),
                    "needs at least one bottleneck",
                ));
            }
            // The C2f split hands w/2 channels to each PConv bottleneck.
            if w < 2 || w % 2 != 0 || (w / 2) % self.pconv_ratio != 0 {
                return Err(Error::config(
                    format!("stage_widths[{i}]"),
                    format!(
                        "{w} must be even with w/2 divisible by pconv_ratio {}",
                        self.pconv_ratio
                    ),
                ));
            }
        }
        if self.sppf_k.is_multiple_of(2) {
            return Err(Error::config(
                "sppf_k",
                format!("{} is not odd", self.sppf_k),
            ));
        }
        if self.head_strides.is_empty() {
            return Err(Error::config(
                "head_strides",
                "at least one head is required",
            ));
        }
        let mut sorted = self.head_strides.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.head_strides {
            return Err(Error::config(
                "head_strides",
                "must be strictly ascending without duplicates",
            ));
        }
        if let Some(bad) = self
            .head_strides
            .iter()
            .find(|s| !VALID_STRIDES.contains(s))
        {
            return Err(Error::config(
                "head_strides",
                format!("{bad} is not one of {VALID_STRIDES:?}"),
            ));
        }
        if self.head_strides.contains(&32) != self.include_p5 {
            return Err(Error::config(
                "include_p5",
                "stride 32 must be in head_strides exactly when include_p5 is set",
            ));
        }
        for stride in self.neck_strides() {
            let w = self
                .width_at_stride(stride)
                .expect("neck stride is a stage stride");
            if !w.is_multiple_of(self.se_ratio) {
                return Err(Error::config(
                    "se_ratio",
                    format!(
                        "neck width {w} at stride {stride} is not divisible by {}",
                        self.se_ratio
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ArchConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.neck_strides(), vec![16, 8, 4]);
        ArchConfig::with_p5().validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(
            ArchConfig::from_toml_str("").unwrap(),
            ArchConfig::default()
        );
    }

    #[test]
    fn include_p5_adds_stride_32() {
        let cfg = ArchConfig::from_toml_str("include_p5 = true").unwrap();
        assert_eq!(cfg.head_strides, vec![4, 8, 16, 32]);
    }

    #[test]
    fn misspelled_key_is_named() {
        match ArchConfig::from_toml_str("stage_widht = [1, 2, 3, 4]") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "stage_widht"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_error_names_key() {
        match ArchConfig::from_toml_str("se_ratio = \"sixteen\"") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "se_ratio"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_failures_name_fields() {
        let field = |text: &str| match ArchConfig::from_toml_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{text}: unexpected {other:?}"),
        };
        assert_eq!(field("input_size = 100"), "input_size");
        assert_eq!(
            field("stage_widths = [32, 64, 128, 250]"),
            "stage_widths[3]"
        );
        assert_eq!(field("se_ratio = 48"), "se_ratio");
        assert_eq!(field("head_strides = [4, 8, 16, 32]"), "include_p5");
        assert_eq!(field("head_strides = [4, 12]"), "head_strides");
        assert_eq!(field("sppf_k = 4"), "sppf_k");
        assert_eq!(field("stage_repeats = [1, 0, 2, 1]"), "stage_repeats[1]");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ArchConfig::with_p5();
        assert_eq!(
            ArchConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
            cfg
        );
    }
}
