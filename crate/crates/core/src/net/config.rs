use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 3×256×256 input, stages [256, 512, 1024, 2048] repeated [3, 4, 6, 3].
    Paper,
    /// 1×64×64 input, stages [16, 32, 64, 128] repeated once each.
    Tiny,
    Custom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
            Preset::Custom => "custom",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected paper, tiny or custom)"
            ))),
        }
    }
}

/// Complete architectural description of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub preset: Preset,
    pub in_channels: usize,
    pub input_size: usize,
    /// Output channels of the three stem convolutions.
    pub stem_widths: [usize; 3],
    /// Output channels of each stage; bottleneck width is a quarter of it.
    pub stage_widths: [usize; 4],
    pub repeats: [usize; 4],
    pub num_classes: usize,
    pub sa_enabled: bool,
    pub radix: usize,
    pub cardinality: usize,
    pub reduction: usize,
    pub sa_kernel: usize,
}

impl NetworkConfig {
    pub fn paper() -> Self {
        NetworkConfig {
            preset: Preset::Paper,
            in_channels: 3,
            input_size: 256,
            stem_widths: [32, 32, 64],
            stage_widths: [256, 512, 1024, 2048],
            repeats: [3, 4, 6, 3],
            num_classes: 2,
            sa_enabled: true,
            radix: 2,
            cardinality: 1,
            reduction: 4,
            sa_kernel: 7,
        }
    }

    pub fn tiny() -> Self {
        NetworkConfig {
            preset: Preset::Tiny,
            in_channels: 1,
            input_size: 64,
            stem_widths: [8, 8, 8],
            stage_widths: [16, 32, 64, 128],
            repeats: [1, 1, 1, 1],
            ..Self::paper()
        }
    }

    pub fn from_preset(preset: Preset) -> Result<Self> {
        match preset {
            Preset::Paper => Ok(Self::paper()),
            Preset::Tiny => Ok(Self::tiny()),
            Preset::Custom => Err(Error::Config("the custom preset needs explicit fields".into())),
        }
    }

    pub fn with_sa(mut self, enabled: bool) -> Self {
        self.sa_enabled = enabled;
        self
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    pub fn bottleneck_width(&self, stage: usize) -> usize {
        self.stage_widths[stage] / 4
    }

    pub fn num_bottlenecks(&self) -> usize {
        self.repeats.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("network config: {m}")));
        if self.in_channels == 0 || self.num_classes == 0 {
            return bad("in_channels and num_classes must be >= 1".into());
        }
        if self.stem_widths.contains(&0) {
            return bad("stem widths must be >= 1".into());
        }
        if self.repeats.contains(&0) {
            return bad("every stage needs at least one bottleneck".into());
        }
        if self.radix == 0 || self.cardinality == 0 || self.reduction == 0 {
            return bad("radix, cardinality and reduction must be >= 1".into());
        }
        if self.sa_kernel.is_multiple_of(2) {
            return bad(format!("sa_kernel {} must be odd", self.sa_kernel));
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w % 4 != 0 {
                return bad(format!("stage {} width {w} must be divisible by 4", i + 1));
            }
            let width = w / 4;
            if width % (self.radix * self.cardinality) != 0 {
                return bad(format!(
                    "stage {} bottleneck width {width} must be divisible by radix*cardinality = {}",
                    i + 1,
                    self.radix * self.cardinality
                ));
            }
        }
        // Stem halves twice and stages 2-4 halve once each.
        let mut s = self.input_size;
        for _ in 0..5 {
            if s < 2 {
                return bad(format!(
                    "input size {} is too small for the stride plan",
                    self.input_size
                ));
            }
            s = (s - 1) / 2 + 1;
        }
        Ok(())
    }

    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("preset".into(), self.preset.to_string()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("input_size".into(), self.input_size.to_string()),
            ("stem_widths".into(), list(&self.stem_widths)),
            ("stage_widths".into(), list(&self.stage_widths)),
            ("repeats".into(), list(&self.repeats)),
            ("num_classes".into(), self.num_classes.to_string()),
            ("sa_enabled".into(), self.sa_enabled.to_string()),
            ("radix".into(), self.radix.to_string()),
            ("cardinality".into(), self.cardinality.to_string()),
            ("reduction".into(), self.reduction.to_string()),
            ("sa_kernel".into(), self.sa_kernel.to_string()),
        ]
    }

    pub const KEYS: [&'static str; 12] = [
        "preset",
        "in_channels",
        "input_size",
        "stem_widths",
        "stage_widths",
        "repeats",
        "num_classes",
        "sa_enabled",
        "radix",
        "cardinality",
        "reduction",
        "sa_kernel",
    ];

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("config key '{k}' missing")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("config key '{k}' is not an integer")))
        };
        fn list<const N: usize>(k: &str, v: &str) -> Result<[usize; N]> {
            let parsed: Vec<usize> = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("config key '{k}' is not an integer list")))?;
            parsed
                .try_into()
                .map_err(|_| Error::Format(format!("config key '{k}' needs {N} entries")))
        }
        let sa_enabled = match get("sa_enabled")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Format(format!("sa_enabled '{other}' is not a boolean"))),
        };
        let cfg = NetworkConfig {
            preset: get("preset")?.parse()?,
            in_channels: num("in_channels")?,
            input_size: num("input_size")?,
            stem_widths: list("stem_widths", get("stem_widths")?)?,
            stage_widths: list("stage_widths", get("stage_widths")?)?,
            repeats: list("repeats", get("repeats")?)?,
            num_classes: num("num_classes")?,
            sa_enabled,
            radix: num("radix")?,
            cardinality: num("cardinality")?,
            reduction: num("reduction")?,
            sa_kernel: num("sa_kernel")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_their_definitions() {
        let p = NetworkConfig::paper();
        assert_eq!(p.repeats, [3, 4, 6, 3]);
        assert_eq!(p.stage_widths, [256, 512, 1024, 2048]);
        assert_eq!((p.in_channels, p.input_size), (3, 256));
        assert_eq!(p.num_bottlenecks(), 16);
        let t = NetworkConfig::tiny();
        assert_eq!(t.repeats, [1, 1, 1, 1]);
        assert_eq!(t.stage_widths, [16, 32, 64, 128]);
        assert_eq!((t.in_channels, t.input_size), (1, 64));
        p.validate().unwrap();
        t.validate().unwrap();
    }

    #[test]
    fn kv_round_trip_and_validation() {
        let t = NetworkConfig::tiny().with_sa(false);
        let kv: BTreeMap<_, _> = t.to_kv().into_iter().collect();
        assert_eq!(NetworkConfig::from_kv(&kv).unwrap(), t);
        let mut bad = kv.clone();
        bad.insert("stage_widths".into(), "16,32,64".into());
        assert!(NetworkConfig::from_kv(&bad).is_err());
        let mut odd = NetworkConfig::tiny();
        odd.stage_widths[0] = 12; // width 3 is not divisible by radix 2
        assert!(odd.validate().is_err());
    }
}
