//! Generation config, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSettings {
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(rename = "M", default = "default_m")]
    pub atoms: usize,
    #[serde(rename = "K", default = "default_k")]
    pub maps: usize,
    #[serde(default = "default_depth")]
    pub cascade_depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dict_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dict_seed: Option<u64>,
    #[serde(default)]
    pub per_atom_theta: bool,
}

fn default_p() -> usize {
    11
}
fn default_m() -> usize {
    30
}
fn default_k() -> usize {
    6
}
fn default_depth() -> usize {
    3
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            p: default_p(),
            atoms: default_m(),
            maps: default_k(),
            cascade_depth: default_depth(),
            dict_path: None,
            dict_seed: None,
            per_atom_theta: false,
        }
    }
}

/// Rain-map network settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSettings {
    #[serde(default = "default_map_blocks")]
    pub blocks: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_seed: Option<u64>,
    /// Scale of the seeded output projection; the noise standard deviation
    /// seen by the threshold.
    #[serde(default = "default_map_gain")]
    pub output_gain: f64,
    /// Multiplier on the thresholded map; sets rain brightness without
    /// changing sparsity.
    #[serde(default = "default_map_intensity")]
    pub intensity: f64,
}

fn default_map_blocks() -> usize {
    2
}
fn default_hidden() -> usize {
    16
}
fn default_map_gain() -> f64 {
    0.5
}
fn default_map_intensity() -> f64 {
    0.25
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            blocks: default_map_blocks(),
            hidden: default_hidden(),
            weights_path: None,
            weights_seed: None,
            output_gain: default_map_gain(),
            intensity: default_map_intensity(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    #[default]
    Additive,
    Rotconv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeSettings {
    #[serde(default)]
    pub mode: MergeMode,
    #[serde(default = "default_merge_blocks")]
    pub blocks: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_seed: Option<u64>,
}

fn default_merge_blocks() -> usize {
    4
}

impl Default for MergeSettings {
    fn default() -> Self {
        Self {
            mode: MergeMode::Additive,
            blocks: default_merge_blocks(),
            hidden: default_hidden(),
            weights_path: None,
            weights_seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitSettings {
    #[serde(default = "yes")]
    pub rain_layer: bool,
    #[serde(default)]
    pub rain_map: bool,
    #[serde(default)]
    pub montage: bool,
    /// Score each image with the rotatable TV at its sampled angle.
    #[serde(default = "yes")]
    pub rot_tv: bool,
    /// Write the full mixing weights into each sidecar.
    #[serde(default)]
    pub alpha: bool,
}

fn yes() -> bool {
    true
}

impl Default for EmitSettings {
    fn default() -> Self {
        Self {
            rain_layer: true,
            rain_map: false,
            montage: false,
            rot_tv: true,
            alpha: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backgrounds_dir: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Square patch side cropped from each background; full image when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<usize>,
    #[serde(default)]
    pub kernel: KernelSettings,
    #[serde(default)]
    pub factors: FactorConfig,
    #[serde(default)]
    pub map: MapSettings,
    #[serde(default)]
    pub merge: MergeSettings,
    #[serde(default)]
    pub emit: EmitSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backgrounds_dir: None,
            output_dir: default_output(),
            count: 0,
            seed: 0,
            crop: None,
            kernel: KernelSettings::default(),
            factors: FactorConfig::default(),
            map: MapSettings::default(),
            merge: MergeSettings::default(),
            emit: EmitSettings::default(),
        }
    }
}

impl GenerationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = &mut self.backgrounds_dir {
            fix(p);
        }
        fix(&mut self.output_dir);
        for p in [
            &mut self.kernel.dict_path,
            &mut self.map.weights_path,
            &mut self.merge.weights_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let k = &self.kernel;
        if k.p == 0 || k.p % 2 == 0 {
            return bad(format!("kernel.p must be odd and positive, got {}", k.p));
        }
        if k.atoms == 0 || k.maps == 0 || k.cascade_depth == 0 {
            return bad("kernel.M, kernel.K and kernel.cascade_depth must be positive".into());
        }
        if k.dict_path.is_some() && k.dict_seed.is_some() {
            return bad("kernel: give dict_path or dict_seed, not both".into());
        }
        if self.map.blocks == 0 || self.map.hidden == 0 {
            return bad("map.blocks and map.hidden must be positive".into());
        }
        if !self.map.output_gain.is_finite() {
            return bad("map.output_gain must be finite".into());
        }
        if !(self.map.intensity.is_finite() && self.map.intensity >= 0.0) {
            return bad("map.intensity must be finite and non-negative".into());
        }
        if self.map.weights_path.is_some() && self.map.weights_seed.is_some() {
            return bad("map: give weights_path or weights_seed, not both".into());
        }
        if self.merge.weights_path.is_some() && self.merge.weights_seed.is_some() {
            return bad("merge: give weights_path or weights_seed, not both".into());
        }
        if self.merge.mode == MergeMode::Rotconv && (self.merge.blocks == 0 || self.merge.hidden == 0) {
            return bad("merge.blocks and merge.hidden must be positive".into());
        }
        if self.crop == Some(0) {
            return bad("crop must be positive".into());
        }
        self.factors.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = &self.backgrounds_dir {
            if dir == &self.output_dir {
                return bad("backgrounds_dir and output_dir must differ".into());
            }
            if self.count > 0 && !dir.is_dir() {
                return bad(format!("backgrounds_dir {} is not a directory", dir.display()));
            }
        }
        for p in [&k.dict_path, &self.map.weights_path, &self.merge.weights_path]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_schema_parses() {
        let cfg = GenerationConfig::from_toml(
            r#"
backgrounds_dir = "bg"
output_dir = "out"
count = 8
seed = 42

[kernel]
p = 7
M = 4
K = 2
cascade_depth = 2
dict_seed = 3

[factors]
theta = { kind = "constant", value = 10.0 }

[map]
blocks = 1
hidden = 8
weights_seed = 5

[merge]
mode = "rotconv"
weights_seed = 6

[emit]
rain_layer = true
rain_map = true
montage = false
"#,
        )
        .unwrap();
        assert_eq!(cfg.kernel.atoms, 4);
        assert_eq!(cfg.kernel.maps, 2);
        assert_eq!(cfg.merge.mode, MergeMode::Rotconv);
        assert!(cfg.emit.rain_map);
        let back = GenerationConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_follow_documented_values() {
        let cfg = GenerationConfig::from_toml("").unwrap();
        assert_eq!((cfg.kernel.p, cfg.kernel.atoms, cfg.kernel.maps), (11, 30, 6));
        assert_eq!(cfg.kernel.cascade_depth, 3);
        assert_eq!((cfg.map.blocks, cfg.merge.blocks, cfg.map.hidden), (2, 4, 16));
        assert_eq!(cfg.merge.mode, MergeMode::Additive);
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "[kernel]\np = 4",
            "[kernel]\nM = 0",
            "[kernel]\ndict_seed = 1\ndict_path = \"x\"",
            "[map]\nweights_path = \"/definitely/missing.rfw\"",
            "count = 1\nbackgrounds_dir = \"/definitely/missing\"",
            "backgrounds_dir = \"same\"\noutput_dir = \"same\"",
        ] {
            let cfg = GenerationConfig::from_toml(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        assert!(GenerationConfig::from_toml("unknown_key = 1").is_err());
    }
}
