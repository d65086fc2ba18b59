//! The end-to-end generator: kernels, rain map, rain layer, merge.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factors::{sample_factors, RainFactorSample, SampleShape, SeedLineage, NOISE_STREAM};
use crate::pipeline::config::{GenerationConfig, MergeMode};
use crate::rain_kernel::{build_cascade, streak_init_dictionary, KernelDictionary, MixingWeights};
use crate::resnet::RotResNetWeights;
use crate::rot_tv::DiffFilterSpec;
use crate::scene::{
    compose_rain_layer, generate_rain_map, merge_additive, merge_rotconv, sparsity, standard_normal_noise,
    SceneTensors,
};
use crate::tensor::Tensor3;

/// Sub-seeds for components seeded from the master seed when the config
/// gives no explicit seed.
const DICT_SALT: u64 = 0xD1C7;
const MAP_SALT: u64 = 0x3A9;
const MERGE_SALT: u64 = 0x3E26E;

/// Orientation as written to sidecars: a number, or one per atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaRecord {
    Scalar(f64),
    PerAtom(Vec<f64>),
}

impl ThetaRecord {
    pub fn from_degrees(v: &[f64]) -> Self {
        match v {
            [one] => ThetaRecord::Scalar(*one),
            many => ThetaRecord::PerAtom(many.to_vec()),
        }
    }

    pub fn degrees(&self) -> Vec<f64> {
        match self {
            ThetaRecord::Scalar(v) => vec![*v],
            ThetaRecord::PerAtom(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFiles {
    pub clean: String,
    pub rainy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rain_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rain_map: Option<String>,
    /// Source background the clean image came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

/// Sidecar metadata for one rendered image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRecord {
    pub index: u64,
    /// Per-image stream seed derived from `(master_seed, index)`.
    pub seed: u64,
    pub master_seed: u64,
    pub theta_deg: ThetaRecord,
    pub s_l: f64,
    pub s_w: f64,
    pub tau: f64,
    pub alpha_digest: String,
    pub sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rot_tv: Option<f64>,
    pub files: RecordFiles,
    /// Full mixing weights, stage by stage, `M x K` row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<f64>>>,
}

/// SHA-256 over the little-endian bytes of every alpha entry, stage-major.
pub fn alpha_digest(alpha: &[MixingWeights]) -> String {
    let mut h = Sha256::new();
    for a in alpha {
        for v in a.values() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything one render produces.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub scene: SceneTensors,
    pub record: RenderRecord,
}

/// Immutable generator context shared by every image.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GenerationConfig,
    pub dict: KernelDictionary,
    pub map_weights: RotResNetWeights,
    pub merge_weights: Option<RotResNetWeights>,
    pub tv: DiffFilterSpec,
}

impl Generator {
    /// Loads or seeds the dictionary and networks named by the config.
    pub fn new(config: GenerationConfig) -> Result<Self> {
        config.validate()?;
        let k = &config.kernel;
        let mut dict = match &k.dict_path {
            Some(p) => KernelDictionary::load(p)?,
            None => streak_init_dictionary(k.p, k.atoms, k.dict_seed.unwrap_or(config.seed ^ DICT_SALT))?,
        };
        if dict.p() != k.p || dict.atoms() != k.atoms {
            return Err(Error::Config(format!(
                "dictionary is p = {}, M = {}; config says p = {}, M = {}",
                dict.p(),
                dict.atoms(),
                k.p,
                k.atoms
            )));
        }
        dict.set_per_atom_theta(k.per_atom_theta);
        let m = &config.map;
        let map_weights = match &m.weights_path {
            Some(p) => RotResNetWeights::load(p)?,
            None => {
                let mut w = RotResNetWeights::seeded(
                    k.maps,
                    m.hidden,
                    k.maps,
                    m.blocks,
                    m.weights_seed.unwrap_or(config.seed ^ MAP_SALT),
                    0.5,
                )?;
                if let Some(p) = &mut w.output_proj {
                    p.weights.iter_mut().for_each(|v| *v *= m.output_gain);
                }
                w
            }
        };
        if map_weights.in_channels != k.maps || map_weights.out_channels != k.maps {
            return Err(Error::Config(format!(
                "rain-map network must map K = {} channels to K",
                k.maps
            )));
        }
        let merge_weights = match config.merge.mode {
            MergeMode::Additive => None,
            MergeMode::Rotconv => {
                let s = &config.merge;
                let w = match &s.weights_path {
                    Some(p) => RotResNetWeights::load(p)?,
                    None => RotResNetWeights::seeded(
                        6,
                        s.hidden,
                        3,
                        s.blocks,
                        s.weights_seed.unwrap_or(config.seed ^ MERGE_SALT),
                        0.1,
                    )?,
                };
                if w.in_channels != 6 || w.out_channels != 3 {
                    return Err(Error::Config("merge network must map 6 -> 3 channels".into()));
                }
                Some(w)
            }
        };
        Ok(Self {
            config,
            dict,
            map_weights,
            merge_weights,
            tv: DiffFilterSpec::default(),
        })
    }

    pub fn sample_shape(&self) -> SampleShape {
        SampleShape {
            atoms: self.dict.atoms(),
            maps: self.config.kernel.maps,
            stages: self.config.kernel.cascade_depth,
            per_atom_theta: self.dict.per_atom_theta(),
        }
    }

    pub fn lineage(&self, index: u64) -> SeedLineage {
        SeedLineage::new(self.config.seed, index)
    }

    /// Factor draw for image `index`.
    pub fn sample(&self, index: u64) -> Result<RainFactorSample> {
        sample_factors(&self.config.factors, self.sample_shape(), self.lineage(index))
    }

    /// Rebuilds the factor sample a sidecar describes. Alpha is taken from
    /// the record when dumped, otherwise re-drawn from the seed lineage and
    /// checked against the stored digest.
    pub fn factors_from_record(&self, record: &RenderRecord) -> Result<RainFactorSample> {
        let lineage = SeedLineage::new(record.master_seed, record.index);
        let alpha = match &record.alpha {
            Some(stages) => stages
                .iter()
                .map(|v| MixingWeights::new(self.dict.atoms(), self.config.kernel.maps, v.clone()))
                .collect::<Result<Vec<_>>>()?,
            None => sample_factors(&self.config.factors, self.sample_shape(), lineage)?.alpha,
        };
        if alpha_digest(&alpha) != record.alpha_digest {
            return Err(Error::invalid(format!(
                "image {}: mixing weights do not match the recorded digest",
                record.index
            )));
        }
        Ok(RainFactorSample {
            theta_deg: record.theta_deg.degrees(),
            s_l: record.s_l,
            s_w: record.s_w,
            alpha,
            tau: record.tau,
            lineage,
        })
    }

    /// Noise `Z` for a lineage at the given size.
    pub fn noise(&self, lineage: SeedLineage, height: usize, width: usize) -> Tensor3 {
        standard_normal_noise(height, width, self.config.kernel.maps, &mut lineage.rng(NOISE_STREAM))
    }

    /// Renders a rainy image over `background` (values in `[0, 1]`).
    pub fn render_rainy(&self, background: &Tensor3, factors: &RainFactorSample) -> Result<RenderOutput> {
        let index = factors.lineage.stream_id as usize;
        self.render_inner(background, factors)
            .map_err(|e| Error::AtImage {
                index,
                source: Box::new(e),
            })
    }

    fn render_inner(&self, background: &Tensor3, factors: &RainFactorSample) -> Result<RenderOutput> {
        if background.channels() != 3 {
            return Err(Error::shape("background must have 3 channels"));
        }
        if background.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("background values must lie in [0, 1]"));
        }
        let theta = factors.scene_theta_rad();
        let noise = self.noise(factors.lineage, background.height(), background.width());
        let rain_map = generate_rain_map(&noise, theta, factors.tau, &self.map_weights)?
            .scaled(self.config.map.intensity);
        let cascade = build_cascade(&self.dict, factors)?;
        let rain_layer = compose_rain_layer(&rain_map, &cascade.stages)?;
        let rainy = match &self.merge_weights {
            None => merge_additive(&rain_layer, background)?,
            Some(w) => merge_rotconv(&rain_layer, background, theta, w)?,
        };
        let rot_tv = if self.config.emit.rot_tv {
            Some(self.tv.loss(&rain_layer, theta)?)
        } else {
            None
        };
        let record = RenderRecord {
            index: factors.lineage.stream_id,
            seed: factors.lineage.stream_seed(),
            master_seed: factors.lineage.master_seed,
            theta_deg: ThetaRecord::from_degrees(&factors.theta_deg),
            s_l: factors.s_l,
            s_w: factors.s_w,
            tau: factors.tau,
            alpha_digest: alpha_digest(&factors.alpha),
            sparsity: sparsity(&rain_map),
            rot_tv,
            files: RecordFiles::default(),
            alpha: self
                .config
                .emit
                .alpha
                .then(|| factors.alpha.iter().map(|a| a.values().to_vec()).collect()),
        };
        Ok(RenderOutput {
            scene: SceneTensors {
                noise,
                rain_map,
                rain_layer,
                background: background.clone(),
                rainy,
            },
            record,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::FactorConfig;

    fn small_config() -> GenerationConfig {
        let mut c = GenerationConfig::default();
        c.kernel.p = 7;
        c.kernel.atoms = 4;
        c.kernel.maps = 2;
        c.kernel.cascade_depth = 2;
        c.map.hidden = 4;
        c.map.blocks = 1;
        c.seed = 11;
        c
    }

    #[test]
    fn huge_threshold_leaves_background_untouched() {
        let mut c = small_config();
        c.factors = FactorConfig::constants(10.0, 0.65, 1.15, 1e6, 0.25);
        let g = Generator::new(c).unwrap();
        let bg = Tensor3::from_fn(16, 16, 3, |y, x, ch| ((y + x + ch) % 7) as f64 / 7.0);
        let out = g.render_rainy(&bg, &g.sample(0).unwrap()).unwrap();
        assert_eq!(out.scene.rainy, bg);
        assert_eq!(out.record.sparsity, 0.0);
    }

    #[test]
    fn render_is_deterministic_and_reproducible_from_record() {
        let g = Generator::new(small_config()).unwrap();
        let bg = Tensor3::filled(20, 20, 3, 0.3);
        let f = g.sample(3).unwrap();
        let a = g.render_rainy(&bg, &f).unwrap();
        let b = g.render_rainy(&bg, &f).unwrap();
        assert_eq!(a.scene.rainy, b.scene.rainy);
        assert_eq!(a.record, b.record);
        let json = serde_json::to_string(&a.record).unwrap();
        let back: RenderRecord = serde_json::from_str(&json).unwrap();
        let f2 = g.factors_from_record(&back).unwrap();
        assert_eq!(g.render_rainy(&bg, &f2).unwrap().scene.rainy, a.scene.rainy);
        let mut tampered = back;
        tampered.alpha_digest = "00".into();
        assert!(g.factors_from_record(&tampered).is_err());
    }

    #[test]
    fn rotconv_merge_runs() {
        let mut c = small_config();
        c.merge.mode = MergeMode::Rotconv;
        c.merge.hidden = 4;
        c.merge.blocks = 1;
        let g = Generator::new(c).unwrap();
        let bg = Tensor3::filled(12, 12, 3, 0.4);
        let out = g.render_rainy(&bg, &g.sample(0).unwrap()).unwrap();
        assert!(out.scene.rainy.min() >= 0.0 && out.scene.rainy.max() <= 1.0);
    }

    #[test]
    fn bad_background_reports_image_index() {
        let g = Generator::new(small_config()).unwrap();
        let err = g
            .render_rainy(&Tensor3::filled(4, 4, 3, 2.0), &g.sample(5).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::AtImage { index: 5, .. }));
    }
}
