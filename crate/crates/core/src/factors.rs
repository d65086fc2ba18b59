//! Configurable rain-factor distributions and seeded sampling.
//!
//! Every image draws its factors from its own counter-derived stream, so any
//! image of a dataset can be regenerated alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rain_kernel::MixingWeights;

/// Sub-stream ids within one image's seed stream.
pub const FACTOR_STREAM: u64 = 0;
pub const NOISE_STREAM: u64 = 1;
pub const CROP_STREAM: u64 = 2;

/// A one-dimensional distribution for a single factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FactorDistribution {
    Constant {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip_lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip_hi: Option<f64>,
    },
}

impl FactorDistribution {
    pub fn constant(value: f64) -> Self {
        FactorDistribution::Constant { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        FactorDistribution::Uniform { lo, hi }
    }

    pub fn gaussian(mean: f64, sd: f64) -> Self {
        FactorDistribution::Gaussian {
            mean,
            sd,
            clip_lo: None,
            clip_hi: None,
        }
    }

    pub fn clipped_gaussian(mean: f64, sd: f64, clip_lo: Option<f64>, clip_hi: Option<f64>) -> Self {
        FactorDistribution::Gaussian {
            mean,
            sd,
            clip_lo,
            clip_hi,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("factor {name}: {why}")));
        match *self {
            FactorDistribution::Constant { value } if !value.is_finite() => {
                bad(format!("constant {value} is not finite"))
            }
            FactorDistribution::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite()) => {
                bad("uniform bounds must be finite".into())
            }
            FactorDistribution::Uniform { lo, hi } if lo > hi => {
                bad(format!("uniform lo {lo} exceeds hi {hi}"))
            }
            FactorDistribution::Gaussian { mean, sd, .. } if !(mean.is_finite() && sd.is_finite()) => {
                bad("gaussian parameters must be finite".into())
            }
            FactorDistribution::Gaussian { sd, .. } if sd < 0.0 => {
                bad(format!("gaussian sd {sd} is negative"))
            }
            FactorDistribution::Gaussian {
                clip_lo: Some(lo),
                clip_hi: Some(hi),
                ..
            } if lo > hi => bad(format!("clip bounds {lo} > {hi}")),
            _ => Ok(()),
        }
    }

    /// Smallest value the distribution can produce.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            FactorDistribution::Constant { value } => value,
            FactorDistribution::Uniform { lo, .. } => lo,
            FactorDistribution::Gaussian { sd, mean, clip_lo, .. } => {
                if sd == 0.0 {
                    clip_lo.map_or(mean, |lo| mean.max(lo))
                } else {
                    clip_lo.unwrap_or(f64::NEG_INFINITY)
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            FactorDistribution::Constant { value } => value,
            FactorDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    Uniform::new_inclusive(lo, hi)
                        .expect("validated bounds")
                        .sample(rng)
                }
            }
            FactorDistribution::Gaussian {
                mean,
                sd,
                clip_lo,
                clip_hi,
            } => {
                let z: f64 = StandardNormal.sample(rng);
                let mut v = if sd == 0.0 { mean } else { mean + sd * z };
                if let Some(lo) = clip_lo {
                    v = v.max(lo);
                }
                if let Some(hi) = clip_hi {
                    v = v.min(hi);
                }
                v
            }
        }
    }
}

/// Mixing-weight distribution, applied i.i.d. per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaDistribution {
    /// `None` means `gaussian(1/M, 1/(2M))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<FactorDistribution>,
    #[serde(default = "default_true")]
    pub nonneg: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AlphaDistribution {
    fn default() -> Self {
        Self {
            dist: None,
            nonneg: true,
        }
    }
}

impl AlphaDistribution {
    pub fn resolved(&self, m: usize) -> FactorDistribution {
        self.dist.clone().unwrap_or_else(|| {
            let mf = m as f64;
            FactorDistribution::gaussian(1.0 / mf, 1.0 / (2.0 * mf))
        })
    }
}

/// The per-factor distribution set. Angles are in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    #[serde(default = "default_theta")]
    pub theta: FactorDistribution,
    #[serde(default = "default_s_l")]
    pub s_l: FactorDistribution,
    #[serde(default = "default_s_w")]
    pub s_w: FactorDistribution,
    /// Placeholder default; no learned sparsity distribution is available.
    #[serde(default = "default_tau")]
    pub tau: FactorDistribution,
    #[serde(default)]
    pub alpha: AlphaDistribution,
}

fn default_theta() -> FactorDistribution {
    FactorDistribution::clipped_gaussian(0.0, 20.0, Some(-40.0), Some(40.0))
}

fn default_s_l() -> FactorDistribution {
    FactorDistribution::uniform(0.6, 0.7)
}

fn default_s_w() -> FactorDistribution {
    FactorDistribution::constant(1.15)
}

fn default_tau() -> FactorDistribution {
    FactorDistribution::gaussian(1.0, 0.25)
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            s_l: default_s_l(),
            s_w: default_s_w(),
            tau: default_tau(),
            alpha: AlphaDistribution::default(),
        }
    }
}

impl FactorConfig {
    /// All factors fixed.
    pub fn constants(theta_deg: f64, s_l: f64, s_w: f64, tau: f64, alpha: f64) -> Self {
        Self {
            theta: FactorDistribution::constant(theta_deg),
            s_l: FactorDistribution::constant(s_l),
            s_w: FactorDistribution::constant(s_w),
            tau: FactorDistribution::constant(tau),
            alpha: AlphaDistribution {
                dist: Some(FactorDistribution::constant(alpha)),
                nonneg: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate("theta")?;
        self.s_l.validate("s_l")?;
        self.s_w.validate("s_w")?;
        self.tau.validate("tau")?;
        if let Some(d) = &self.alpha.dist {
            d.validate("alpha")?;
        }
        for (name, d) in [("s_l", &self.s_l), ("s_w", &self.s_w)] {
            if !(d.lower_bound() > 0.0) {
                return Err(Error::Config(format!(
                    "factor {name} must be strictly positive; clip or bound it above 0"
                )));
            }
        }
        Ok(())
    }
}

/// Where a sample's randomness came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedLineage {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Counter-based stream seed; independent of how many streams precede it.
    pub fn stream_seed(&self) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_add(0x9E37_79B9_7F4A_7C15)))
    }

    /// Generator for one sub-stream (factors, noise, crop) of this image.
    pub fn rng(&self, sub_stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.stream_seed());
        rng.set_stream(sub_stream);
        rng
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One concrete draw of all rain factors.
#[derive(Clone, Debug, PartialEq)]
pub struct RainFactorSample {
    /// Degrees; one entry, or `M` entries for per-atom orientation.
    pub theta_deg: Vec<f64>,
    pub s_l: f64,
    pub s_w: f64,
    /// One `M x K` matrix per cascade stage.
    pub alpha: Vec<MixingWeights>,
    pub tau: f64,
    pub lineage: SeedLineage,
}

impl RainFactorSample {
    pub fn theta_rad(&self) -> Vec<f64> {
        self.theta_deg.iter().map(|d| d.to_radians()).collect()
    }

    /// Orientation used by the rotatable networks and the TV filter: the
    /// scalar angle, or the mean of a per-atom vector.
    pub fn scene_theta_rad(&self) -> f64 {
        let t = self.theta_rad();
        t.iter().sum::<f64>() / t.len() as f64
    }
}

/// Shape information the sampler needs from the kernel settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleShape {
    pub atoms: usize,
    pub maps: usize,
    pub stages: usize,
    pub per_atom_theta: bool,
}

/// Independent draws of every factor from the image's factor stream.
pub fn sample_factors(
    config: &FactorConfig,
    shape: SampleShape,
    lineage: SeedLineage,
) -> Result<RainFactorSample> {
    config.validate()?;
    if shape.atoms == 0 || shape.maps == 0 || shape.stages == 0 {
        return Err(Error::invalid(format!("degenerate sample shape {shape:?}")));
    }
    let mut rng = lineage.rng(FACTOR_STREAM);
    let n_theta = if shape.per_atom_theta { shape.atoms } else { 1 };
    let theta_deg = (0..n_theta).map(|_| config.theta.sample(&mut rng)).collect();
    let s_l = config.s_l.sample(&mut rng);
    let s_w = config.s_w.sample(&mut rng);
    let tau = config.tau.sample(&mut rng);
    let alpha_dist = config.alpha.resolved(shape.atoms);
    let alpha = (0..shape.stages)
        .map(|_| {
            let vals = (0..shape.atoms * shape.maps)
                .map(|_| {
                    let v = alpha_dist.sample(&mut rng);
                    if config.alpha.nonneg { v.max(0.0) } else { v }
                })
                .collect();
            MixingWeights::new(shape.atoms, shape.maps, vals)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RainFactorSample {
        theta_deg,
        s_l,
        s_w,
        alpha,
        tau,
        lineage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: SampleShape = SampleShape {
        atoms: 4,
        maps: 2,
        stages: 2,
        per_atom_theta: false,
    };

    #[test]
    fn constants_are_returned_exactly() {
        let cfg = FactorConfig::constants(12.5, 0.65, 1.15, 0.8, 0.25);
        let s = sample_factors(&cfg, SHAPE, SeedLineage::new(1, 2)).unwrap();
        assert_eq!(s.theta_deg, vec![12.5]);
        assert_eq!((s.s_l, s.s_w, s.tau), (0.65, 1.15, 0.8));
        assert!(s.alpha.iter().all(|a| a.values().iter().all(|&v| v == 0.25)));
        assert_eq!(s.alpha.len(), 2);
    }

    #[test]
    fn zero_sd_gaussian_returns_mean() {
        let d = FactorDistribution::gaussian(3.25, 0.0);
        let mut rng = SeedLineage::new(5, 0).rng(0);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 3.25);
        }
    }

    #[test]
    fn default_theta_is_clipped_and_centred() {
        let d = FactorConfig::default().theta;
        let mut rng = SeedLineage::new(2024, 0).rng(0);
        let draws: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        assert!(draws.iter().all(|v| (-40.0..=40.0).contains(v)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn clip_bounds_hold_over_many_draws() {
        let d = FactorDistribution::clipped_gaussian(0.5, 3.0, Some(-0.25), Some(1.0));
        let mut rng = SeedLineage::new(9, 3).rng(0);
        for _ in 0..100_000 {
            let v = d.sample(&mut rng);
            assert!((-0.25..=1.0).contains(&v));
        }
    }

    #[test]
    fn streams_are_reproducible_and_independent_of_order() {
        let cfg = FactorConfig::default();
        let a = sample_factors(&cfg, SHAPE, SeedLineage::new(77, 7)).unwrap();
        for i in 0..7 {
            sample_factors(&cfg, SHAPE, SeedLineage::new(77, i)).unwrap();
        }
        let b = sample_factors(&cfg, SHAPE, SeedLineage::new(77, 7)).unwrap();
        assert_eq!(a, b);
        let c = sample_factors(&cfg, SHAPE, SeedLineage::new(77, 8)).unwrap();
        assert_ne!(a.theta_deg, c.theta_deg);
    }

    #[test]
    fn defaults_respect_documented_ranges() {
        let cfg = FactorConfig::default();
        for i in 0..200 {
            let s = sample_factors(&cfg, SHAPE, SeedLineage::new(3, i)).unwrap();
            assert!((0.6..=0.7).contains(&s.s_l));
            assert_eq!(s.s_w, 1.15);
            assert!(s.alpha.iter().all(|a| a.values().iter().all(|&v| v >= 0.0)));
        }
    }

    #[test]
    fn per_atom_orientation_has_one_angle_per_atom() {
        let shape = SampleShape {
            per_atom_theta: true,
            ..SHAPE
        };
        let s = sample_factors(&FactorConfig::default(), shape, SeedLineage::new(1, 1)).unwrap();
        assert_eq!(s.theta_deg.len(), 4);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut cfg = FactorConfig::default();
        cfg.theta = FactorDistribution::uniform(5.0, 1.0);
        assert!(sample_factors(&cfg, SHAPE, SeedLineage::default()).is_err());
        let mut cfg = FactorConfig::default();
        cfg.tau = FactorDistribution::gaussian(0.0, -1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = FactorConfig::default();
        cfg.s_w = FactorDistribution::gaussian(1.0, 0.1);
        assert!(cfg.validate().is_err(), "unclipped gaussian scale can go negative");
        cfg.s_w = FactorDistribution::clipped_gaussian(1.0, 0.1, Some(0.5), Some(0.2));
        assert!(cfg.validate().is_err());
        cfg.s_w = FactorDistribution::clipped_gaussian(1.0, 0.1, Some(0.5), None);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: FactorConfig = toml::from_str(
            r#"
            theta = { kind = "uniform", lo = -10.0, hi = 10.0 }
            s_w = { kind = "constant", value = 1.2 }
            tau = { kind = "gaussian", mean = 1.5, sd = 0.1, clip_lo = 1.0 }
            alpha = { nonneg = false }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.theta, FactorDistribution::uniform(-10.0, 10.0));
        assert_eq!(cfg.s_l, default_s_l());
        assert!(!cfg.alpha.nonneg);
        assert!(toml::from_str::<FactorConfig>("theta = { kind = \"beta\" }").is_err());
    }
}
