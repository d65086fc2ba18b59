//! Batch generation of paired clean/rainy images with sidecars.

use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::CROP_STREAM;
use crate::pipeline::config::GenerationConfig;
use crate::pipeline::image_io::{list_backgrounds, load_image, montage, save_png, visualize_field};
use crate::pipeline::render::{Generator, RenderOutput, RenderRecord};
use crate::tensor::Tensor3;

/// Side of the flat grey background used when no background directory is
/// configured.
pub const DEFAULT_BACKGROUND_SIZE: usize = 128;
pub const DEFAULT_BACKGROUND_LEVEL: f64 = 0.3;

/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "RAINFORGE_THREADS";

/// Worker count from [`THREADS_ENV`]; `None` for automatic.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => {
            let n: usize = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{s}'")))?;
            Ok((n > 0).then_some(n))
        }
    }
}

/// Runs `f` on a pool of `threads` workers (`None` for automatic).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal bins over the data range.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        if values.is_empty() {
            return Self {
                lo: 0.0,
                hi: 0.0,
                counts,
            };
        }
        let width = (hi - lo) / bins as f64;
        for v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedBackground {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub requested: usize,
    pub written: usize,
    pub skipped_backgrounds: Vec<SkippedBackground>,
    pub mean_sparsity: f64,
    pub theta_deg: Histogram,
    pub s_l: Histogram,
    pub s_w: Histogram,
    pub tau: Histogram,
}

/// Backgrounds that decoded successfully, with their display names.
pub struct BackgroundSet {
    pub images: Vec<(String, Tensor3)>,
    pub skipped: Vec<SkippedBackground>,
}

impl BackgroundSet {
    /// Reads every PNG/JPEG in the configured directory; undecodable files
    /// are skipped and listed. Without a directory a flat grey image stands in.
    pub fn load(config: &GenerationConfig) -> Result<Self> {
        let Some(dir) = &config.backgrounds_dir else {
            let side = config.crop.unwrap_or(DEFAULT_BACKGROUND_SIZE);
            return Ok(Self {
                images: vec![(
                    "grey".to_string(),
                    Tensor3::filled(side, side, 3, DEFAULT_BACKGROUND_LEVEL),
                )],
                skipped: vec![],
            });
        };
        let mut images = Vec::new();
        let mut skipped = Vec::new();
        for path in list_backgrounds(dir)? {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            match load_image(&path) {
                Ok(img) => images.push((name, img)),
                Err(e) => {
                    warn!("skipping background {}: {e}", path.display());
                    skipped.push(SkippedBackground {
                        path: name,
                        reason: e.to_string(),
                    });
                }
            }
        }
        Ok(Self { images, skipped })
    }
}

/// File stem for image `index`.
pub fn stem(index: u64) -> String {
    format!("{index:06}")
}

fn crop(gen: &Generator, index: u64, bg: &Tensor3) -> Result<Tensor3> {
    let Some(c) = gen.config.crop else {
        return Ok(bg.clone());
    };
    let (h, w, _) = bg.shape();
    if h < c || w < c {
        return Err(Error::invalid(format!("background {h}x{w} is smaller than crop {c}")));
    }
    let mut rng = gen.lineage(index).rng(CROP_STREAM);
    let y0 = rng.random_range(0..=h - c);
    let x0 = rng.random_range(0..=w - c);
    Ok(Tensor3::from_fn(c, c, 3, |y, x, ch| bg.get(y0 + y, x0 + x, ch)))
}

/// Renders image `index` exactly as a full dataset run would.
pub fn render_index(gen: &Generator, backgrounds: &BackgroundSet, index: u64) -> Result<(String, RenderOutput)> {
    if backgrounds.images.is_empty() {
        return Err(Error::invalid("no readable backgrounds"));
    }
    let (name, bg) = &backgrounds.images[index as usize % backgrounds.images.len()];
    let bg = crop(gen, index, bg).map_err(|e| Error::AtImage {
        index: index as usize,
        source: Box::new(e),
    })?;
    let factors = gen.sample(index)?;
    Ok((name.clone(), gen.render_rainy(&bg, &factors)?))
}

/// Writes the images and sidecar of one render into `out`.
pub fn write_outputs(gen: &Generator, out: &Path, source: &str, r: &mut RenderOutput) -> Result<()> {
    let s = stem(r.record.index);
    let emit = &gen.config.emit;
    let mut files = crate::pipeline::render::RecordFiles {
        clean: format!("{s}_clean.png"),
        rainy: format!("{s}_rainy.png"),
        rain_layer: None,
        rain_map: None,
        background: Some(source.to_string()),
    };
    save_png(&out.join(&files.clean), &r.scene.background)?;
    save_png(&out.join(&files.rainy), &r.scene.rainy)?;
    if emit.rain_layer {
        let f = format!("{s}_rain.png");
        save_png(&out.join(&f), &r.scene.rain_layer)?;
        files.rain_layer = Some(f);
    }
    if emit.rain_map {
        let f = format!("{s}_map.png");
        save_png(&out.join(&f), &visualize_field(&r.scene.rain_map))?;
        files.rain_map = Some(f);
    }
    r.record.files = files;
    write_json(&out.join(format!("{s}.json")), &r.record)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<RenderRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        kind: "sidecar",
        reason: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates `config.count` images into `config.output_dir` using `threads`
/// workers (`None` for automatic). Output bytes do not depend on the worker
/// count.
pub fn generate_dataset(config: &GenerationConfig, threads: Option<usize>) -> Result<DatasetSummary> {
    let gen = Generator::new(config.clone())?;
    let out: PathBuf = config.output_dir.clone();
    ensure_dir(&out)?;
    let backgrounds = BackgroundSet::load(config)?;
    if config.count > 0 && backgrounds.images.is_empty() {
        return Err(Error::Config("no readable backgrounds found".into()));
    }
    let records: Vec<RenderRecord> = with_threads(threads, || {
        (0..config.count as u64)
            .into_par_iter()
            .map(|i| {
                let (source, mut r) = render_index(&gen, &backgrounds, i)?;
                write_outputs(&gen, &out, &source, &mut r)?;
                Ok(r.record)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let collect = |f: fn(&RenderRecord) -> Vec<f64>| records.iter().flat_map(f).collect::<Vec<f64>>();
    let sparsities = collect(|r| vec![r.sparsity]);
    let mean_sparsity = if records.is_empty() {
        0.0
    } else {
        sparsities.iter().sum::<f64>() / records.len() as f64
    };
    let summary = DatasetSummary {
        requested: config.count,
        written: records.len(),
        skipped_backgrounds: backgrounds.skipped,
        mean_sparsity,
        theta_deg: Histogram::of(&collect(|r| r.theta_deg.degrees()), 10),
        s_l: Histogram::of(&collect(|r| vec![r.s_l]), 10),
        s_w: Histogram::of(&collect(|r| vec![r.s_w]), 10),
        tau: Histogram::of(&collect(|r| vec![r.tau]), 10),
    };
    write_json(&out.join("summary.json"), &summary)?;
    if config.emit.montage && !records.is_empty() {
        let tiles = (0..records.len().min(16) as u64)
            .map(|i| load_image(&out.join(format!("{}_rainy.png", stem(i)))))
            .collect::<Result<Vec<_>>>()?;
        if tiles.iter().all(|t| t.shape() == tiles[0].shape()) {
            save_png(&out.join("montage.png"), &montage(&tiles, 4, 2, 1.0)?)?;
        } else {
            warn!("montage skipped: rendered images differ in size");
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_cover_range() {
        let h = Histogram::of(&[0.0, 0.5, 1.0, 1.0], 4);
        assert_eq!(h.counts, vec![1, 0, 1, 2]);
        assert_eq!(Histogram::of(&[2.0, 2.0], 3).counts, vec![2, 0, 0]);
        assert_eq!(Histogram::of(&[], 2).counts, vec![0, 0]);
    }
}
