//! One-factor sweeps with the noise, mixing weights and other factors held
//! fixed, plus the measurements used to read the sweeps back.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::dataset::write_json;
use crate::pipeline::image_io::{montage, save_png};
use crate::pipeline::render::{Generator, RenderOutput, RenderRecord, ThetaRecord};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFactor {
    Theta,
    SL,
    SW,
    Tau,
}

impl FromStr for SweepFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Self::Theta),
            "s_l" | "sl" => Ok(Self::SL),
            "s_w" | "sw" => Ok(Self::SW),
            "tau" => Ok(Self::Tau),
            other => Err(Error::invalid(format!(
                "unknown sweep factor '{other}' (expected theta, s_l, s_w or tau)"
            ))),
        }
    }
}

/// Parses `a,b,c` into numbers.
pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("'{s}' is not a number")))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub factor: SweepFactor,
    pub values: Vec<f64>,
    pub renders: Vec<RenderOutput>,
    /// Rainy images side by side, in sweep order.
    pub montage: Tensor3,
}

impl SweepOutput {
    pub fn records(&self) -> Vec<&RenderRecord> {
        self.renders.iter().map(|r| &r.record).collect()
    }
}

/// Renders `background` once per value, changing only `factor`. Every
/// render uses the factor draw and noise of image 0 of the configured seed.
pub fn sweep_factor(
    gen: &Generator,
    background: &Tensor3,
    factor: SweepFactor,
    values: &[f64],
) -> Result<SweepOutput> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let base = gen.sample(0)?;
    let renders = values
        .iter()
        .map(|&v| {
            let mut f = base.clone();
            match factor {
                SweepFactor::Theta => f.theta_deg.iter_mut().for_each(|t| *t = v),
                SweepFactor::SL => f.s_l = v,
                SweepFactor::SW => f.s_w = v,
                SweepFactor::Tau => f.tau = v,
            }
            gen.render_rainy(background, &f)
        })
        .collect::<Result<Vec<_>>>()?;
    let tiles: Vec<Tensor3> = renders.iter().map(|r| r.scene.rainy.clone()).collect();
    let montage = montage(&tiles, tiles.len(), 4, 1.0)?;
    Ok(SweepOutput {
        factor,
        values: values.to_vec(),
        renders,
        montage,
    })
}

fn channel_mean(layer: &Tensor3) -> Vec<f64> {
    let c = layer.channels();
    layer.data().chunks_exact(c).map(|p| p.iter().sum::<f64>() / c as f64).collect()
}

/// Streak orientation of a rain layer in degrees on `(-90, 90]`, clockwise
/// from vertical.
///
/// Reads the dominant gradient axis of the channel-mean layer from its
/// structure tensor, with Scharr derivatives over interior pixels; streaks
/// run perpendicular to it. Returns 0 for a constant layer.
pub fn measure_orientation(layer: &Tensor3) -> f64 {
    let (h, w, _) = layer.shape();
    if h < 3 || w < 3 {
        return 0.0;
    }
    let f = channel_mean(layer);
    let v = |y: usize, x: usize| f[y * w + x];
    let (mut jxx, mut jyy, mut jxy) = (0.0, 0.0, 0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (3.0 * (v(y - 1, x + 1) - v(y - 1, x - 1))
                + 10.0 * (v(y, x + 1) - v(y, x - 1))
                + 3.0 * (v(y + 1, x + 1) - v(y + 1, x - 1)))
                / 32.0;
            let gy = (3.0 * (v(y + 1, x - 1) - v(y - 1, x - 1))
                + 10.0 * (v(y + 1, x) - v(y - 1, x))
                + 3.0 * (v(y + 1, x + 1) - v(y - 1, x + 1)))
                / 32.0;
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
        }
    }
    // streaks at t have gradients along (cos t, sin t) in (x, y-down)
    let t = (0.5 * (2.0 * jxy).atan2(jxx - jyy)).to_degrees();
    if t <= -90.0 { t + 180.0 } else { t }
}

/// Streak cross-section width in pixels for streaks at `theta` radians.
///
/// The channel-mean layer is mean-subtracted and autocorrelated along the
/// direction perpendicular to the streaks (bilinear shifts, whole-pixel
/// steps). The width is the root second moment of the central lobe, which
/// ends where the autocorrelation stops decreasing or turns negative.
pub fn measure_width(layer: &Tensor3, theta: f64) -> f64 {
    let (h, w, _) = layer.shape();
    let lum = channel_mean(layer);
    let mean = lum.iter().sum::<f64>() / lum.len().max(1) as f64;
    let f: Vec<f64> = lum.iter().map(|v| v - mean).collect();
    let at = |y: f64, x: f64| -> Option<f64> {
        if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
            return None;
        }
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let v = |yy: usize, xx: usize| f[yy * w + xx];
        Some(
            (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
                + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1)),
        )
    };
    // perpendicular to the streak direction (sin t, -cos t) in (x, y-down)
    let (dx, dy) = (theta.cos(), theta.sin());
    let corr = |d: f64| -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                if let Some(s) = at(y as f64 + d * dy, x as f64 + d * dx) {
                    acc += f[y * w + x] * s;
                    n += 1;
                }
            }
        }
        if n == 0 { 0.0 } else { acc / n as f64 }
    };
    let a0 = corr(0.0);
    if a0 <= 0.0 {
        return 0.0;
    }
    let (mut num, mut den) = (0.0, a0);
    let mut prev = a0;
    for d in 1..(h.min(w) / 2).max(1) {
        let a = 0.5 * (corr(d as f64) + corr(-(d as f64)));
        if a <= 0.0 || a >= prev {
            break;
        }
        num += 2.0 * (d * d) as f64 * a;
        den += 2.0 * a;
        prev = a;
    }
    (num / den).sqrt()
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    factor: SweepFactor,
    values: &'a [f64],
    /// Orientation (theta sweeps) or width (s_w sweeps) read from each rain layer.
    measured: Option<Vec<f64>>,
    records: Vec<&'a RenderRecord>,
}

/// Orientations (theta sweep) or widths (s_w sweep) of each render.
pub fn sweep_measurements(out: &SweepOutput) -> Option<Vec<f64>> {
    match out.factor {
        SweepFactor::Theta => Some(out.renders.iter().map(|r| measure_orientation(&r.scene.rain_layer)).collect()),
        SweepFactor::SW => Some(
            out.renders
                .iter()
                .map(|r| {
                    let t = match &r.record.theta_deg {
                        ThetaRecord::Scalar(t) => *t,
                        ThetaRecord::PerAtom(v) => v.iter().sum::<f64>() / v.len() as f64,
                    };
                    measure_width(&r.scene.rain_layer, t.to_radians())
                })
                .collect(),
        ),
        _ => None,
    }
}

/// Writes the montage, the per-value rainy images and rain layers, and
/// `sweep.json` with records and measurements.
pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<Option<Vec<f64>>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png(&dir.join("montage.png"), &out.montage)?;
    for (i, r) in out.renders.iter().enumerate() {
        save_png(&dir.join(format!("sweep_{i:02}_rainy.png")), &r.scene.rainy)?;
        save_png(&dir.join(format!("sweep_{i:02}_rain.png")), &r.scene.rain_layer)?;
    }
    let measured = sweep_measurements(out);
    write_json(
        &dir.join("sweep.json"),
        &SweepSummary {
            factor: out.factor,
            values: &out.values,
            measured: measured.clone(),
            records: out.records(),
        },
    )?;
    Ok(measured)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_lines(sigma: f64) -> Tensor3 {
        Tensor3::from_fn(40, 40, 3, |_, x, _| {
            let d = (x % 10) as f64 - 5.0;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn width_grows_with_line_thickness() {
        let widths: Vec<f64> = [0.8, 1.2, 1.8].iter().map(|&s| measure_width(&gaussian_lines(s), 0.0)).collect();
        assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
        assert_eq!(measure_width(&Tensor3::zeros(8, 8, 3), 0.0), 0.0);
    }

    #[test]
    fn orientation_of_tilted_lines() {
        for t in [-60.0f64, -30.0, 0.0, 10.0, 30.0, 60.0, 90.0] {
            let r = t.to_radians();
            let img = Tensor3::from_fn(64, 64, 3, |y, x, _| {
                let d = (x as f64 * r.cos() + y as f64 * r.sin()).rem_euclid(10.0) - 5.0;
                (-d * d / 2.0).exp()
            });
            assert!((measure_orientation(&img) - t).abs() < 0.5, "{t}");
        }
        assert_eq!(measure_orientation(&Tensor3::filled(8, 8, 3, 0.4)), 0.0);
    }

    #[test]
    fn factor_names_parse() {
        assert_eq!("s_w".parse::<SweepFactor>().unwrap(), SweepFactor::SW);
        assert!("alpha".parse::<SweepFactor>().is_err());
        assert_eq!(parse_values("-30, 0,30").unwrap(), vec![-30.0, 0.0, 30.0]);
        assert!(parse_values("1,x").is_err());
    }
}
