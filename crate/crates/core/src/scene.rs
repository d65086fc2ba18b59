//! Rain maps, rain layers and merging with a background.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::conv::cascade_conv;
use crate::error::{Error, Result};
use crate::rain_kernel::RainKernels;
use crate::resnet::{rot_resnet_forward, RotResNetWeights};
use crate::tensor::Tensor3;

/// Every image-domain quantity of one render.
#[derive(Clone, Debug)]
pub struct SceneTensors {
    pub noise: Tensor3,
    pub rain_map: Tensor3,
    pub rain_layer: Tensor3,
    pub background: Tensor3,
    pub rainy: Tensor3,
}

/// `H x W x K` standard normal draws in storage order.
pub fn standard_normal_noise(height: usize, width: usize, maps: usize, rng: &mut impl Rng) -> Tensor3 {
    let data = (0..height * width * maps)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor3::from_vec(height, width, maps, data).expect("length matches")
}

fn check_map_weights(noise: &Tensor3, weights: &RotResNetWeights) -> Result<()> {
    if weights.in_channels != noise.channels() || weights.out_channels != noise.channels() {
        return Err(Error::shape(format!(
            "rain-map network maps {} -> {} channels, noise has {}",
            weights.in_channels,
            weights.out_channels,
            noise.channels()
        )));
    }
    Ok(())
}

/// `rotResNet(Z, theta)` before thresholding.
pub fn rain_map_preactivation(noise: &Tensor3, theta: f64, weights: &RotResNetWeights) -> Result<Tensor3> {
    check_map_weights(noise, weights)?;
    rot_resnet_forward(noise, theta, weights)
}

/// Threshold ReLU `max(pre - tau, 0)`.
pub fn threshold_relu(pre: &Tensor3, tau: f64) -> Tensor3 {
    pre.map(|v| (v - tau).max(0.0))
}

/// `ReLU(rotResNet(Z, theta) - tau)`.
pub fn generate_rain_map(noise: &Tensor3, theta: f64, tau: f64, weights: &RotResNetWeights) -> Result<Tensor3> {
    Ok(threshold_relu(&rain_map_preactivation(noise, theta, weights)?, tau))
}

/// Fraction of strictly positive entries; 0 for an empty map.
pub fn sparsity(rain_map: &Tensor3) -> f64 {
    let n = rain_map.data().len();
    if n == 0 {
        return 0.0;
    }
    rain_map.data().iter().filter(|&&v| v > 0.0).count() as f64 / n as f64
}

/// Cascaded convolution of the map with the kernel stages, before the
/// nonnegativity clamp.
pub fn rain_layer_unclamped(rain_map: &Tensor3, stages: &[RainKernels]) -> Result<Tensor3> {
    cascade_conv(rain_map, stages)
}

/// Rain layer `max(C * M, 0)`.
pub fn compose_rain_layer(rain_map: &Tensor3, stages: &[RainKernels]) -> Result<Tensor3> {
    Ok(rain_layer_unclamped(rain_map, stages)?.map(|v| v.max(0.0)))
}

/// `clamp(B + R, 0, 1)`.
pub fn merge_additive(rain_layer: &Tensor3, background: &Tensor3) -> Result<Tensor3> {
    rain_layer.ensure_same_shape(background, "additive merge")?;
    rain_layer.zip_map(background, |r, b| (b + r).clamp(0.0, 1.0))
}

/// `clamp(rotResNet(cat(R, B), theta), 0, 1)` with a `6 -> 3` network.
pub fn merge_rotconv(
    rain_layer: &Tensor3,
    background: &Tensor3,
    theta: f64,
    weights: &RotResNetWeights,
) -> Result<Tensor3> {
    rain_layer.ensure_same_shape(background, "rotconv merge")?;
    if weights.in_channels != 2 * rain_layer.channels() || weights.out_channels != rain_layer.channels() {
        return Err(Error::shape(format!(
            "merge network maps {} -> {} channels, expected {} -> {}",
            weights.in_channels,
            weights.out_channels,
            2 * rain_layer.channels(),
            rain_layer.channels()
        )));
    }
    let joint = rain_layer.concat_channels(background)?;
    Ok(rot_resnet_forward(&joint, theta, weights)?.map(|v| v.clamp(0.0, 1.0)))
}
