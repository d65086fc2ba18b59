//! Forward-only rotatable residual network.
//!
//! Every 3x3 kernel is stored as Fourier coefficients and re-discretized at
//! the network angle, so rotating the angle by a quarter turn rotates the
//! whole network's response by exactly a quarter turn. Channel projections
//! at either end are ordinary 1x1 convolutions.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{conv_same, conv_same_adjoint, kernel_dot, kernel_gradient};
use crate::error::{Error, Result};
use crate::parametrization::{BasisSet, GridSamples, TransformParams};
use crate::tensor::{KernelTensor, Tensor3};

/// Side length of the parameterized kernels inside residual blocks.
pub const BLOCK_KERNEL: usize = 3;
/// Basis count for [`BLOCK_KERNEL`].
pub const BLOCK_BASIS: usize = 2 * BLOCK_KERNEL * BLOCK_KERNEL;

const WEIGHTS_MAGIC: &[u8; 4] = b"RFW1";

/// A 3x3 rotatable convolution: `c_out x c_in x N3` coefficients plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct RotConvLayer {
    pub c_out: usize,
    pub c_in: usize,
    pub coeffs: Vec<f64>,
    pub bias: Vec<f64>,
}

impl RotConvLayer {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            coeffs: vec![0.0; c_out * c_in * BLOCK_BASIS],
            bias: vec![0.0; c_out],
        }
    }

    fn coeffs_for(&self, o: usize, k: usize) -> &[f64] {
        let start = (o * self.c_in + k) * BLOCK_BASIS;
        &self.coeffs[start..start + BLOCK_BASIS]
    }

    fn kernel(&self, samples: &GridSamples) -> KernelTensor {
        let mut kt = KernelTensor::zeros(BLOCK_KERNEL, self.c_out, self.c_in);
        for o in 0..self.c_out {
            for k in 0..self.c_in {
                for (g, v) in samples.apply(self.coeffs_for(o, k)).into_iter().enumerate() {
                    kt.set(g / BLOCK_KERNEL, g % BLOCK_KERNEL, o, k, v);
                }
            }
        }
        kt
    }

    fn kernel_d_theta(&self, samples: &GridSamples, basis: &BasisSet, t: &TransformParams) -> KernelTensor {
        let dm = t.d_theta();
        let mut kt = KernelTensor::zeros(BLOCK_KERNEL, self.c_out, self.c_in);
        for o in 0..self.c_out {
            for k in 0..self.c_in {
                let d = samples.apply_derivative(self.coeffs_for(o, k), basis.grid(), &dm);
                for (g, v) in d.into_iter().enumerate() {
                    kt.set(g / BLOCK_KERNEL, g % BLOCK_KERNEL, o, k, v);
                }
            }
        }
        kt
    }
}

/// Plain 1x1 channel mixing `out[o] = sum_k W[o][k] in[k] + b[o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub c_out: usize,
    pub c_in: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            weights: vec![0.0; c_out * c_in],
            bias: vec![0.0; c_out],
        }
    }

    /// Folds channel `k` onto output `k mod c_out`; embeds when widening.
    pub fn folding(c_out: usize, c_in: usize) -> Self {
        let mut p = Self::zeros(c_out, c_in);
        for k in 0..c_in {
            p.weights[(k % c_out) * c_in + k] = 1.0;
        }
        p
    }

    fn as_kernel(&self) -> KernelTensor {
        KernelTensor::from_vec(1, self.c_out, self.c_in, self.weights.clone())
            .expect("projection shape")
    }

    fn apply(&self, x: &Tensor3) -> Result<Tensor3> {
        let mut y = conv_same(x, &self.as_kernel())?;
        add_bias(&mut y, &self.bias);
        Ok(y)
    }
}

fn add_bias(t: &mut Tensor3, bias: &[f64]) {
    let c = t.channels();
    if bias.iter().all(|&b| b == 0.0) {
        return;
    }
    for px in t.data_mut().chunks_exact_mut(c) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `x + conv2(relu(conv1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub conv1: RotConvLayer,
    pub conv2: RotConvLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotResNetWeights {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    /// Present iff `in_channels != hidden`.
    pub input_proj: Option<Projection>,
    pub blocks: Vec<ResBlock>,
    /// Present iff `out_channels != hidden`.
    pub output_proj: Option<Projection>,
}

impl RotResNetWeights {
    /// All-zero weights with the projections present where the channel
    /// counts require them.
    pub fn zeros(in_channels: usize, hidden: usize, out_channels: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::invalid("rotatable ResNet needs at least one block"));
        }
        if in_channels == 0 || hidden == 0 || out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(Self {
            in_channels,
            hidden,
            out_channels,
            input_proj: (in_channels != hidden).then(|| Projection::zeros(hidden, in_channels)),
            blocks: (0..blocks)
                .map(|_| ResBlock {
                    conv1: RotConvLayer::zeros(hidden, hidden),
                    conv2: RotConvLayer::zeros(hidden, hidden),
                })
                .collect(),
            output_proj: (out_channels != hidden).then(|| Projection::zeros(out_channels, hidden)),
        })
    }

    /// Seeded initialization. The projections fold channels so that the
    /// residual path carries the input through (the output channel `o`
    /// receives every input channel congruent to `o`), and the blocks add a
    /// random perturbation whose per-layer gain is roughly `block_gain`.
    /// Biases start at zero.
    pub fn seeded(
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        blocks: usize,
        seed: u64,
        block_gain: f64,
    ) -> Result<Self> {
        let mut w = Self::zeros(in_channels, hidden, out_channels, blocks)?;
        if let Some(p) = &mut w.input_proj {
            *p = Projection::folding(hidden, in_channels);
        }
        if let Some(p) = &mut w.output_proj {
            *p = Projection::folding(out_channels, hidden);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // a discretized tap has variance 9 sd^2 mask^2 and a layer sums
        // 9 taps over `hidden` inputs
        let sd = block_gain / (81.0 * hidden as f64).sqrt();
        let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
        for b in &mut w.blocks {
            for layer in [&mut b.conv1, &mut b.conv2] {
                layer.coeffs.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
        Ok(w)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::shape(m));
        if self.blocks.is_empty() {
            return Err(Error::invalid("rotatable ResNet needs at least one block"));
        }
        if (self.in_channels != self.hidden) != self.input_proj.is_some() {
            return bad("input projection presence does not match channel counts".into());
        }
        if (self.out_channels != self.hidden) != self.output_proj.is_some() {
            return bad("output projection presence does not match channel counts".into());
        }
        if let Some(p) = &self.input_proj {
            if p.c_in != self.in_channels || p.c_out != self.hidden || p.weights.len() != p.c_in * p.c_out {
                return bad("input projection shape".into());
            }
        }
        if let Some(p) = &self.output_proj {
            if p.c_in != self.hidden || p.c_out != self.out_channels || p.weights.len() != p.c_in * p.c_out {
                return bad("output projection shape".into());
            }
        }
        for b in &self.blocks {
            for l in [&b.conv1, &b.conv2] {
                if l.c_in != self.hidden
                    || l.c_out != self.hidden
                    || l.coeffs.len() != l.c_in * l.c_out * BLOCK_BASIS
                    || l.bias.len() != l.c_out
                {
                    return bad("block layer shape".into());
                }
            }
        }
        let finite = self.layer_values().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("network weights must be finite"));
        }
        Ok(())
    }

    /// Every stored value in file order.
    fn layer_values(&self) -> impl Iterator<Item = f64> + '_ {
        let proj = |p: &Option<Projection>| {
            p.iter()
                .flat_map(|p| p.weights.iter().chain(&p.bias).copied())
                .collect::<Vec<_>>()
        };
        let head = proj(&self.input_proj);
        let tail = proj(&self.output_proj);
        let body: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| {
                [&b.conv1, &b.conv2]
                    .into_iter()
                    .flat_map(|l| l.coeffs.iter().chain(&l.bias).copied())
            })
            .collect();
        head.into_iter().chain(body).chain(tail)
    }

    /// Writes the `RFW1` container: magic, u32 block count, u32 in/hidden/out
    /// channel counts, then float64 values layer by layer (input projection,
    /// blocks, output projection; weights before biases).
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        for v in [self.blocks.len(), self.in_channels, self.hidden, self.out_channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in self.layer_values() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "RFW1",
            reason,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(format!("header: {e}")))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut head = [0usize; 4];
        for h in head.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| bad(format!("header: {e}")))?;
            *h = u32::from_le_bytes(b) as usize;
        }
        let [blocks, cin, hidden, cout] = head;
        let mut w = Self::zeros(cin, hidden, cout, blocks).map_err(|e| bad(e.to_string()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| bad(format!("payload: {e}")))?;
        let expected = w.layer_values().count();
        if bytes.len() != expected * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, header implies {}",
                bytes.len(),
                expected * 8
            )));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut fill = |dst: &mut Vec<f64>| dst.iter_mut().for_each(|v| *v = vals.next().unwrap());
        if let Some(p) = &mut w.input_proj {
            fill(&mut p.weights);
            fill(&mut p.bias);
        }
        for b in &mut w.blocks {
            fill(&mut b.conv1.coeffs);
            fill(&mut b.conv1.bias);
            fill(&mut b.conv2.coeffs);
            fill(&mut b.conv2.bias);
        }
        if let Some(p) = &mut w.output_proj {
            fill(&mut p.weights);
            fill(&mut p.bias);
        }
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

/// Intermediate values kept by [`forward_trace`] for differentiation.
#[derive(Clone, Debug)]
pub struct ResNetTrace {
    theta: f64,
    /// Input to each block.
    block_inputs: Vec<Tensor3>,
    /// Post-ReLU activation inside each block.
    activations: Vec<Tensor3>,
    /// Pre-ReLU sign pattern inside each block.
    relu_masks: Vec<Vec<bool>>,
}

impl ResNetTrace {
    /// ReLU activity pattern of every block, flattened.
    pub fn activation_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.relu_masks.iter().flatten().copied()
    }
}

fn check_input(input: &Tensor3, weights: &RotResNetWeights) -> Result<()> {
    if input.channels() != weights.in_channels {
        return Err(Error::shape(format!(
            "network expects {} input channels, got {}",
            weights.in_channels,
            input.channels()
        )));
    }
    weights.validate()
}

pub fn rot_resnet_forward(input: &Tensor3, theta: f64, weights: &RotResNetWeights) -> Result<Tensor3> {
    forward_trace(input, theta, weights).map(|(out, _)| out)
}

/// Forward pass that also records what [`backward_theta`] needs.
pub fn forward_trace(
    input: &Tensor3,
    theta: f64,
    weights: &RotResNetWeights,
) -> Result<(Tensor3, ResNetTrace)> {
    check_input(input, weights)?;
    let basis = BasisSet::new(BLOCK_KERNEL)?;
    let samples = basis.sample_grid(&TransformParams::rotation(theta).matrix());
    let mut x = match &weights.input_proj {
        Some(p) => p.apply(input)?,
        None => input.clone(),
    };
    let mut trace = ResNetTrace {
        theta,
        block_inputs: Vec::with_capacity(weights.blocks.len()),
        activations: Vec::with_capacity(weights.blocks.len()),
        relu_masks: Vec::with_capacity(weights.blocks.len()),
    };
    for b in &weights.blocks {
        let mut h = conv_same(&x, &b.conv1.kernel(&samples))?;
        add_bias(&mut h, &b.conv1.bias);
        let mask: Vec<bool> = h.data().iter().map(|&v| v > 0.0).collect();
        let a = h.map(|v| v.max(0.0));
        let mut r = conv_same(&a, &b.conv2.kernel(&samples))?;
        add_bias(&mut r, &b.conv2.bias);
        let next = x.zip_map(&r, |p, q| p + q)?;
        trace.block_inputs.push(std::mem::replace(&mut x, next));
        trace.activations.push(a);
        trace.relu_masks.push(mask);
    }
    let out = match &weights.output_proj {
        Some(p) => p.apply(&x)?,
        None => x,
    };
    Ok((out, trace))
}

/// `dL/dtheta` given `dL/d output` for the pass recorded in `trace`.
pub fn backward_theta(weights: &RotResNetWeights, trace: &ResNetTrace, grad_out: &Tensor3) -> Result<f64> {
    let basis = BasisSet::new(BLOCK_KERNEL)?;
    let t = TransformParams::rotation(trace.theta);
    let samples = basis.sample_grid_with_gradient(&t.matrix());
    let mut g = match &weights.output_proj {
        Some(p) => conv_same_adjoint(grad_out, &p.as_kernel())?,
        None => grad_out.clone(),
    };
    let mut d_theta = 0.0;
    for (bi, b) in weights.blocks.iter().enumerate().rev() {
        let k1 = b.conv1.kernel(&samples);
        let k2 = b.conv2.kernel(&samples);
        let a = &trace.activations[bi];
        let x = &trace.block_inputs[bi];
        let gk2 = kernel_gradient(a, &g, BLOCK_KERNEL, None)?;
        d_theta += kernel_dot(&gk2, &b.conv2.kernel_d_theta(&samples, &basis, &t));
        let mut gh = conv_same_adjoint(&g, &k2)?;
        for (v, &on) in gh.data_mut().iter_mut().zip(&trace.relu_masks[bi]) {
            if !on {
                *v = 0.0;
            }
        }
        let gk1 = kernel_gradient(x, &gh, BLOCK_KERNEL, None)?;
        d_theta += kernel_dot(&gk1, &b.conv1.kernel_d_theta(&samples, &basis, &t));
        let gx = conv_same_adjoint(&gh, &k1)?;
        g = g.zip_map(&gx, |p, q| p + q)?;
    }
    Ok(d_theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn noise(seed: u64, h: usize, w: usize, c: usize) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_blocks_pass_projected_input() {
        let mut w = RotResNetWeights::zeros(6, 16, 3, 2).unwrap();
        w.input_proj = Some(Projection::folding(16, 6));
        w.output_proj = Some(Projection::folding(3, 16));
        let x = noise(1, 10, 12, 6);
        let y = rot_resnet_forward(&x, 0.7, &w).unwrap();
        for yy in 0..10 {
            for xx in 0..12 {
                for c in 0..3 {
                    let want = x.get(yy, xx, c) + x.get(yy, xx, c + 3);
                    assert!((y.get(yy, xx, c) - want).abs() < 1e-14);
                }
            }
        }
        let z = RotResNetWeights::zeros(4, 4, 4, 1).unwrap();
        assert_eq!(rot_resnet_forward(&x.select_channels(0..4).unwrap(), 0.3, &z).unwrap(), x.select_channels(0..4).unwrap());
    }

    #[test]
    fn seeded_weights_are_deterministic() {
        let a = RotResNetWeights::seeded(6, 16, 6, 2, 5, 0.5).unwrap();
        let b = RotResNetWeights::seeded(6, 16, 6, 2, 5, 0.5).unwrap();
        assert_eq!(a, b);
        let x = noise(2, 16, 16, 6);
        let ya = rot_resnet_forward(&x, 0.4, &a).unwrap();
        let yb = rot_resnet_forward(&x, 0.4, &b).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn quarter_turn_equivariance() {
        let w = RotResNetWeights::seeded(3, 8, 2, 2, 9, 1.0).unwrap();
        let x = noise(3, 32, 32, 3);
        let theta = 0.3;
        let y0 = rot_resnet_forward(&x, theta, &w).unwrap();
        let y90 = rot_resnet_forward(&x.rotate_quarter_cw(), theta + FRAC_PI_2, &w).unwrap();
        assert!(y90.max_abs_diff(&y0.rotate_quarter_cw()) <= 1e-10);
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let mut w = RotResNetWeights::seeded(6, 16, 3, 4, 12, 0.5).unwrap();
        w.blocks[1].conv2.bias[3] = -0.125;
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RFW1");
        let back = RotResNetWeights::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        buf.truncate(buf.len() - 8);
        assert!(RotResNetWeights::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let mut w = RotResNetWeights::seeded(2, 4, 2, 2, 21, 1.5).unwrap();
        w.blocks[0].conv1.bias = vec![0.1, -0.1, 0.05, 0.0];
        let x = noise(4, 12, 12, 2);
        let g = noise(5, 12, 12, 2);
        let loss = |t: f64| -> f64 {
            let y = rot_resnet_forward(&x, t, &w).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        for theta in [0.0, 0.4, -1.1, 2.0] {
            let (_, trace) = forward_trace(&x, theta, &w).unwrap();
            let analytic = backward_theta(&w, &trace, &g).unwrap();
            let h = 1e-5;
            let fd = (loss(theta + h) - loss(theta - h)) / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-5 * analytic.abs().max(fd.abs()).max(1e-3),
                "theta {theta}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let w = RotResNetWeights::zeros(3, 8, 3, 1).unwrap();
        assert!(rot_resnet_forward(&Tensor3::zeros(4, 4, 2), 0.0, &w).is_err());
        assert!(RotResNetWeights::zeros(3, 8, 3, 0).is_err());
    }
}
