//! Rotatable total variation: an L1 penalty on the rain layer filtered by a
//! difference filter steered to the streak angle.
//!
//! The base filter is a vertical central difference `[-0.5, 0, 0.5]` placed
//! in the centre column of a `size x size` grid (top tap negative). Its
//! coefficients come from the fast projection onto the Fourier basis and are
//! re-sampled on the rotated grid.

use std::io::Write;

use rayon::prelude::*;

use crate::conv::{conv_same, conv_same_adjoint, kernel_dot, kernel_gradient};
use crate::error::{Error, Result};
use crate::parametrization::{BasisSet, TransformParams};
use crate::tensor::{KernelTensor, Tensor3};

/// Default support of the steered difference filter.
pub const DEFAULT_DIFF_SIZE: usize = 11;

#[derive(Clone, Debug)]
pub struct DiffFilterSpec {
    base: Vec<f64>,
    basis: BasisSet,
    coeffs: Vec<f64>,
}

impl Default for DiffFilterSpec {
    fn default() -> Self {
        Self::new(DEFAULT_DIFF_SIZE).expect("default size is odd")
    }
}

impl DiffFilterSpec {
    /// `size` must be odd and at least 3.
    pub fn new(size: usize) -> Result<Self> {
        if size < 3 || size % 2 == 0 {
            return Err(Error::invalid(format!(
                "difference filter size must be odd and >= 3, got {size}"
            )));
        }
        let basis = BasisSet::new(size)?;
        let c = size / 2;
        let mut base = vec![0.0; size * size];
        base[(c - 1) * size + c] = -0.5;
        base[(c + 1) * size + c] = 0.5;
        let coeffs = basis.project_coefficients(&base)?;
        Ok(Self {
            base,
            basis,
            coeffs,
        })
    }

    pub fn size(&self) -> usize {
        self.basis.p()
    }

    /// The unrotated filter, row-major.
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `D(theta)`, row-major `size x size`.
    pub fn rotated(&self, theta: f64) -> Vec<f64> {
        self.basis
            .sample_grid(&TransformParams::rotation(theta).matrix())
            .apply(&self.coeffs)
    }

    /// `dD(theta) / dtheta`.
    pub fn rotated_derivative(&self, theta: f64) -> Vec<f64> {
        let t = TransformParams::rotation(theta);
        self.basis
            .sample_grid_with_gradient(&t.matrix())
            .apply_derivative(&self.coeffs, self.basis.grid(), &t.d_theta())
    }

    /// The filter applied independently to each of `channels` channels.
    fn depthwise(&self, filter: &[f64], channels: usize) -> KernelTensor {
        let s = self.size();
        let mut k = KernelTensor::zeros(s, channels, channels);
        for (g, v) in filter.iter().enumerate() {
            for c in 0..channels {
                k.set(g / s, g % s, c, c, *v);
            }
        }
        k
    }

    /// `sum |D(theta) * R|` over pixels and channels.
    pub fn loss(&self, layer: &Tensor3, theta: f64) -> Result<f64> {
        let k = self.depthwise(&self.rotated(theta), layer.channels());
        Ok(conv_same(layer, &k)?.data().iter().map(|v| v.abs()).sum())
    }

    /// Loss together with its gradient in the layer and in `theta`. The L1
    /// subgradient is taken as 0 where the response is exactly 0.
    pub fn loss_and_grad(&self, layer: &Tensor3, theta: f64) -> Result<RotTvGrad> {
        let c = layer.channels();
        let k = self.depthwise(&self.rotated(theta), c);
        let resp = conv_same(layer, &k)?;
        let loss = resp.data().iter().map(|v| v.abs()).sum();
        let sign = resp.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
        let d_layer = conv_same_adjoint(&sign, &k)?;
        let diag: Vec<(usize, usize)> = (0..c).map(|i| (i, i)).collect();
        let gk = kernel_gradient(layer, &sign, self.size(), Some(&diag))?;
        let d_theta = kernel_dot(&gk, &self.depthwise(&self.rotated_derivative(theta), c));
        Ok(RotTvGrad {
            loss,
            d_layer,
            d_theta,
            sign,
        })
    }
}

/// Output of [`DiffFilterSpec::loss_and_grad`].
#[derive(Clone, Debug)]
pub struct RotTvGrad {
    pub loss: f64,
    pub d_layer: Tensor3,
    pub d_theta: f64,
    /// Sign of the filtered response, the L1 activity pattern.
    pub sign: Tensor3,
}

/// `D(theta)` with the default filter size.
pub fn rotated_diff_filter(theta: f64) -> Vec<f64> {
    DiffFilterSpec::default().rotated(theta)
}

/// Rotatable TV of a rain layer at `theta` radians, default filter size.
pub fn rot_tv_loss(layer: &Tensor3, theta: f64) -> Result<f64> {
    DiffFilterSpec::default().loss(layer, theta)
}

/// Result of [`orientation_scan`]; angles in degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub best_deg: f64,
    pub best_loss: f64,
    /// `(theta_deg, loss)` in grid order.
    pub curve: Vec<(f64, f64)>,
}

impl ScanResult {
    /// Writes the curve as `theta_deg,loss` lines under a header.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "theta_deg,loss")?;
        for (t, l) in &self.curve {
            writeln!(w, "{t},{l}")?;
        }
        Ok(())
    }
}

/// Inclusive degree grid `lo, lo + step, ...` up to `hi`.
pub fn degree_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::invalid(format!(
            "bad scan range {lo}..{hi} step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Evaluates the rotatable TV over `grid_deg` and returns the minimizer.
/// Ties go to the smallest `|theta|`, then to the smaller angle.
pub fn orientation_scan(layer: &Tensor3, grid_deg: &[f64]) -> Result<ScanResult> {
    orientation_scan_with(&DiffFilterSpec::default(), layer, grid_deg)
}

pub fn orientation_scan_with(
    spec: &DiffFilterSpec,
    layer: &Tensor3,
    grid_deg: &[f64],
) -> Result<ScanResult> {
    if grid_deg.is_empty() {
        return Err(Error::invalid("orientation scan needs a nonempty grid"));
    }
    let curve = grid_deg
        .par_iter()
        .map(|&d| spec.loss(layer, d.to_radians()).map(|l| (d, l)))
        .collect::<Result<Vec<_>>>()?;
    let (best_deg, best_loss) = curve
        .iter()
        .copied()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.abs().total_cmp(&b.0.abs()))
                .then(a.0.total_cmp(&b.0))
        })
        .expect("nonempty");
    Ok(ScanResult {
        best_deg,
        best_loss,
        curve,
    })
}
