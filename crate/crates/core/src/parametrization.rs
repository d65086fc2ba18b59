//! Fourier-series filter parametrization with a radial mask.
//!
//! A `p x p` filter is represented as `sum_n w_n * phi_n(x)` where each
//! `phi_n` is a masked cosine or sine plane wave. Because the basis is defined
//! on the continuous plane, the same coefficients can be re-sampled at
//! rotated and scaled coordinates `T * x_ij`, which is what makes rain
//! kernels steerable.
//!
//! Coordinates: `x1` points right and `x2` points up. Grid point `(i, j)`
//! (row `i` counted downward) sits at `(j - (p-1)/2, (p-1)/2 - i)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A 2x2 matrix in row-major order.
pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub(crate) fn mat_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Cos,
    Sin,
}

/// One entry of the ordered frequency index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrequencyIndex {
    pub k: usize,
    pub l: usize,
    pub parity: Parity,
}

/// The masked Fourier basis for one odd filter size.
///
/// Basis index `n = 2 * (k * p + l) + parity`, with cosine at even `n`.
#[derive(Clone, Debug)]
pub struct BasisSet {
    p: usize,
    frequency_index: Vec<FrequencyIndex>,
    /// Angular frequency vector for each `(k, l)` pair, `k * p + l` order.
    omegas: Vec<[f64; 2]>,
    grid: Vec<[f64; 2]>,
    r0: f64,
    r1: f64,
}

impl BasisSet {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 || p % 2 == 0 {
            return Err(Error::invalid(format!(
                "basis size must be odd and positive, got {p}"
            )));
        }
        let half = (p / 2) as f64;
        let step = 2.0 * PI / p as f64;
        let mut frequency_index = Vec::with_capacity(2 * p * p);
        let mut omegas = Vec::with_capacity(p * p);
        for k in 0..p {
            for l in 0..p {
                omegas.push([step * (k as f64 - half), step * (l as f64 - half)]);
                frequency_index.push(FrequencyIndex {
                    k,
                    l,
                    parity: Parity::Cos,
                });
                frequency_index.push(FrequencyIndex {
                    k,
                    l,
                    parity: Parity::Sin,
                });
            }
        }
        let c = (p as f64 - 1.0) / 2.0;
        let grid = (0..p)
            .flat_map(|i| (0..p).map(move |j| [j as f64 - c, c - i as f64]))
            .collect();
        Ok(Self {
            p,
            frequency_index,
            omegas,
            grid,
            r0: (p as f64 - 1.0) / 2.0,
            r1: (p as f64 + 1.0) / 2.0,
        })
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of basis functions, `2 p^2`.
    #[inline]
    pub fn len(&self) -> usize {
        2 * self.p * self.p
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frequency_index(&self) -> &[FrequencyIndex] {
        &self.frequency_index
    }

    /// Angular frequency `(2 pi / p) * (k - p/2, l - p/2)` of basis `n`.
    pub fn frequency(&self, n: usize) -> Result<[f64; 2]> {
        self.check_index(n)?;
        Ok(self.omegas[n / 2])
    }

    pub fn mask_inner_radius(&self) -> f64 {
        self.r0
    }

    pub fn mask_outer_radius(&self) -> f64 {
        self.r1
    }

    /// Coordinates of grid point `(i, j)`.
    #[inline]
    pub fn grid_point(&self, i: usize, j: usize) -> [f64; 2] {
        self.grid[i * self.p + j]
    }

    /// All grid coordinates in row-major order.
    pub fn grid(&self) -> &[[f64; 2]] {
        &self.grid
    }

    /// Raised-cosine radial window: 1 inside `r0`, 0 beyond `r1`.
    pub fn radial_mask(&self, r: f64) -> f64 {
        if r <= self.r0 {
            1.0
        } else if r >= self.r1 {
            0.0
        } else {
            0.5 * (1.0 + (PI * (r - self.r0) / (self.r1 - self.r0)).cos())
        }
    }

    /// `d mask / d r`.
    pub fn radial_mask_derivative(&self, r: f64) -> f64 {
        if r <= self.r0 || r >= self.r1 {
            0.0
        } else {
            let width = self.r1 - self.r0;
            -0.5 * PI / width * (PI * (r - self.r0) / width).sin()
        }
    }

    /// Mask value at grid point `(i, j)`.
    pub fn grid_mask(&self, i: usize, j: usize) -> f64 {
        let [a, b] = self.grid_point(i, j);
        self.radial_mask(a.hypot(b))
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n >= self.len() {
            Err(Error::IndexOutOfRange {
                index: n,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }

    pub fn eval_basis(&self, n: usize, point: [f64; 2]) -> Result<f64> {
        self.check_index(n)?;
        let mask = self.radial_mask(point[0].hypot(point[1]));
        if mask == 0.0 {
            return Ok(0.0);
        }
        let w = self.omegas[n / 2];
        let phase = w[0] * point[0] + w[1] * point[1];
        Ok(if n % 2 == 0 {
            mask * phase.cos()
        } else {
            mask * phase.sin()
        })
    }

    pub fn eval_basis_gradient(&self, n: usize, point: [f64; 2]) -> Result<[f64; 2]> {
        self.check_index(n)?;
        let r = point[0].hypot(point[1]);
        let mask = self.radial_mask(r);
        let dmask = self.radial_mask_derivative(r);
        let grad_mask = if r > 0.0 {
            [dmask * point[0] / r, dmask * point[1] / r]
        } else {
            [0.0, 0.0]
        };
        let w = self.omegas[n / 2];
        let phase = w[0] * point[0] + w[1] * point[1];
        let (s, c) = phase.sin_cos();
        Ok(if n % 2 == 0 {
            [
                grad_mask[0] * c - mask * s * w[0],
                grad_mask[1] * c - mask * s * w[1],
            ]
        } else {
            [
                grad_mask[0] * s + mask * c * w[0],
                grad_mask[1] * s + mask * c * w[1],
            ]
        })
    }

    /// Every basis function evaluated at `point`, in index order.
    pub fn eval_all(&self, point: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_all_into(point, &mut out);
        out
    }

    fn eval_all_into(&self, point: [f64; 2], out: &mut [f64]) {
        let mask = self.radial_mask(point[0].hypot(point[1]));
        if mask == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for (f, w) in self.omegas.iter().enumerate() {
            let (s, c) = (w[0] * point[0] + w[1] * point[1]).sin_cos();
            out[2 * f] = mask * c;
            out[2 * f + 1] = mask * s;
        }
    }

    fn eval_all_with_gradient_into(&self, point: [f64; 2], vals: &mut [f64], grads: &mut [[f64; 2]]) {
        let r = point[0].hypot(point[1]);
        let mask = self.radial_mask(r);
        if mask == 0.0 {
            vals.iter_mut().for_each(|v| *v = 0.0);
            grads.iter_mut().for_each(|g| *g = [0.0, 0.0]);
            return;
        }
        let dmask = self.radial_mask_derivative(r);
        let gm = if r > 0.0 {
            [dmask * point[0] / r, dmask * point[1] / r]
        } else {
            [0.0, 0.0]
        };
        for (f, w) in self.omegas.iter().enumerate() {
            let (s, c) = (w[0] * point[0] + w[1] * point[1]).sin_cos();
            vals[2 * f] = mask * c;
            vals[2 * f + 1] = mask * s;
            grads[2 * f] = [gm[0] * c - mask * s * w[0], gm[1] * c - mask * s * w[1]];
            grads[2 * f + 1] = [gm[0] * s + mask * c * w[0], gm[1] * s + mask * c * w[1]];
        }
    }

    /// Samples every basis function at the transformed grid `T * x_ij`.
    pub fn sample_grid(&self, transform: &Mat2) -> GridSamples {
        let n = self.len();
        let pts = self.p * self.p;
        let mut values = vec![0.0; pts * n];
        for (g, x) in self.grid.iter().enumerate() {
            self.eval_all_into(mat_vec(transform, *x), &mut values[g * n..(g + 1) * n]);
        }
        GridSamples {
            p: self.p,
            n,
            values,
            gradients: None,
        }
    }

    /// Like [`sample_grid`](Self::sample_grid) but also keeps spatial
    /// gradients, so kernels can be differentiated with respect to `T`.
    pub fn sample_grid_with_gradient(&self, transform: &Mat2) -> GridSamples {
        let n = self.len();
        let pts = self.p * self.p;
        let mut values = vec![0.0; pts * n];
        let mut grads = vec![[0.0; 2]; pts * n];
        for (g, x) in self.grid.iter().enumerate() {
            self.eval_all_with_gradient_into(
                mat_vec(transform, *x),
                &mut values[g * n..(g + 1) * n],
                &mut grads[g * n..(g + 1) * n],
            );
        }
        GridSamples {
            p: self.p,
            n,
            values,
            gradients: Some(grads),
        }
    }

    /// `sum_n w_n phi_n(point)`.
    pub fn reconstruct_at(&self, coeffs: &[f64], point: [f64; 2]) -> Result<f64> {
        self.check_coeffs(coeffs)?;
        Ok(self
            .eval_all(point)
            .iter()
            .zip(coeffs)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub(crate) fn check_coeffs(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.len() {
            return Err(Error::shape(format!(
                "expected {} coefficients for p = {}, got {}",
                self.len(),
                self.p,
                coeffs.len()
            )));
        }
        Ok(())
    }

    fn check_filter(&self, filter: &[f64]) -> Result<()> {
        if filter.len() != self.p * self.p {
            return Err(Error::shape(format!(
                "filter has {} entries, basis expects {}x{}",
                filter.len(),
                self.p,
                self.p
            )));
        }
        Ok(())
    }

    /// Minimum-norm least-squares coefficients for a row-major `p x p` filter.
    ///
    /// The unmasked trigonometric design matrix `F` satisfies
    /// `F F^T = p^2 I` on the grid, so with `A = diag(mask) F` the
    /// pseudo-inverse solution is `w = F^T diag(1 / (p^2 mask)) b` over grid
    /// points with non-zero mask. Points outside the mask support carry
    /// all-zero design rows and cannot be represented.
    pub fn fit_coefficients_ls(&self, filter: &[f64]) -> Result<Vec<f64>> {
        self.check_filter(filter)?;
        let n = self.len();
        let scale = 1.0 / (self.p * self.p) as f64;
        let mut w = vec![0.0; n];
        for (g, x) in self.grid.iter().enumerate() {
            let mask = self.radial_mask(x[0].hypot(x[1]));
            if mask == 0.0 || filter[g] == 0.0 {
                continue;
            }
            let weight = filter[g] * scale / mask;
            for (f, om) in self.omegas.iter().enumerate() {
                let (s, c) = (om[0] * x[0] + om[1] * x[1]).sin_cos();
                w[2 * f] += weight * c;
                w[2 * f + 1] += weight * s;
            }
        }
        Ok(w)
    }

    /// Fast projection `w_n = (1/p^2) sum_st filter_st phi_n(x_st)`.
    ///
    /// Reconstruction equals `mask^2 * filter` on the grid, so it is exact only
    /// where the mask is 1.
    pub fn project_coefficients(&self, filter: &[f64]) -> Result<Vec<f64>> {
        self.check_filter(filter)?;
        let n = self.len();
        let scale = 1.0 / (self.p * self.p) as f64;
        let mut w = vec![0.0; n];
        let mut phi = vec![0.0; n];
        for (g, x) in self.grid.iter().enumerate() {
            if filter[g] == 0.0 {
                continue;
            }
            self.eval_all_into(*x, &mut phi);
            for (wn, ph) in w.iter_mut().zip(&phi) {
                *wn += scale * filter[g] * ph;
            }
        }
        Ok(w)
    }
}

/// Basis values (and optionally gradients) at the `p^2` transformed grid
/// points, ready to be contracted with any number of coefficient vectors.
#[derive(Clone, Debug)]
pub struct GridSamples {
    p: usize,
    n: usize,
    values: Vec<f64>,
    gradients: Option<Vec<[f64; 2]>>,
}

impl GridSamples {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Row-major `p x p` filter `sum_n w_n phi_n(T x_ij)`.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.n);
        self.values
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(coeffs).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Derivative of [`apply`](Self::apply) along a change `dT` of the
    /// transform: `sum_n w_n grad phi_n(T x) . (dT x)`.
    ///
    /// Panics when the samples were taken without gradients.
    pub fn apply_derivative(&self, coeffs: &[f64], grid: &[[f64; 2]], d_transform: &Mat2) -> Vec<f64> {
        let grads = self
            .gradients
            .as_ref()
            .expect("grid sampled without gradients");
        grads
            .chunks_exact(self.n)
            .zip(grid)
            .map(|(row, x)| {
                let dx = mat_vec(d_transform, *x);
                row.iter()
                    .zip(coeffs)
                    .map(|(g, w)| w * (g[0] * dx[0] + g[1] * dx[1]))
                    .sum()
            })
            .collect()
    }

    /// Gradient of the sampled filter with respect to each coordinate of the
    /// transformed point: returns `(d/dy1, d/dy2)` filters.
    pub fn apply_spatial_gradient(&self, coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let grads = self
            .gradients
            .as_ref()
            .expect("grid sampled without gradients");
        grads
            .chunks_exact(self.n)
            .map(|row| {
                row.iter().zip(coeffs).fold((0.0, 0.0), |(a, b), (g, w)| {
                    (a + w * g[0], b + w * g[1])
                })
            })
            .unzip()
    }
}

/// Rain-factor transform `Omega = {theta, s_l, s_w}`.
///
/// `theta` is in radians, measured clockwise from vertical in image space.
/// `s_l` and `s_w` act on the inverse transform, so larger values give
/// shorter and thinner streaks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    theta: f64,
    s_l: f64,
    s_w: f64,
}

impl TransformParams {
    pub fn new(theta: f64, s_l: f64, s_w: f64) -> Result<Self> {
        if !(s_l > 0.0 && s_w > 0.0) || !s_l.is_finite() || !s_w.is_finite() {
            return Err(Error::NonPositiveScale { s_l, s_w });
        }
        if !theta.is_finite() {
            return Err(Error::invalid(format!("theta must be finite, got {theta}")));
        }
        Ok(Self { theta, s_l, s_w })
    }

    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            s_l: 1.0,
            s_w: 1.0,
        }
    }

    /// Pure rotation.
    pub fn rotation(theta: f64) -> Self {
        Self {
            theta,
            s_l: 1.0,
            s_w: 1.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn s_l(&self) -> f64 {
        self.s_l
    }

    pub fn s_w(&self) -> f64 {
        self.s_w
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Self { theta, ..*self }
    }

    /// `diag(s_w, s_l) * [[cos, -sin], [sin, cos]]`.
    pub fn matrix(&self) -> Mat2 {
        let (s, c) = self.theta.sin_cos();
        [
            [self.s_w * c, -self.s_w * s],
            [self.s_l * s, self.s_l * c],
        ]
    }

    pub fn d_theta(&self) -> Mat2 {
        let (s, c) = self.theta.sin_cos();
        [
            [-self.s_w * s, -self.s_w * c],
            [self.s_l * c, -self.s_l * s],
        ]
    }

    pub fn d_s_l(&self) -> Mat2 {
        let (s, c) = self.theta.sin_cos();
        [[0.0, 0.0], [s, c]]
    }

    pub fn d_s_w(&self) -> Mat2 {
        let (s, c) = self.theta.sin_cos();
        [[c, -s], [0.0, 0.0]]
    }
}

/// The inverse coordinate transform `T_Omega` applied to grid coordinates.
pub fn build_matrix(params: &TransformParams) -> Mat2 {
    params.matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    #[test]
    fn rejects_even_or_zero_size() {
        assert!(BasisSet::new(0).is_err());
        assert!(BasisSet::new(4).is_err());
        assert_eq!(BasisSet::new(11).unwrap().len(), 242);
    }

    #[test]
    fn frequency_index_is_unique() {
        let b = BasisSet::new(5).unwrap();
        let set: std::collections::HashSet<_> = b.frequency_index().iter().collect();
        assert_eq!(set.len(), 50);
    }

    #[test]
    fn grid_convention() {
        let b = BasisSet::new(3).unwrap();
        assert_eq!(b.grid_point(0, 0), [-1.0, 1.0]);
        assert_eq!(b.grid_point(2, 1), [0.0, -1.0]);
        assert_eq!(b.grid_point(1, 2), [1.0, 0.0]);
        let b11 = BasisSet::new(11).unwrap();
        let max_r = b11
            .grid()
            .iter()
            .map(|x| x[0].hypot(x[1]))
            .fold(0.0, f64::max);
        assert!((max_r - 2f64.sqrt() * 5.0).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        let b = BasisSet::new(3).unwrap();
        assert_eq!(b.radial_mask(0.0), 1.0);
        assert_eq!(b.radial_mask(2.0), 0.0);
        assert!((b.radial_mask(1.5) - 0.5).abs() < 1e-15);
        let b11 = BasisSet::new(11).unwrap();
        assert_eq!(b11.radial_mask(6.0), 0.0);
        let mut prev = 1.0;
        for s in 0..=1000 {
            let r = 4.5 + 2.0 * s as f64 / 1000.0;
            let m = b11.radial_mask(r);
            assert!(m <= prev + 1e-15 && (0.0..=1.0).contains(&m));
            prev = m;
        }
    }

    #[test]
    fn basis_values_at_origin_and_outside() {
        let b = BasisSet::new(5).unwrap();
        for n in 0..b.len() {
            let v = b.eval_basis(n, [0.0, 0.0]).unwrap();
            if n % 2 == 0 {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
            assert_eq!(b.eval_basis(n, [3.0, 4.0]).unwrap(), 0.0);
        }
        assert!(matches!(
            b.eval_basis(50, [0.0, 0.0]),
            Err(Error::IndexOutOfRange { index: 50, len: 50 })
        ));
        assert!(b.eval_basis_gradient(50, [0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let b = BasisSet::new(5).unwrap();
        for n in (1..b.len()).step_by(2) {
            let f = b.frequency(n).unwrap();
            assert_eq!(b.eval_basis_gradient(n, [0.0, 0.0]).unwrap(), f);
        }
        for n in 0..b.len() {
            assert_eq!(
                b.eval_basis_gradient(n, [b.mask_outer_radius() + 1.0, 0.0]).unwrap(),
                [0.0, 0.0]
            );
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        let mut checked = 0;
        for p in [3usize, 5, 11] {
            let b = BasisSet::new(p).unwrap();
            for _ in 0..400 {
                let n = rng.random_range(0..b.len());
                let r1 = b.mask_outer_radius();
                let x = [rng.random_range(-r1..r1), rng.random_range(-r1..r1)];
                let r = x[0].hypot(x[1]);
                // central differences straddling a mask knot see the jump in
                // the second derivative
                if (r - b.mask_inner_radius()).abs() < 4.0 * h || (r - r1).abs() < 4.0 * h {
                    continue;
                }
                let g = b.eval_basis_gradient(n, x).unwrap();
                for axis in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[axis] += h;
                    xm[axis] -= h;
                    let fd = (b.eval_basis(n, xp).unwrap() - b.eval_basis(n, xm).unwrap())
                        / (2.0 * h);
                    assert!(
                        rel_err(g[axis], fd, 1e-3) <= 1e-6,
                        "p={p} n={n} x={x:?} axis={axis}: {} vs {fd}",
                        g[axis]
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 2000);
    }

    #[test]
    fn matrix_examples() {
        let id = build_matrix(&TransformParams::new(0.0, 1.0, 1.0).unwrap());
        assert_eq!(id, [[1.0, 0.0], [0.0, 1.0]]);
        let m = build_matrix(&TransformParams::new(PI / 6.0, 1.0, 1.0).unwrap());
        let want = [[0.8660254, -0.5], [0.5, 0.8660254]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((m[r][c] - want[r][c]).abs() < 1e-7);
            }
        }
        let m = build_matrix(&TransformParams::new(PI / 2.0, 2.0, 0.5).unwrap());
        let want = [[0.0, -0.5], [2.0, 0.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((m[r][c] - want[r][c]).abs() < 1e-15);
            }
        }
        assert!(matches!(
            TransformParams::new(0.0, 0.0, 1.0),
            Err(Error::NonPositiveScale { .. })
        ));
        assert!(TransformParams::new(0.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn rotation_matrix_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = TransformParams::rotation(rng.random_range(-10.0..10.0)).matrix();
            let mtm = [
                [
                    t[0][0] * t[0][0] + t[1][0] * t[1][0],
                    t[0][0] * t[0][1] + t[1][0] * t[1][1],
                ],
                [
                    t[0][1] * t[0][0] + t[1][1] * t[1][0],
                    t[0][1] * t[0][1] + t[1][1] * t[1][1],
                ],
            ];
            assert!((mtm[0][0] - 1.0).abs() < 1e-12);
            assert!((mtm[1][1] - 1.0).abs() < 1e-12);
            assert!(mtm[0][1].abs() < 1e-12 && mtm[1][0].abs() < 1e-12);
            let det = t[0][0] * t[1][1] - t[0][1] * t[1][0];
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_filter_gives_zero_coefficients() {
        let b = BasisSet::new(11).unwrap();
        assert!(b.fit_coefficients_ls(&[0.0; 121]).unwrap().iter().all(|&w| w == 0.0));
        assert!(b.project_coefficients(&[0.0; 121]).unwrap().iter().all(|&w| w == 0.0));
        assert!(b.fit_coefficients_ls(&[0.0; 120]).is_err());
        assert!(b.project_coefficients(&[0.0; 9]).is_err());
    }

    #[test]
    fn corner_pixel_is_unrepresentable() {
        let b = BasisSet::new(11).unwrap();
        let mut f = vec![0.0; 121];
        f[0] = 1.0;
        assert_eq!(b.grid_mask(0, 0), 0.0);
        let w = b.fit_coefficients_ls(&f).unwrap();
        let rec = b.reconstruct_at(&w, b.grid_point(0, 0)).unwrap();
        assert_eq!(rec, 0.0);
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_reproduces_vertical_difference_inside_mask() {
        let b = BasisSet::new(3).unwrap();
        let d = [0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0];
        let w = b.project_coefficients(&d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if b.grid_mask(i, j) == 1.0 {
                    let rec = b.reconstruct_at(&w, b.grid_point(i, j)).unwrap();
                    assert!((rec - d[i * 3 + j]).abs() < 1e-6);
                }
            }
        }
        let mask_one = (0..9).filter(|g| b.grid_mask(g / 3, g % 3) == 1.0).count();
        assert_eq!(mask_one, 5);
    }

    #[test]
    fn projection_of_ones_is_self_consistent_at_origin() {
        let b = BasisSet::new(5).unwrap();
        let w = b.project_coefficients(&[1.0; 25]).unwrap();
        // at the origin cos terms are 1 and sin terms 0
        let direct: f64 = w.iter().step_by(2).sum();
        let rec = b.reconstruct_at(&w, [0.0, 0.0]).unwrap();
        assert!((rec - direct).abs() < 1e-12);
        assert!(rec >= 0.0);
    }

    #[test]
    fn refit_is_idempotent_on_masked_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = BasisSet::new(7).unwrap();
        let w: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples = b.sample_grid(&TransformParams::identity().matrix());
        let first = samples.apply(&w);
        let refit = b.fit_coefficients_ls(&first).unwrap();
        let second = samples.apply(&refit);
        for g in 0..49 {
            if b.grid_mask(g / 7, g % 7) > 0.0 {
                assert!((first[g] - second[g]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transform_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = BasisSet::new(5).unwrap();
        let h = 1e-4;
        for _ in 0..100 {
            let w: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = TransformParams::new(
                rng.random_range(-PI..PI),
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
            )
            .unwrap();
            let g = rng.random_range(0..25);
            let samples = b.sample_grid_with_gradient(&t.matrix());
            let eval = |p: TransformParams| b.sample_grid(&p.matrix()).apply(&w)[g];
            let cases = [
                (
                    t.d_theta(),
                    eval(t.with_theta(t.theta() + h)),
                    eval(t.with_theta(t.theta() - h)),
                ),
                (
                    t.d_s_l(),
                    eval(TransformParams::new(t.theta(), t.s_l() + h, t.s_w()).unwrap()),
                    eval(TransformParams::new(t.theta(), t.s_l() - h, t.s_w()).unwrap()),
                ),
                (
                    t.d_s_w(),
                    eval(TransformParams::new(t.theta(), t.s_l(), t.s_w() + h).unwrap()),
                    eval(TransformParams::new(t.theta(), t.s_l(), t.s_w() - h).unwrap()),
                ),
            ];
            for (dm, plus, minus) in cases {
                let analytic = samples.apply_derivative(&w, b.grid(), &dm)[g];
                let fd = (plus - minus) / (2.0 * h);
                if analytic.abs() < 1e-10 && fd.abs() < 1e-10 {
                    continue;
                }
                assert!(
                    rel_err(analytic, fd, 1e-2) <= 1e-4,
                    "{analytic} vs {fd}"
                );
            }
        }
    }
}
