//! Dense float64 containers for images, feature maps and convolution kernels.

use crate::error::{Error, Result};

/// An `H x W x C` field stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "buffer of {} values cannot hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor3 {
        self.map(|v| v * s)
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.ensure_same_shape(other, "elementwise op")?;
        Ok(Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Stacks the channels of `self` followed by those of `other`.
    pub fn concat_channels(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(format!(
                "concat: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * channels);
        for (a, b) in self
            .data
            .chunks_exact(self.channels.max(1))
            .zip(other.data.chunks_exact(other.channels.max(1)))
        {
            data.extend_from_slice(&a[..self.channels]);
            data.extend_from_slice(&b[..other.channels]);
        }
        Tensor3::from_vec(self.height, self.width, channels, data)
    }

    /// Copy of the channels `range`.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Result<Tensor3> {
        if range.end > self.channels || range.start > range.end {
            return Err(Error::shape(format!(
                "channel range {range:?} outside 0..{}",
                self.channels
            )));
        }
        let r = range.clone();
        Ok(Tensor3::from_fn(self.height, self.width, r.len(), |y, x, c| {
            self.get(y, x, range.start + c)
        }))
    }

    /// Rotates the content a quarter turn clockwise: `out[i][j] = in[H-1-j][i]`.
    ///
    /// This matches the grid permutation induced by adding 90 degrees to a
    /// kernel's orientation.
    pub fn rotate_quarter_cw(&self) -> Tensor3 {
        let (h, w, c) = self.shape();
        Tensor3::from_fn(w, h, c, |i, j, ch| self.get(h - 1 - j, i, ch))
    }
}

/// A bank of square kernels `size x size x c_out x c_in`.
///
/// Entry `(i, j, o, k)` couples input channel `k` to output channel `o` at
/// tap row `i`, column `j`; the centre tap sits at `(size / 2, size / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor {
    size: usize,
    c_out: usize,
    c_in: usize,
    data: Vec<f64>,
}

impl KernelTensor {
    pub fn zeros(size: usize, c_out: usize, c_in: usize) -> Self {
        Self {
            size,
            c_out,
            c_in,
            data: vec![0.0; size * size * c_out * c_in],
        }
    }

    pub fn from_vec(size: usize, c_out: usize, c_in: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size * c_out * c_in {
            return Err(Error::shape(format!(
                "buffer of {} values cannot hold {size}x{size}x{c_out}x{c_in}",
                data.len()
            )));
        }
        Ok(Self {
            size,
            c_out,
            c_in,
            data,
        })
    }

    /// Kernel whose only non-zero tap is the centre, equal to `1` for every
    /// `(o, k)` pair.
    pub fn delta(size: usize, c_out: usize, c_in: usize) -> Self {
        let mut k = Self::zeros(size, c_out, c_in);
        let c = size / 2;
        for o in 0..c_out {
            for i in 0..c_in {
                k.set(c, c, o, i, 1.0);
            }
        }
        k
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn c_out(&self) -> usize {
        self.c_out
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, o: usize, k: usize) -> usize {
        ((i * self.size + j) * self.c_out + o) * self.c_in + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, o: usize, k: usize) -> f64 {
        self.data[self.index(i, j, o, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, o: usize, k: usize, v: f64) {
        let idx = self.index(i, j, o, k);
        self.data[idx] = v;
    }

    pub fn scaled(&self, s: f64) -> KernelTensor {
        KernelTensor {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn max_abs_diff(&self, other: &KernelTensor) -> f64 {
        assert_eq!(
            (self.size, self.c_out, self.c_in),
            (other.size, other.c_out, other.c_in)
        );
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `(o, k)` pairs with at least one non-zero tap.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for o in 0..self.c_out {
            for k in 0..self.c_in {
                let live = (0..self.size)
                    .any(|i| (0..self.size).any(|j| self.get(i, j, o, k) != 0.0));
                if live {
                    pairs.push((o, k));
                }
            }
        }
        pairs
    }

    /// Kernel of the adjoint operator: point-reflected taps with the channel
    /// roles swapped.
    pub fn adjoint(&self) -> KernelTensor {
        let s = self.size;
        let mut out = KernelTensor::zeros(s, self.c_in, self.c_out);
        for i in 0..s {
            for j in 0..s {
                for o in 0..self.c_out {
                    for k in 0..self.c_in {
                        out.set(s - 1 - i, s - 1 - j, k, o, self.get(i, j, o, k));
                    }
                }
            }
        }
        out
    }

    /// Spatial quarter turn clockwise, channel layout unchanged.
    pub fn rotate_quarter_cw(&self) -> KernelTensor {
        let s = self.size;
        let mut out = KernelTensor::zeros(s, self.c_out, self.c_in);
        for i in 0..s {
            for j in 0..s {
                for o in 0..self.c_out {
                    for k in 0..self.c_in {
                        out.set(i, j, o, k, self.get(s - 1 - j, i, o, k));
                    }
                }
            }
        }
        out
    }
}
