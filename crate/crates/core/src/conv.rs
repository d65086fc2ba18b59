//! Zero-padded "same" cross-correlation over multichannel fields.
//!
//! `out[y, x, o] = sum_{i, j, k} in[y + i - c, x + j - c, k] * K[i, j, o, k]`
//! with `c = size / 2` and out-of-range input treated as zero. Per output
//! element the summation order is fixed (taps row-major, then input
//! channels), so results do not depend on how rows are split across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rain_kernel::RainKernels;
use crate::tensor::{KernelTensor, Tensor3};

pub fn conv_same(input: &Tensor3, kernel: &KernelTensor) -> Result<Tensor3> {
    if input.channels() != kernel.c_in() {
        return Err(Error::shape(format!(
            "input has {} channels, kernel expects {}",
            input.channels(),
            kernel.c_in()
        )));
    }
    if kernel.size() % 2 == 0 {
        return Err(Error::shape(format!("kernel size {} is even", kernel.size())));
    }
    let (h, w, cin) = input.shape();
    let cout = kernel.c_out();
    let size = kernel.size() as isize;
    let half = size / 2;
    let pairs = kernel.active_pairs();
    let src = input.data();
    let kd = kernel.data();
    let mut out = Tensor3::zeros(h, w, cout);
    if h == 0 || w == 0 || cout == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(w * cout)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as isize;
            let i_lo = (half - y).max(0);
            let i_hi = (h as isize - y + half).min(size);
            for x in 0..w as isize {
                let j_lo = (half - x).max(0);
                let j_hi = (w as isize - x + half).min(size);
                let acc = &mut row[x as usize * cout..(x as usize + 1) * cout];
                for i in i_lo..i_hi {
                    let sy = (y + i - half) as usize;
                    for j in j_lo..j_hi {
                        let sx = (x + j - half) as usize;
                        let px = &src[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                        let tap = ((i * size + j) as usize) * cout * cin;
                        for &(o, k) in &pairs {
                            acc[o] += px[k] * kd[tap + o * cin + k];
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Adjoint of [`conv_same`] in its input: maps an output-space gradient to
/// an input-space gradient.
pub fn conv_same_adjoint(grad_out: &Tensor3, kernel: &KernelTensor) -> Result<Tensor3> {
    conv_same(grad_out, &kernel.adjoint())
}

/// Gradient of `<grad_out, conv_same(input, K)>` with respect to `K`,
/// restricted to the listed `(o, k)` channel pairs (all pairs when `None`).
pub fn kernel_gradient(
    input: &Tensor3,
    grad_out: &Tensor3,
    size: usize,
    pairs: Option<&[(usize, usize)]>,
) -> Result<KernelTensor> {
    if input.height() != grad_out.height() || input.width() != grad_out.width() {
        return Err(Error::shape("kernel gradient: spatial sizes differ"));
    }
    let (h, w, cin) = input.shape();
    let cout = grad_out.channels();
    let all: Vec<(usize, usize)>;
    let pairs = match pairs {
        Some(p) => p,
        None => {
            all = (0..cout).flat_map(|o| (0..cin).map(move |k| (o, k))).collect();
            &all
        }
    };
    let half = (size / 2) as isize;
    let src = input.data();
    let g = grad_out.data();
    let taps: Vec<Vec<f64>> = (0..size * size)
        .into_par_iter()
        .map(|t| {
            let di = (t / size) as isize - half;
            let dj = (t % size) as isize - half;
            let mut acc = vec![0.0; cout * cin];
            let y_lo = (-di).max(0) as usize;
            let y_hi = (h as isize - di).min(h as isize).max(0) as usize;
            let x_lo = (-dj).max(0) as usize;
            let x_hi = (w as isize - dj).min(w as isize).max(0) as usize;
            for y in y_lo..y_hi {
                let sy = (y as isize + di) as usize;
                for x in x_lo..x_hi {
                    let sx = (x as isize + dj) as usize;
                    let gp = &g[(y * w + x) * cout..(y * w + x + 1) * cout];
                    let ip = &src[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    for &(o, k) in pairs {
                        acc[o * cin + k] += gp[o] * ip[k];
                    }
                }
            }
            acc
        })
        .collect();
    let data = taps.into_iter().flatten().collect();
    KernelTensor::from_vec(size, cout, cin, data)
}

/// `<a, b>` over two equally shaped kernels.
pub fn kernel_dot(a: &KernelTensor, b: &KernelTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Applies the stages in order; with one stage this is exactly [`conv_same`].
pub fn cascade_conv(map: &Tensor3, stages: &[RainKernels]) -> Result<Tensor3> {
    if stages.is_empty() {
        return Err(Error::invalid("cascade needs at least one stage"));
    }
    let mut cur = conv_same(map, &stages[0].kernel)?;
    for stage in &stages[1..] {
        cur = conv_same(&cur, &stage.kernel)?;
    }
    Ok(cur)
}

/// Same as [`cascade_conv`] on bare kernels, returning every intermediate
/// field (`fields[0]` is the input, the last entry the output).
pub fn cascade_fields(map: &Tensor3, kernels: &[&KernelTensor]) -> Result<Vec<Tensor3>> {
    let mut fields = Vec::with_capacity(kernels.len() + 1);
    fields.push(map.clone());
    for k in kernels {
        let next = conv_same(fields.last().unwrap(), k)?;
        fields.push(next);
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
        Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_kernel(rng: &mut ChaCha8Rng, s: usize, o: usize, i: usize) -> KernelTensor {
        KernelTensor::from_vec(s, o, i, (0..s * s * o * i).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Straight from the definition, no bounds trickery.
    fn naive(input: &Tensor3, k: &KernelTensor) -> Tensor3 {
        let (h, w, cin) = input.shape();
        let c = (k.size() / 2) as isize;
        Tensor3::from_fn(h, w, k.c_out(), |y, x, o| {
            let mut acc = 0.0;
            for i in 0..k.size() {
                for j in 0..k.size() {
                    let sy = y as isize + i as isize - c;
                    let sx = x as isize + j as isize - c;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    for ch in 0..cin {
                        acc += input.get(sy as usize, sx as usize, ch) * k.get(i, j, o, ch);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, 9, 7, 3);
        let k = random_kernel(&mut rng, 5, 2, 3);
        assert!(conv_same(&input, &k).unwrap().max_abs_diff(&naive(&input, &k)) < 1e-12);
        let big = random_kernel(&mut rng, 11, 1, 3);
        assert!(conv_same(&input, &big).unwrap().max_abs_diff(&naive(&input, &big)) < 1e-12);
    }

    #[test]
    fn delta_kernel_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&mut rng, 6, 6, 4);
        let out = conv_same(&input, &KernelTensor::delta(3, 3, 4)).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let s: f64 = (0..4).map(|k| input.get(y, x, k)).sum();
                for c in 0..3 {
                    assert!((out.get(y, x, c) - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn single_pixel_sees_centre_tap() {
        let input = Tensor3::filled(1, 1, 1, 2.5);
        let k = KernelTensor::from_vec(3, 1, 1, (1..=9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(conv_same(&input, &k).unwrap().get(0, 0, 0), 2.5 * 5.0);
    }

    #[test]
    fn is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_tensor(&mut rng, 8, 8, 2);
        let v = random_tensor(&mut rng, 8, 8, 2);
        let k = random_kernel(&mut rng, 3, 3, 2);
        let (a, b) = (1.7, -0.4);
        let mix = u.zip_map(&v, |p, q| a * p + b * q).unwrap();
        let lhs = conv_same(&mix, &k).unwrap();
        let rhs = conv_same(&u, &k)
            .unwrap()
            .zip_map(&conv_same(&v, &k).unwrap(), |p, q| a * p + b * q)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn adjoint_and_kernel_gradient_satisfy_dot_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, 7, 9, 3);
        let k = random_kernel(&mut rng, 5, 2, 3);
        let g = random_tensor(&mut rng, 7, 9, 2);
        let y = conv_same(&x, &k).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let xt = conv_same_adjoint(&g, &k).unwrap();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let gk = kernel_gradient(&x, &g, 5, None).unwrap();
        assert!((kernel_dot(&gk, &k) - lhs).abs() < 1e-10);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor3::zeros(4, 4, 2);
        assert!(conv_same(&input, &KernelTensor::zeros(3, 1, 3)).is_err());
        assert!(conv_same(&input, &KernelTensor::zeros(4, 1, 2)).is_err());
        assert!(cascade_conv(&input, &[]).is_err());
    }
}
