use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rainforge::rain_kernel::discretize_kernel;
use rainforge::{build_matrix, BasisSet, TransformParams};

/// Dense design matrix `A[g][n] = phi_n(x_g)` including the mask.
fn design(basis: &BasisSet) -> DMatrix<f64> {
    let p = basis.p();
    DMatrix::from_fn(p * p, basis.len(), |g, n| basis.eval_basis(n, basis.grid()[g]).unwrap())
}

/// Minimum-norm solution `A^T (A A^T)^-1 b` over the rows the mask keeps;
/// rows with zero mask are identically zero and drop out of the pseudo-inverse.
fn pinv_solve(basis: &BasisSet, filter: &[f64]) -> Vec<f64> {
    let full = design(basis);
    let keep: Vec<usize> = (0..full.nrows()).filter(|&g| full.row(g).norm() > 0.0).collect();
    let a = full.select_rows(&keep);
    let b = DMatrix::from_iterator(keep.len(), 1, keep.iter().map(|&g| filter[g]));
    let y = (&a * a.transpose()).lu().solve(&b).unwrap();
    (a.transpose() * y).column(0).iter().copied().collect()
}

fn masked_points(basis: &BasisSet) -> Vec<(usize, usize)> {
    let p = basis.p();
    (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| basis.grid_mask(i, j) > 0.0)
        .collect()
}

#[test]
fn least_squares_fit_matches_svd_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in [3, 5, 11] {
        let basis = BasisSet::new(p).unwrap();
        for _ in 0..5 {
            let filter: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ours = basis.fit_coefficients_ls(&filter).unwrap();
            let oracle = pinv_solve(&basis, &filter);
            let worst = ours.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "p = {p}: {worst}");
        }
    }
}

#[test]
fn centred_delta_is_reconstructed_on_masked_points() {
    let basis = BasisSet::new(11).unwrap();
    let mut delta = vec![0.0; 121];
    delta[60] = 1.0;
    let w = basis.fit_coefficients_ls(&delta).unwrap();
    let recon = discretize_kernel(&basis, &w, &TransformParams::identity()).unwrap();
    for (i, j) in masked_points(&basis) {
        assert!((recon[i * 11 + j] - delta[i * 11 + j]).abs() < 1e-8);
    }
}

#[test]
fn projection_reproduces_difference_filter_where_mask_is_one() {
    let basis = BasisSet::new(3).unwrap();
    let d = [0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0];
    let w = basis.project_coefficients(&d).unwrap();
    let mut full_mask = 0;
    for (g, x) in basis.grid().iter().enumerate() {
        if basis.grid_mask(g / 3, g % 3) == 1.0 {
            full_mask += 1;
            let direct: f64 = (0..basis.len()).map(|n| w[n] * basis.eval_basis(n, *x).unwrap()).sum();
            assert!((direct - d[g]).abs() < 1e-6);
        }
    }
    assert_eq!(full_mask, 5);
}

#[test]
fn all_ones_projection_at_origin_is_the_coefficient_sum() {
    let basis = BasisSet::new(5).unwrap();
    let w = basis.project_coefficients(&[1.0; 25]).unwrap();
    let at_origin = basis.reconstruct_at(&w, [0.0, 0.0]).unwrap();
    // sines vanish at the origin and the mask is 1 there
    let cos_sum: f64 = w.iter().step_by(2).sum();
    assert!((at_origin - cos_sum).abs() < 1e-12);
    assert!(at_origin >= 0.0);
}

#[test]
fn transform_matrix_examples() {
    assert_eq!(build_matrix(&TransformParams::new(0.0, 1.0, 1.0).unwrap()), [[1.0, 0.0], [0.0, 1.0]]);
    let m = build_matrix(&TransformParams::new(std::f64::consts::FRAC_PI_2, 2.0, 0.5).unwrap());
    let expect = [[0.0, -0.5], [2.0, 0.0]];
    for r in 0..2 {
        for c in 0..2 {
            assert!((m[r][c] - expect[r][c]).abs() < 1e-15);
        }
    }
    assert!(TransformParams::new(0.0, 0.0, 1.0).is_err());
    assert!(TransformParams::new(0.0, 1.0, -1.0).is_err());
}

#[test]
fn factor_derivatives_match_finite_differences() {
    let basis = BasisSet::new(7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w: Vec<f64> = (0..basis.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (t, l, s) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
        );
        let g = rng.random_range(0..49);
        let value = |t: f64, l: f64, s: f64| {
            discretize_kernel(&basis, &w, &TransformParams::new(t, l, s).unwrap()).unwrap()[g]
        };
        let x = basis.grid()[g];
        let params = TransformParams::new(t, l, s).unwrap();
        for (dm, fd) in [
            (params.d_theta(), (value(t + h, l, s) - value(t - h, l, s)) / (2.0 * h)),
            (params.d_s_l(), (value(t, l + h, s) - value(t, l - h, s)) / (2.0 * h)),
            (params.d_s_w(), (value(t, l, s + h) - value(t, l, s - h)) / (2.0 * h)),
        ] {
            let m = params.matrix();
            let y = [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]];
            let dy = [dm[0][0] * x[0] + dm[0][1] * x[1], dm[1][0] * x[0] + dm[1][1] * x[1]];
            let analytic: f64 = (0..basis.len())
                .map(|n| {
                    let gr = basis.eval_basis_gradient(n, y).unwrap();
                    w[n] * (gr[0] * dy[0] + gr[1] * dy[1])
                })
                .sum();
            let scale = analytic.abs().max(fd.abs());
            if scale > 1e-6 {
                worst = worst.max((analytic - fd).abs() / scale);
            }
        }
    }
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn basis_gradient_matches_finite_differences() {
    let basis = BasisSet::new(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for _ in 0..200 {
        let n = rng.random_range(0..basis.len());
        let x = [rng.random_range(-3.2..3.2), rng.random_range(-3.2..3.2)];
        let g = basis.eval_basis_gradient(n, x).unwrap();
        for axis in 0..2 {
            let mut a = x;
            let mut b = x;
            a[axis] += h;
            b[axis] -= h;
            let fd = (basis.eval_basis(n, a).unwrap() - basis.eval_basis(n, b).unwrap()) / (2.0 * h);
            let scale = fd.abs().max(g[axis].abs());
            if scale > 1e-6 {
                assert!((fd - g[axis]).abs() / scale <= 1e-6, "n {n} at {x:?}");
            }
        }
    }
}

fn coeffs_strategy(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2 * p * p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quarter_turns_permute_the_grid(w in coeffs_strategy(5), quarter in 1usize..4) {
        let basis = BasisSet::new(5).unwrap();
        let base = discretize_kernel(&basis, &w, &TransformParams::identity()).unwrap();
        let turned = discretize_kernel(
            &basis,
            &w,
            &TransformParams::rotation(quarter as f64 * std::f64::consts::FRAC_PI_2),
        )
        .unwrap();
        let mut expect = base.clone();
        for _ in 0..quarter {
            expect = (0..25).map(|g| expect[(4 - g % 5) * 5 + g / 5]).collect();
        }
        for (a, b) in turned.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn refitting_a_discretization_is_idempotent(w in coeffs_strategy(7)) {
        let basis = BasisSet::new(7).unwrap();
        let k = discretize_kernel(&basis, &w, &TransformParams::identity()).unwrap();
        let refit = basis.fit_coefficients_ls(&k).unwrap();
        let again = discretize_kernel(&basis, &refit, &TransformParams::identity()).unwrap();
        for (i, j) in masked_points(&basis) {
            prop_assert!((again[i * 7 + j] - k[i * 7 + j]).abs() <= 1e-9);
        }
    }

    #[test]
    fn discretization_is_linear(a in coeffs_strategy(3), b in coeffs_strategy(3), t in -3.0f64..3.0, c in -2.0f64..2.0) {
        let basis = BasisSet::new(3).unwrap();
        let params = TransformParams::new(t, 0.7, 1.2).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
        let ka = discretize_kernel(&basis, &a, &params).unwrap();
        let kb = discretize_kernel(&basis, &b, &params).unwrap();
        let km = discretize_kernel(&basis, &mix, &params).unwrap();
        for g in 0..9 {
            prop_assert!((km[g] - ka[g] - c * kb[g]).abs() <= 1e-12);
        }
    }
}

