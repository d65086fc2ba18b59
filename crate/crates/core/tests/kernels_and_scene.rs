use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rainforge::conv::{cascade_fields, conv_same, conv_same_adjoint};
use rainforge::factors::{FactorConfig, FactorDistribution, SeedLineage};
use rainforge::rain_kernel::{build_cascade, streak_init_dictionary};
use rainforge::resnet::RotResNetWeights;
use rainforge::scene::{
    compose_rain_layer, generate_rain_map, merge_additive, rain_layer_unclamped, rain_map_preactivation,
    sparsity, standard_normal_noise, threshold_relu,
};
use rainforge::{BasisSet, KernelTensor, Tensor3, TransformParams};

fn random_tensor(h: usize, w: usize, c: usize, seed: u64) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_kernel(size: usize, c_out: usize, c_in: usize, seed: u64) -> KernelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size * c_out * c_in;
    KernelTensor::from_vec(size, c_out, c_in, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor3, b: &Tensor3) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn one_pixel_input_sees_only_the_centre_tap() {
    let k = random_kernel(3, 2, 1, 1);
    let out = conv_same(&Tensor3::filled(1, 1, 1, 0.7), &k).unwrap();
    for o in 0..2 {
        assert_eq!(out.get(0, 0, o), 0.7 * k.get(1, 1, o, 0));
    }
}

/// Direct full-support composition of two cross-correlation kernels.
fn compose(a: &KernelTensor, b: &KernelTensor) -> KernelTensor {
    let size = a.size() + b.size() - 1;
    let mut c = KernelTensor::zeros(size, b.c_out(), a.c_in());
    for ia in 0..a.size() {
        for ja in 0..a.size() {
            for ib in 0..b.size() {
                for jb in 0..b.size() {
                    for o in 0..b.c_out() {
                        for m in 0..b.c_in() {
                            for k in 0..a.c_in() {
                                let v = c.get(ia + ib, ja + jb, o, k) + b.get(ib, jb, o, m) * a.get(ia, ja, m, k);
                                c.set(ia + ib, ja + jb, o, k, v);
                            }
                        }
                    }
                }
            }
        }
    }
    c
}

#[test]
fn cascade_on_padded_canvas_equals_composed_kernel() {
    let kernels = [random_kernel(3, 2, 2, 2), random_kernel(5, 2, 2, 3), random_kernel(3, 3, 2, 4)];
    let composed = compose(&compose(&kernels[0], &kernels[1]), &kernels[2]);
    assert_eq!(composed.size(), 9);
    let map = random_tensor(20, 17, 2, 5);
    let pad = 4;
    let canvas = Tensor3::from_fn(20 + 2 * pad, 17 + 2 * pad, 2, |y, x, c| {
        if (pad..20 + pad).contains(&y) && (pad..17 + pad).contains(&x) {
            map.get(y - pad, x - pad, c)
        } else {
            0.0
        }
    });
    let refs: Vec<&KernelTensor> = kernels.iter().collect();
    let stepwise = cascade_fields(&canvas, &refs).unwrap().pop().unwrap();
    let single = conv_same(&map, &composed).unwrap();
    for y in 0..20 {
        for x in 0..17 {
            for c in 0..3 {
                assert!((stepwise.get(y + pad, x + pad, c) - single.get(y, x, c)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fitted_streak_atoms_are_nonnegative_vertical_segments() {
    let dict = streak_init_dictionary(11, 30, 9).unwrap();
    let basis = BasisSet::new(11).unwrap();
    let atoms = dict.discretize(&basis, &[TransformParams::identity()], false).unwrap();
    for m in 0..atoms.len() {
        let a = atoms.atom(m);
        let mut columns = [0.0; 11];
        for i in 0..11 {
            for j in 0..11 {
                let v = a[(i * 11 + j) * 3];
                if basis.grid_mask(i, j) > 0.0 {
                    assert!(v >= -1e-6, "atom {m} at ({i}, {j}): {v}");
                }
                columns[j] += v;
            }
        }
        let peak = (0..11).max_by(|&x, &y| columns[x].total_cmp(&columns[y])).unwrap();
        assert_eq!(peak, 5, "atom {m} is not centred");
        assert!(columns[..=5].windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(columns[5..].windows(2).all(|w| w[0] + 1e-12 >= w[1]));
    }
}

fn small_scene(seed: u64) -> (Tensor3, RotResNetWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = standard_normal_noise(24, 24, 2, &mut rng);
    let weights = RotResNetWeights::seeded(2, 4, 2, 1, seed, 0.5).unwrap();
    (noise, weights)
}

#[test]
fn rain_layer_rotates_with_the_scene() {
    let (noise, weights) = small_scene(7);
    let dict = streak_init_dictionary(7, 4, 3).unwrap();
    let mut factors = rainforge::factors::sample_factors(
        &FactorConfig::default(),
        rainforge::factors::SampleShape {
            atoms: 4,
            maps: 2,
            stages: 2,
            per_atom_theta: false,
        },
        SeedLineage::new(1, 0),
    )
    .unwrap();
    let theta = 0.3f64;
    let layer_at = |noise: &Tensor3, t: f64, f: &mut rainforge::factors::RainFactorSample| {
        f.theta_deg = vec![t.to_degrees()];
        let map = generate_rain_map(noise, t, 0.2, &weights).unwrap();
        compose_rain_layer(&map, &build_cascade(&dict, f).unwrap().stages).unwrap()
    };
    let base = layer_at(&noise, theta, &mut factors);
    let turned = layer_at(&noise.rotate_quarter_cw(), theta + std::f64::consts::FRAC_PI_2, &mut factors);
    assert!(base.max() > 0.0);
    assert!(turned.max_abs_diff(&base.rotate_quarter_cw()) <= 1e-10);
}

#[test]
fn zero_map_leaves_the_background_alone() {
    let bg = Tensor3::from_fn(9, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f64 / 189.0);
    let dict = streak_init_dictionary(5, 3, 1).unwrap();
    let f = rainforge::factors::sample_factors(
        &FactorConfig::default(),
        rainforge::factors::SampleShape {
            atoms: 3,
            maps: 2,
            stages: 3,
            per_atom_theta: false,
        },
        SeedLineage::new(4, 2),
    )
    .unwrap();
    let layer = compose_rain_layer(&Tensor3::zeros(9, 7, 2), &build_cascade(&dict, &f).unwrap().stages).unwrap();
    assert_eq!(layer.max(), 0.0);
    assert_eq!(merge_additive(&layer, &bg).unwrap(), bg);
}

#[test]
fn clipped_factor_draws_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = FactorDistribution::clipped_gaussian(0.0, 20.0, Some(-40.0), Some(40.0));
    let narrow = FactorDistribution::clipped_gaussian(1.0, 3.0, Some(0.5), Some(1.5));
    for _ in 0..100_000 {
        assert!((-40.0..=40.0).contains(&d.sample(&mut rng)));
        assert!((0.5..=1.5).contains(&narrow.sample(&mut rng)));
    }
}

#[test]
fn default_orientation_draws_are_centred() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let theta = FactorConfig::default().theta;
    let draws: Vec<f64> = (0..10_000).map(|_| theta.sample(&mut rng)).collect();
    assert!(draws.iter().all(|t| (-40.0..=40.0).contains(t)));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(mean.abs() < 1.0, "{mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_adjoint_identity(seed in 0u64..1000, size in prop::sample::select(vec![1usize, 3, 5])) {
        let x = random_tensor(8, 6, 2, seed);
        let y = random_tensor(8, 6, 3, seed + 1);
        let k = random_kernel(size, 3, 2, seed + 2);
        let lhs = dot(&conv_same(&x, &k).unwrap(), &y);
        let rhs = dot(&x, &conv_same_adjoint(&y, &k).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn sparsity_is_non_increasing_in_threshold(seed in 0u64..1000, t1 in -1.0f64..2.0, dt in 0.0f64..1.0, theta in -1.0f64..1.0) {
        let (noise, weights) = small_scene(seed);
        let pre = rain_map_preactivation(&noise, theta, &weights).unwrap();
        let lo = sparsity(&threshold_relu(&pre, t1));
        let hi = sparsity(&threshold_relu(&pre, t1 + dt));
        prop_assert!(hi <= lo);
        prop_assert!(threshold_relu(&pre, t1).min() >= 0.0);
    }

    #[test]
    fn pre_clamp_layer_is_linear_in_the_map(seed in 0u64..1000, c in 0.0f64..3.0) {
        let dict = streak_init_dictionary(5, 3, seed).unwrap();
        let f = rainforge::factors::sample_factors(
            &FactorConfig::default(),
            rainforge::factors::SampleShape { atoms: 3, maps: 2, stages: 2, per_atom_theta: false },
            SeedLineage::new(seed, 0),
        ).unwrap();
        let stages = build_cascade(&dict, &f).unwrap().stages;
        let map = random_tensor(10, 10, 2, seed).map(f64::abs);
        let one = rain_layer_unclamped(&map, &stages).unwrap();
        let scaled = rain_layer_unclamped(&map.scaled(c), &stages).unwrap();
        prop_assert!(scaled.max_abs_diff(&one.scaled(c)) <= 1e-12 * (1.0 + one.max().abs()));
    }

    #[test]
    fn additive_merge_stays_in_unit_range(seed in 0u64..1000) {
        let bg = random_tensor(6, 6, 3, seed).map(|v| v.abs());
        let layer = random_tensor(6, 6, 3, seed + 9).map(|v| 2.0 * v.abs());
        let x = merge_additive(&layer, &bg).unwrap();
        prop_assert!(x.min() >= 0.0 && x.max() <= 1.0);
        prop_assert!(x.data().iter().zip(bg.data()).all(|(a, b)| a >= b));
    }
}
