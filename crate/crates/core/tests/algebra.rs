mod common;

use proptest::prelude::*;
use qseld_core::init::{init_quaternion_tensor, rng_from_seed, InitSpec};
use qseld_core::optim::gradcheck::{random_quat, GradTarget};
use qseld_core::qnn::{max_pool_freq, Activation, Mode, QConv2d, QDense, SplitBatchNorm};
use qseld_core::quat::{hamilton_matmul, hamilton_matvec, to_real_block, QuatTensor, Quaternion};
use qseld_core::hamilton_product;

fn quat() -> impl Strategy<Value = Quaternion> {
    prop::array::uniform4(-10.0f64..10.0).prop_map(Quaternion::from_array)
}

fn quat_matrix(rows: usize, cols: usize) -> impl Strategy<Value = QuatTensor> {
    prop::collection::vec(quat(), rows * cols)
        .prop_map(move |v| QuatTensor::from_quaternions(&[rows, cols], &v).unwrap())
}

fn rel_diff(a: Quaternion, b: Quaternion) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn norm_is_multiplicative(p in quat(), q in quat()) {
        let lhs = hamilton_product(p, q).norm();
        let rhs = p.norm() * q.norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn product_is_associative(p in quat(), q in quat(), r in quat()) {
        let a = (p * q) * r;
        let b = p * (q * r);
        prop_assert!(rel_diff(a, b) < 1e-12);
    }

    #[test]
    fn conjugate_is_an_involution(q in quat()) {
        prop_assert_eq!(q.conjugate().conjugate(), q);
        let (c, n) = q.conjugate_and_norm();
        let prod = q * c;
        prop_assert!((prod.w - n * n).abs() <= 1e-12 * (n * n).max(1.0));
        prop_assert!(prod.x.abs() + prod.y.abs() + prod.z.abs() <= 1e-12 * (n * n).max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn block_matrix_represents_left_product(w in quat_matrix(2, 3), v in prop::collection::vec(quat(), 3)) {
        let v = QuatTensor::from_quaternions(&[3], &v).unwrap();
        let block = to_real_block(&w).unwrap().matvec(&v.to_stacked()).unwrap();
        let direct = hamilton_matvec(&w, &v).unwrap().to_stacked();
        let diff = block.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn block_representation_is_a_homomorphism(a in quat_matrix(2, 3), b in quat_matrix(3, 2)) {
        let lhs = to_real_block(&a).unwrap().matmul(&to_real_block(&b).unwrap()).unwrap();
        let rhs = to_real_block(&hamilton_matmul(&a, &b).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }
}

#[test]
fn products_do_not_commute() {
    let (i, j, k) = (Quaternion::new(0.0, 1.0, 0.0, 0.0), Quaternion::new(0.0, 0.0, 1.0, 0.0), Quaternion::new(0.0, 0.0, 0.0, 1.0));
    assert_eq!(i * j, k);
    assert_eq!(j * i, -k);
}

#[test]
fn worked_product_norms() {
    let p = Quaternion::new(1.0, 2.0, 3.0, 4.0);
    let q = Quaternion::new(5.0, 6.0, 7.0, 8.0);
    let r = p * q;
    assert_eq!(r, Quaternion::new(-60.0, 12.0, 30.0, 24.0));
    assert_eq!(r.norm_sqr(), 5220.0);
    assert_eq!(p.norm_sqr() * q.norm_sqr(), 30.0 * 174.0);
}

#[test]
fn quaternion_conv_matches_real_block_expansion() {
    let mut rng = rng_from_seed(11);
    for (b, c, p, t, f) in [(1, 2, 3, 5, 6), (2, 1, 1, 1, 1), (1, 3, 2, 4, 2), (2, 2, 4, 3, 7)] {
        let mut layer = QConv2d::new(c, p, 5).unwrap();
        layer.bias = random_quat(&mut rng, &[p], 1.0);
        let x = random_quat(&mut rng, &[b, c, t, f], 1.0);
        let diff = layer.forward(&x).unwrap().max_abs_diff(&common::block_conv(&layer, &x));
        assert!(diff < 1e-12, "shape {:?}: diff {diff}", (b, c, p, t, f));
    }
}

#[test]
fn conv_input_gradient_is_block_transpose() {
    // 1×1 input: only the center tap contributes, so y = W⊗x and dL/dx = Lᵀ g
    let w = Quaternion::new(0.3, -1.2, 0.7, 2.0);
    let mut layer = QConv2d::new(1, 1, 0).unwrap();
    layer.kernels = QuatTensor::zeros(&[1, 1, 3, 3]);
    layer.kernels.set(4, w);
    let x = QuatTensor::filled(&[1, 1, 1, 1], Quaternion::new(1.0, 2.0, 3.0, 4.0));
    let g = Quaternion::new(0.5, -0.25, 1.5, -2.0);
    let (gin, _) = layer.backward(&x, &QuatTensor::filled(&[1, 1, 1, 1], g)).unwrap();
    let block = to_real_block(&QuatTensor::filled(&[1, 1], w)).unwrap();
    let expected = block.transpose().matvec(&g.to_array()).unwrap();
    let got = gin.get(0).to_array();
    for k in 0..4 {
        assert!((got[k] - expected[k]).abs() < 1e-14);
    }
}

#[test]
fn qdense_matches_block_matvec() {
    let mut rng = rng_from_seed(3);
    for (inp, out) in [(1, 1), (3, 2), (5, 4)] {
        let mut layer = QDense::new(inp, out, Activation::Linear, 9).unwrap();
        layer.bias = random_quat(&mut rng, &[out], 1.0);
        let x = random_quat(&mut rng, &[inp], 1.0);
        let y = layer.forward(&x).unwrap().output.to_stacked();
        let mut expected = to_real_block(&layer.weights).unwrap().matvec(&x.to_stacked()).unwrap();
        for (e, b) in expected.iter_mut().zip(layer.bias.to_stacked()) {
            *e += b;
        }
        let diff = y.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

#[test]
fn every_layer_and_loss_passes_gradcheck() {
    for target in GradTarget::ALL.iter().copied().filter(|t| *t != GradTarget::Model) {
        let r = target.run(0).unwrap();
        assert!(r.max_rel_err < target.tolerance(), "{}: {r}", target.name());
        assert!(r.checked > 0);
    }
}

#[test]
fn split_batch_norm_standardizes_each_plane() {
    let mut rng = rng_from_seed(21);
    let x = random_quat(&mut rng, &[3, 2, 4, 5], 3.0).map_planes(|v| 2.0 * v + 1.5);
    let bn = SplitBatchNorm::new(2);
    let (y, _) = bn.forward(&x, Mode::Train).unwrap();
    let tf = 20;
    for k in 0..4 {
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.plane(k)[(b * 2 + c) * tf..(b * 2 + c + 1) * tf].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            // eps = 1e-6 shrinks the variance by var/(var+eps)
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }
}

#[test]
fn paper_stack_reduces_frequency_to_two() {
    let mut x = QuatTensor::zeros(&[1, 2, 3, 256]);
    x.plane_mut(0).iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
    let mut c = 2;
    for (i, factor) in [8usize, 8, 2].into_iter().enumerate() {
        let conv = QConv2d::new(c, 4, i as u64).unwrap();
        let (pooled, _) = max_pool_freq(&conv.forward(&x).unwrap(), factor).unwrap();
        x = pooled;
        c = 4;
    }
    assert_eq!(x.shape(), &[1, 4, 3, 2]);
}

#[test]
fn init_statistics_follow_the_sampling_recipe() {
    let m = common::init_moments(100_000, 8, 0);
    assert_eq!(m.sigma, 0.25);
    assert!(m.means.iter().all(|v| v.abs() < 0.003), "{:?}", m.means);
    assert!(m.skews.iter().all(|v| v.abs() < 0.02), "{:?}", m.skews);
    assert!(m.max_axis_err < 1e-12);
    assert!(m.max_abs_w <= m.sigma);
    let target = m.sigma * m.sigma / 3.0;
    assert!((m.second_moment - target).abs() < 0.05 * target, "{} vs {target}", m.second_moment);
}

#[test]
fn seeded_init_is_reproducible() {
    let spec = InitSpec { fan_in: 18, seed: 42 };
    let a = init_quaternion_tensor(&[4, 2, 3, 3], spec).unwrap();
    assert_eq!(a, init_quaternion_tensor(&[4, 2, 3, 3], spec).unwrap());
    assert_ne!(a, init_quaternion_tensor(&[4, 2, 3, 3], InitSpec { seed: 43, ..spec }).unwrap());
}
