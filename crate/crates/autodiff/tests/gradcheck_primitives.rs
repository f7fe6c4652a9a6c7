//! Finite-difference verification for each tape primitive.
//!
//! Every primitive is exercised at several seeded random configurations;
//! the heavier 20-seed sweep required for acceptance runs in the
//! workspace acceptance suite together with the network layers.

use autodiff::{gradient_check, CheckInput, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: Real = 1e-5;
const TOL: Real = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Keeps components away from a non-differentiable point.
fn away_from(mut t: Tensor, point: Real, margin: Real) -> Tensor {
    for v in t.data_mut() {
        if (*v - point).abs() < margin {
            *v = point + margin * if *v >= point { 1.0 } else { -1.0 };
        }
        if (*v + point).abs() < margin && point != 0.0 {
            *v = -point - margin * if *v <= -point { 1.0 } else { -1.0 };
        }
    }
    t
}

fn check(name: &str, f: impl Fn(&Tape, &[Var]) -> autodiff::Result<Var>, inputs: &[CheckInput]) {
    let report = gradient_check(f, inputs, EPS, TOL).unwrap();
    assert!(
        report.passed(),
        "{} failed gradient check:\n{}",
        name,
        report
    );
}

#[test]
fn matmul_add_sub_mul() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![4, 2]);
        check(
            "matmul",
            |t, v| {
                let c = t.matmul(&v[0], &v[1])?;
                t.sum_all(&c)
            },
            &[CheckInput::new("a", a), CheckInput::new("b", b)],
        );

        let x = rand_tensor(&mut rng, vec![2, 3]);
        let y = rand_tensor(&mut rng, vec![2, 3]);
        let bias = rand_tensor(&mut rng, vec![3]);
        check(
            "add/sub/mul with broadcast bias",
            |t, v| {
                let s = t.add(&v[0], &v[2])?;
                let d = t.sub(&s, &v[1])?;
                let m = t.elementwise_mul(&d, &v[0])?;
                t.sum_all(&m)
            },
            &[
                CheckInput::new("x", x),
                CheckInput::new("y", y),
                CheckInput::new("bias", bias),
            ],
        );
    }
}

#[test]
fn shape_ops() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![2, 2]);
        check(
            "concat/slice/reshape/transpose",
            |t, v| {
                let c = t.concat(&[&v[0], &v[1]], 1)?; // [2,5]
                let s = t.slice(&c, 1, 1, 3)?; // [2,3]
                let tr = t.transpose(&s)?; // [3,2]
                let r = t.reshape(&tr, vec![6])?;
                let sq = t.elementwise_mul(&r, &r)?;
                t.sum_all(&sq)
            },
            &[CheckInput::new("a", a), CheckInput::new("b", b)],
        );
    }
}

#[test]
fn reductions_and_scale() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        check(
            "sum_axis/mean_axis/scale",
            |t, v| {
                let s0 = t.sum_axis(&v[0], 0)?; // [4]
                let m1 = t.mean_axis(&v[0], 1)?; // [3]
                let s = t.sum_all(&s0)?;
                let m = t.mean_all(&m1)?;
                let both = t.add(&s, &m)?;
                t.scale(&both, 1.7)
            },
            &[CheckInput::new("a", a)],
        );
    }
}

#[test]
fn pointwise_nonlinearities() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let a = rand_tensor(&mut rng, vec![2, 5]);
        check(
            "sigmoid/softplus/tanh/exp",
            |t, v| {
                let s = t.sigmoid(&v[0])?;
                let p = t.softplus(&v[0])?;
                let th = t.tanh(&v[0])?;
                let e = t.exp(&v[0])?;
                let sum = t.add(&s, &p)?;
                let sum = t.add(&sum, &th)?;
                let sum = t.add(&sum, &e)?;
                t.sum_all(&sum)
            },
            &[CheckInput::new("a", a.clone())],
        );

        // relu checked away from its kink at 0
        let r = away_from(a.clone(), 0.0, 0.05);
        check(
            "relu",
            |t, v| {
                let y = t.relu(&v[0])?;
                t.sum_all(&y)
            },
            &[CheckInput::new("a", r)],
        );

        // log needs positive input
        let mut pos = a;
        for v in pos.data_mut() {
            *v = v.abs() + 0.2;
        }
        check(
            "log",
            |t, v| {
                let y = t.log(&v[0])?;
                t.sum_all(&y)
            },
            &[CheckInput::new("a", pos)],
        );
    }
}

#[test]
fn softmax_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let w = rand_tensor(&mut rng, vec![3, 4]);
        check(
            "softmax",
            |t, v| {
                let y = t.softmax(&v[0], 1)?;
                let weighted = t.elementwise_mul(&y, &v[1])?;
                t.sum_all(&weighted)
            },
            &[CheckInput::new("a", a), CheckInput::frozen("w", w)],
        );
    }
}

#[test]
fn group_norm_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let a = rand_tensor(&mut rng, vec![2, 8]);
        let gamma = rand_tensor(&mut rng, vec![8]);
        let beta = rand_tensor(&mut rng, vec![8]);
        let w = rand_tensor(&mut rng, vec![2, 8]);
        check(
            "group_norm",
            |t, v| {
                let y = t.group_norm(&v[0], &v[1], &v[2], 4, 1e-5)?;
                let weighted = t.elementwise_mul(&y, &v[3])?;
                t.sum_all(&weighted)
            },
            &[
                CheckInput::new("x", a),
                CheckInput::new("gamma", gamma),
                CheckInput::new("beta", beta),
                CheckInput::frozen("w", w),
            ],
        );
    }
}

#[test]
fn smooth_l1_gradients_away_from_kink() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let pred = rand_tensor(&mut rng, vec![6]);
        let target = Tensor::zeros(vec![6]);
        // keep |pred - target| away from beta = 1
        let pred = away_from(pred, 1.0, 0.05);
        check(
            "smooth_l1",
            |t, v| {
                let l = t.smooth_l1(&v[0], &v[1], 1.0)?;
                t.mean_all(&l)
            },
            &[CheckInput::new("pred", pred), CheckInput::new("target", target)],
        );
    }
}

#[test]
fn gaussian_sample_gradients() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let mu = rand_tensor(&mut rng, vec![4]);
        let logvar = rand_tensor(&mut rng, vec![4]);
        let noise = rand_tensor(&mut rng, vec![4]);
        check(
            "gaussian_sample",
            |t, v| {
                let z = t.gaussian_sample(&v[0], &v[1], &v[2])?;
                let sq = t.elementwise_mul(&z, &z)?;
                t.sum_all(&sq)
            },
            &[
                CheckInput::new("mu", mu),
                CheckInput::new("logvar", logvar),
                CheckInput::frozen("noise", noise),
            ],
        );
    }
}

#[test]
fn sigmoid_of_linear_map_matches_spec_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let w = rand_tensor(&mut rng, vec![4, 3]);
    let x = rand_tensor(&mut rng, vec![2, 4]);
    let report = gradient_check(
        |t, v| {
            let h = t.matmul(&v[1], &v[0])?;
            let s = t.sigmoid(&h)?;
            t.sum_all(&s)
        },
        &[CheckInput::new("w", w), CheckInput::new("x", x)],
        EPS,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{}", report);
}
