use keynav_autodiff::gradcheck::check_gradient;
use keynav_autodiff::{
    concat, count_flops, count_params, AutodiffError, ParamSet, Result, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// Checks `∂/∂inputs Σ (op(inputs) ⊙ R)` against central differences for a
/// fixed random projection `R`.
fn fd_check(seed: u64, shapes: &[Vec<usize>], build: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| Tensor::uniform(s.clone(), 1.0, &mut rng))
        .collect();
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        build(&tape, &vars).unwrap().shape()
    };
    let proj = Tensor::uniform(out_shape, 1.0, &mut rng);

    let eval = |ins: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&tape, &vars).unwrap().value();
        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = build(&tape, &vars).unwrap();
    let r = tape.constant(proj.clone());
    let loss = out.mul(r).unwrap().sum(None).unwrap();
    let grads = tape.backward(loss).unwrap();

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt_or_zero(vars[k]);
        let f = |x: &[f64]| {
            let mut ins = inputs.clone();
            ins[k] = Tensor::new(input.shape(), x.to_vec()).unwrap();
            eval(&ins)
        };
        let idx: Vec<usize> = (0..input.numel()).collect();
        let rep = check_gradient(f, input.data(), &analytic, &idx, 1e-5, 1e-4, 1e-8);
        assert!(rep.passed(), "seed {seed} input {k}: {rep:?}");
    }
}

fn seeds() -> std::ops::Range<u64> {
    0..10
}

#[test]
fn gradcheck_elementwise() {
    for s in seeds() {
        fd_check(s, &[vec![3, 4], vec![3, 4]], &|_, v| v[0].add(v[1]));
        fd_check(s, &[vec![3, 4], vec![3, 4]], &|_, v| v[0].sub(v[1]));
        fd_check(s, &[vec![3, 4], vec![3, 4]], &|_, v| v[0].mul(v[1]));
        fd_check(s, &[vec![5]], &|_, v| Ok(v[0].scale(-1.7).add_scalar(0.3)));
        fd_check(s, &[vec![2, 5]], &|_, v| Ok(v[0].relu()));
        fd_check(s, &[vec![2, 5]], &|_, v| Ok(v[0].sigmoid()));
        fd_check(s, &[vec![2, 5]], &|_, v| Ok(v[0].abs()));
        fd_check(s, &[vec![2, 5]], &|_, v| Ok(v[0].abs().log1p()));
    }
}

#[test]
fn gradcheck_matmul_linear() {
    for s in seeds() {
        fd_check(s, &[vec![3, 4], vec![4, 2]], &|_, v| v[0].matmul(v[1]));
        fd_check(s, &[vec![6], vec![4, 6], vec![4]], &|_, v| {
            v[0].linear(v[1], Some(v[2]))
        });
        fd_check(s, &[vec![3, 6], vec![4, 6]], &|_, v| {
            v[0].linear(v[1], None)
        });
    }
}

#[test]
fn gradcheck_conv_pool_sobel() {
    for s in seeds() {
        fd_check(s, &[vec![2, 7, 6], vec![3, 2, 3, 3], vec![3]], &|_, v| {
            v[0].conv2d(v[1], Some(v[2]), 1, 1)
        });
        fd_check(s, &[vec![2, 8, 8], vec![3, 2, 3, 3]], &|_, v| {
            v[0].conv2d(v[1], None, 2, 1)
        });
        fd_check(s, &[vec![1, 5, 5], vec![2, 1, 1, 1]], &|_, v| {
            v[0].conv2d(v[1], None, 1, 0)
        });
        fd_check(s, &[vec![2, 6, 5]], &|_, v| v[0].sobel_conv2d());
        fd_check(s, &[vec![2, 6, 6]], &|_, v| v[0].maxpool2d(2));
    }
}

#[test]
fn gradcheck_reductions_and_layout() {
    for s in seeds() {
        fd_check(s, &[vec![3, 5]], &|_, v| v[0].softmax(1));
        fd_check(s, &[vec![3, 5]], &|_, v| v[0].softmax(0));
        fd_check(s, &[vec![2, 3, 4]], &|_, v| v[0].softmax(2));
        fd_check(s, &[vec![3, 5]], &|_, v| v[0].mean(None));
        fd_check(s, &[vec![3, 5]], &|_, v| v[0].mean(Some(0)));
        fd_check(s, &[vec![3, 5]], &|_, v| v[0].sum(Some(1)));
        fd_check(s, &[vec![4, 3]], &|_, v| v[0].l2norm_rows());
        fd_check(s, &[vec![2, 3], vec![2, 4]], &|_, v| {
            concat(&[v[0], v[1]], 1)
        });
        fd_check(s, &[vec![2, 3], vec![1, 3], vec![3, 3]], &|_, v| {
            concat(&[v[0], v[1], v[2]], 0)
        });
        fd_check(s, &[vec![2, 6]], &|_, v| v[0].reshape([3, 4]));
        fd_check(s, &[vec![5, 3]], &|_, v| v[0].slice_rows(1, 4));
        fd_check(s, &[vec![5, 3]], &|_, v| v[0].slice_cols(0, 2));
        fd_check(s, &[vec![2, 5]], &|_, v| v[0].transpose());
        fd_check(s, &[vec![4, 3]], &|_, v| {
            v[0].row_field(|r| (r[0] * r[1] + r[2].sin(), vec![r[1], r[0], r[2].cos()]))
        });
    }
}

#[test]
fn gradcheck_bce() {
    for label in [0.0, 1.0] {
        let f = |x: &[f64]| {
            let t = Tape::new();
            t.constant(Tensor::scalar(x[0])).bce(label).unwrap().item()
        };
        for mu in [0.1, 0.37, 0.5, 0.93] {
            let tape = Tape::new();
            let v = tape.var(Tensor::scalar(mu));
            let g = tape.backward(v.bce(label).unwrap()).unwrap();
            let rep = check_gradient(f, &[mu], g.wrt(v).unwrap(), &[0], 1e-6, 1e-6, 1e-8);
            assert!(rep.passed(), "{rep:?}");
        }
    }
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Tensor::uniform([4, 4], 3.0, &mut rng);
    let tape = Tape::new();
    let out = tape
        .constant(a.clone())
        .matmul(tape.constant(Tensor::identity(4)))
        .unwrap();
    assert_eq!(out.value(), a);
}

#[test]
fn sobel_constant_image_is_zero() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full([1, 9, 7], 3.25));
    let out = x.sobel_conv2d().unwrap().value();
    assert_eq!(out.shape(), &[2, 9, 7]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sobel_vertical_step() {
    // left half 0, right half 1; step between columns 3 and 4
    let (h, w) = (8, 8);
    let img: Vec<f64> = (0..h * w)
        .map(|i| if i % w >= w / 2 { 1.0 } else { 0.0 })
        .collect();
    let tape = Tape::new();
    let out = tape
        .constant(Tensor::new([1, h, w], img).unwrap())
        .sobel_conv2d()
        .unwrap()
        .value();
    let gx = |y: usize, x: usize| out.data()[y * w + x];
    let gy = |y: usize, x: usize| out.data()[h * w + y * w + x];
    for y in 1..h - 1 {
        assert_eq!(gx(y, 3).abs(), 4.0);
        assert_eq!(gx(y, 4).abs(), 4.0);
        for x in [0, 1, 2, 5, 6, 7] {
            assert_eq!(gx(y, x), 0.0);
        }
        for x in 0..w {
            assert_eq!(gy(y, x), 0.0);
        }
    }
}

#[test]
fn mean_of_squares_gradient() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let loss = x.square().mean(None).unwrap();
    let g = tape.backward(loss).unwrap();
    let expect = [2.0 / 3.0, 4.0 / 3.0, 2.0];
    for (a, b) in g.wrt(x).unwrap().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn relu_gate_gradient() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![-1.0, 2.0]));
    let g = tape.backward(x.relu().sum(None).unwrap()).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::new();
    let x = tape.var(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        tape.backward(x.relu()),
        Err(AutodiffError::NonScalarLoss(_))
    ));
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    let err = a.matmul(b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    match a.add(tape.constant(Tensor::zeros([3, 2]))) {
        Err(AutodiffError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "add");
            assert_eq!((lhs, rhs), (vec![2, 3], vec![3, 2]));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn softmax_zero_length_axis_errors() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros([3, 0]));
    assert!(x.softmax(1).is_err());
}

#[test]
fn linear_param_and_flop_counts() {
    let mut p = ParamSet::new();
    let w = p.add("w", Tensor::zeros([32, 64]));
    let b = p.add("b", Tensor::zeros([32]));
    assert_eq!(count_params(&p), 2080);
    let flops = count_flops(|tape| {
        let x = tape.constant(Tensor::zeros([64]));
        x.linear(tape.param(&p, w), Some(tape.param(&p, b)))?;
        Ok(())
    })
    .unwrap();
    assert_eq!(flops, 4096);
}

#[test]
fn sobel_adds_no_parameters() {
    let mut p = ParamSet::new();
    let k = p.add("k", Tensor::zeros([2, 1, 3, 3]));
    let before = count_params(&p);
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, 8, 8]));
    let s = x.sobel_conv2d().unwrap();
    let _ = concat(&[x.conv2d(tape.param(&p, k), None, 1, 1).unwrap(), s], 0).unwrap();
    assert_eq!(count_params(&p), before);
}

#[test]
fn deterministic_forward_backward() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform([2, 8, 8], 1.0, &mut rng);
        let k = Tensor::uniform([3, 2, 3, 3], 1.0, &mut rng);
        let tape = Tape::new();
        let kv = tape.var(k);
        let y = tape
            .constant(x)
            .conv2d(kv, None, 1, 1)
            .unwrap()
            .relu()
            .maxpool2d(2)
            .unwrap()
            .reshape([3, 16])
            .unwrap()
            .softmax(1)
            .unwrap()
            .square()
            .sum(None)
            .unwrap();
        let g = tape.backward(y).unwrap();
        let bits: Vec<u64> = g.wrt(kv).unwrap().iter().map(|v| v.to_bits()).collect();
        (y.item().to_bits(), bits)
    };
    assert_eq!(run(), run());
}

#[test]
fn param_grads_accumulate_over_reuse() {
    let mut p = ParamSet::new();
    let w = p.add("w", Tensor::vector(vec![2.0]));
    let tape = Tape::new();
    let a = tape.param(&p, w);
    let b = tape.param(&p, w);
    let loss = a.mul(b).unwrap().sum(None).unwrap();
    let g = tape.backward(loss).unwrap().param_grads(&p);
    assert_eq!(g[0], vec![4.0]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..12, seed in any::<u64>(), spread in 0.1f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform([rows, cols], spread, &mut rng);
        let tape = Tape::new();
        let y = tape.constant(x).softmax(1).unwrap().value();
        for r in 0..rows {
            let row = y.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn weight_file_round_trips(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 0..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for (i, s) in shapes.iter().enumerate() {
            let t = Tensor::uniform(s.clone(), rng.gen_range(0.0..1e3), &mut rng);
            p.add(format!("layer{i}.weight"), t);
        }
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = ParamSet::read_from(&buf[..]).unwrap();
        prop_assert_eq!(p.checksum(), q.checksum());
        prop_assert_eq!(p, q);
    }
}

#[test]
fn weights_save_and_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let mut p = ParamSet::new();
    p.add("a", Tensor::vector(vec![1.0, f64::MIN_POSITIVE, -0.0]));
    p.save(&path).unwrap();
    assert_eq!(ParamSet::load(&path).unwrap(), p);
}
