use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uld_core::numerics::{gradient_check, Graph, Tensor};
use uld_core::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn conv_identity_kernel_on_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[1, 3, 3], 1.0));
    let k = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &Tensor::full(&[1, 3, 3], 1.0));
}

#[test]
fn conv_same_padding_shape_and_hand_sum() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 4, 4]));
    let k = g.input(Tensor::zeros(&[1, 1, 3, 3]));
    let y = g.conv2d(x, k, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4]);

    let x = g.input(Tensor::from_fn(&[1, 3, 3], |i| (i + 1) as f64));
    let k = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1]);
    assert_eq!(g.value(y).item(), 45.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2, 4, 4]));
    let k = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, k, None, 1, 1), Err(Error::Dimension(_))));
}

#[test]
fn dirac_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [1usize, 3, 5] {
        let xt = random(&[3, 6, 5], &mut rng);
        let mut kt = Tensor::zeros(&[3, 3, k, k]);
        for c in 0..3 {
            let off = kt.offset(&[c, c, k / 2, k / 2]);
            kt.data_mut()[off] = 1.0;
        }
        let mut g = Graph::<f64>::new();
        let x = g.input(xt.clone());
        let kv = g.input(kt);
        let y = g.conv2d(x, kv, None, 1, k / 2).unwrap();
        assert_eq!(g.value(y), &xt);
    }
}

#[test]
fn resize_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random(&[2, 3, 5], &mut rng);
    let mut g = Graph::<f64>::new();
    let x = g.input(t.clone());
    let y = g.resize_bilinear(x, 3, 5).unwrap();
    assert_eq!(g.value(y), &t);

    let c = g.input(Tensor::full(&[1, 1, 1], 0.37));
    let y = g.resize_bilinear(c, 4, 4).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.37));

    let r = g.input(Tensor::from_f64(&[1, 2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap());
    let y = g.resize_bilinear(r, 2, 4).unwrap();
    assert_eq!(&g.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn backward_visits_in_reverse_execution_order() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let b = g.exp(a);
    let c = g.mul(b, a).unwrap();
    let d = g.scale(c, 3.0);
    let s = g.sum(d);
    let grads = g.backward(s);
    let order = grads.visit_order();
    assert_eq!(order, &[s.index(), d.index(), c.index(), b.index()]);
    let ga = grads.get(a).unwrap();
    assert_eq!(ga.shape(), &[2]);
    for (i, &x) in [1.0f64, 2.0].iter().enumerate() {
        let want = 3.0 * (x.exp() + x * x.exp());
        assert!((ga.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn backward_of_sum_of_graphs_is_sum_of_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xt = random(&[2, 5, 5], &mut rng);
    let kt = random(&[3, 2, 3, 3], &mut rng);
    let f1 = |g: &mut Graph<f64>, x, k| {
        let y = g.conv2d(x, k, None, 1, 1).unwrap();
        let y = g.silu(y);
        g.sum(y)
    };
    let f2 = |g: &mut Graph<f64>, x| {
        let y = g.resize_bilinear(x, 7, 3).unwrap();
        let y2 = g.mul(y, y).unwrap();
        g.sum(y2)
    };
    let mut g = Graph::new();
    let x = g.param(xt.clone());
    let k = g.param(kt.clone());
    let a = f1(&mut g, x, k);
    let b = f2(&mut g, x);
    let s = g.add(a, b).unwrap();
    let both = g.backward(s);

    let mut g1 = Graph::new();
    let x1 = g1.param(xt.clone());
    let k1 = g1.param(kt.clone());
    let a1 = f1(&mut g1, x1, k1);
    let ga = g1.backward(a1);
    let mut g2 = Graph::new();
    let x2 = g2.param(xt);
    let b2 = f2(&mut g2, x2);
    let gb = g2.backward(b2);

    let sum: Vec<f64> = ga.get(x1).unwrap().data().iter().zip(gb.get(x2).unwrap().data()).map(|(p, q)| p + q).collect();
    for (u, v) in both.get(x).unwrap().data().iter().zip(&sum) {
        assert!((u - v).abs() < 1e-12);
    }
    assert_eq!(both.get(k).unwrap(), ga.get(k1).unwrap());
}

fn check_three_points(name: &str, shape: &[usize], f: impl Fn(&mut Graph<f64>, uld_core::numerics::Var) -> uld_core::Result<uld_core::numerics::Var>) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31);
    for _ in 0..3 {
        let p = random(shape, &mut rng);
        let r = gradient_check(&f, &p, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{name}: {r:?}");
    }
}

#[test]
fn gradient_checks_for_every_tape_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let bias = random(&[3], &mut rng);
    let w = random(&[4, 5, 5], &mut rng);
    // conv wrt input, with stride/pad variety, weighted by a fixed random
    // tensor so the gradient is not uniform.
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let (k, bias) = (k.clone(), bias.clone());
        check_three_points("conv_x", &[2, 6, 5], move |g, x| {
            let kv = g.input(k.clone());
            let bv = g.input(bias.clone());
            let y = g.conv2d(x, kv, Some(bv), stride, pad)?;
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        });
    }
    let xin = random(&[2, 6, 5], &mut rng);
    check_three_points("conv_k", &[3, 2, 3, 3], |g, k| {
        let x = g.input(xin.clone());
        let y = g.conv2d(x, k, None, 2, 1)?;
        let y2 = g.mul(y, y)?;
        Ok(g.sum(y2))
    });
    check_three_points("conv_bias", &[3], |g, b| {
        let x = g.input(xin.clone());
        let kv = g.input(k.clone());
        let y = g.conv2d(x, kv, Some(b), 1, 1)?;
        let y = g.silu(y);
        Ok(g.sum(y))
    });
    check_three_points("resize_up", &[4, 3, 2], |g, x| {
        let y = g.resize_bilinear(x, 5, 5)?;
        let wv = g.input(w.clone());
        let y = g.mul(y, wv)?;
        Ok(g.sum(y))
    });
    check_three_points("resize_down", &[4, 7, 9], |g, x| {
        let y = g.resize_bilinear(x, 5, 5)?;
        let wv = g.input(w.clone());
        let y = g.mul(y, wv)?;
        Ok(g.sum(y))
    });
    check_three_points("matmul_softmax", &[6, 4], |g, x| {
        let a = g.slice(x, 0, 3)?;
        let b = g.slice(x, 3, 3)?;
        let l = g.matmul(a, b, true, false)?; // [4,4]
        let s = g.softmax_rows(l)?;
        let o = g.matmul(x, s, false, true)?; // [6,4]
        let o2 = g.mul(o, o)?;
        Ok(g.sum(o2))
    });
    check_three_points("concat_reshape_exp_relu", &[2, 3], |g, x| {
        let e = g.exp(x);
        let r = g.relu(x);
        let c = g.concat(&[e, r, x])?;
        let c = g.reshape(c, &[3, 6])?;
        let m = g.matmul(c, c, false, true)?;
        Ok(g.sum(m))
    });
    check_three_points("scale_by", &[5], |g, x| {
        let s = g.slice(x, 0, 1)?;
        let y = g.scale_by(x, s)?;
        let y = g.mul(y, x)?;
        Ok(g.sum(y))
    });
}

#[test]
fn f32_conv_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 8, 8], &mut rng);
    let k = random(&[4, 3, 3, 3], &mut rng);
    let mut g64 = Graph::<f64>::new();
    let (xv, kv) = (g64.input(x.clone()), g64.input(k.clone()));
    let y64 = g64.conv2d(xv, kv, None, 2, 1).unwrap();
    let mut g32 = Graph::<f32>::new();
    let (xv, kv) = (g32.input(x.cast()), g32.input(k.cast()));
    let y32 = g32.conv2d(xv, kv, None, 2, 1).unwrap();
    let back: Tensor<f64> = g32.value(y32).cast();
    assert!(back.max_abs_diff(g64.value(y64)) < 1e-4);
}
