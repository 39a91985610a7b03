mod common;

use common::{param_gradcheck, random, random_readout, rng, sample_coords, toy_model_config};
use uld_core::model::{
    backbone_forward, fuse_level, fusion_prefix, init_backbone, init_fusion, spatial_attention, Detector, FusionTokens,
    Init, ModelConfig, ParamStore, LEVEL_STRIDES, NUM_LEVELS,
};
use uld_core::numerics::{gradient_check, Graph, Tensor};

fn fusion_store(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    init_fusion(&mut s, &mut Init::new(seed), cfg);
    // nonzero biases so their gradients are exercised
    let mut r = rng(seed + 1);
    for (name, t) in s.iter_mut() {
        if name.ends_with("/b") {
            *t = random(t.shape(), &mut r);
        }
    }
    s
}

#[test]
fn backbone_and_pyramid_sizes_for_64px_input() {
    let cfg = toy_model_config(1, false);
    let model = Detector::<f64>::new(cfg, 0).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let x = random(&[3, 64, 64], &mut rng(1));
    let out = model.forward(&mut g, &b, &[x]).unwrap();
    let stage_sizes: Vec<usize> = out.stages[0].iter().map(|&v| g.shape(v)[1]).collect();
    assert_eq!(stage_sizes, vec![16, 8, 4, 2]);
    let level_sizes: Vec<usize> = out.pyramids[0].iter().map(|&v| g.shape(v)[1]).collect();
    assert_eq!(level_sizes, vec![16, 8, 4, 2, 1]);
    assert_eq!(out.pad, (0, 0));
    for (j, l) in out.levels.iter().enumerate() {
        assert_eq!(l.stride, LEVEL_STRIDES[j]);
        assert_eq!(g.shape(l.reg)[0], 4);
        assert!(g.value(l.reg).data().iter().all(|&d| d > 0.0));
    }
}

#[test]
fn odd_input_is_padded_to_the_divisor() {
    let model = Detector::<f64>::new(toy_model_config(1, false), 0).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let out = model.forward(&mut g, &b, &[random(&[3, 50, 70], &mut rng(2))]).unwrap();
    assert_eq!(out.pad, (14, 26));
    assert_eq!(g.shape(out.levels[0].cls), &[1, 16, 24]);
}

#[test]
fn shared_backbone_gives_distinct_features_per_window() {
    let model = Detector::<f64>::new(toy_model_config(3, true), 0).unwrap();
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let mut r = rng(3);
    let windows: Vec<Tensor<f64>> = (0..3).map(|_| random(&[3, 32, 32], &mut r)).collect();
    let out = model.forward(&mut g, &b, &windows).unwrap();
    let c5: Vec<&Tensor<f64>> = out.stages.iter().map(|s| g.value(s[3])).collect();
    assert_ne!(c5[0], c5[1]);
    assert_ne!(c5[1], c5[2]);
    let names = model.params.names().filter(|n| n.starts_with("backbone/")).count();
    assert!(names > 0);
}

#[test]
fn backbone_gradient_is_sum_of_per_window_gradients() {
    let cfg = toy_model_config(3, false);
    let mut store = ParamStore::new();
    init_backbone(&mut store, &mut Init::new(4), &cfg);
    let mut r = rng(5);
    let windows: Vec<Tensor<f64>> = (0..3).map(|_| random(&[3, 32, 32], &mut r)).collect();
    let readout = |g: &mut Graph<f64>, b: &uld_core::model::Bound, idx: &[usize]| {
        let mut terms = Vec::new();
        for &i in idx {
            let x = g.input(windows[i].clone());
            let c = backbone_forward(g, b, &cfg, x).unwrap();
            terms.push(random_readout(g, c[3], 100 + i as u64).unwrap());
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t).unwrap();
        }
        acc
    };
    let grads_of = |idx: &[usize]| {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let y = readout(&mut g, &b, idx);
        let gr = g.backward(y);
        b.iter()
            .map(|(n, v)| (n.to_string(), gr.get(v).unwrap().clone()))
            .collect::<Vec<_>>()
    };
    let joint = grads_of(&[0, 1, 2]);
    let parts: Vec<_> = (0..3).map(|i| grads_of(&[i])).collect();
    for (k, (name, t)) in joint.iter().enumerate() {
        for (c, &v) in t.data().iter().enumerate() {
            let sum: f64 = parts.iter().map(|p| p[k].1.data()[c]).sum();
            assert!((v - sum).abs() <= 1e-12 * (1.0 + sum.abs()), "{name}[{c}]: {v} vs {sum}");
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let cfg = toy_model_config(5, true);
    let store = fusion_store(&cfg, 6);
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let x = g.input(random(&[5 * cfg.fpn_channels, 3, 4], &mut rng(7)));
    let trace = spatial_attention(&mut g, &b, &fusion_prefix(0), x, &cfg.attention_cfg).unwrap();
    assert_eq!(trace.weights.len(), cfg.attention_cfg.heads);
    for &w in &trace.weights {
        let a = g.value(w);
        assert_eq!(a.shape(), &[12, 12]);
        for row in a.data().chunks(12) {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn attention_branch_is_permutation_equivariant() {
    let cfg = toy_model_config(5, true);
    let store = fusion_store(&cfg, 8);
    let c = 5 * cfg.fpn_channels;
    let (h, w) = (2, 3);
    let n = h * w;
    let x = random(&[c, h, w], &mut rng(9));
    let perm = [4, 0, 5, 2, 1, 3];
    let permute = |t: &Tensor<f64>, ch: usize| {
        Tensor::from_fn(&[ch, h, w], |i| {
            let (k, p) = (i / n, i % n);
            t.data()[k * n + perm[p]]
        })
    };
    let run = |input: Tensor<f64>| {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let v = g.input(input);
        let out = spatial_attention(&mut g, &b, &fusion_prefix(1), v, &cfg.attention_cfg).unwrap().output;
        g.value(out).clone()
    };
    let direct = run(permute(&x, c));
    let after = permute(&run(x), cfg.attention_cfg.dv_total);
    assert!(direct.max_abs_diff(&after) <= 1e-12);
}

#[test]
fn single_token_attention_is_value_projection() {
    let cfg = toy_model_config(5, true);
    let store = fusion_store(&cfg, 10);
    let p = fusion_prefix(4);
    let c = 5 * cfg.fpn_channels;
    let x = random(&[c, 1, 1], &mut rng(11));
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xv = g.input(x.clone());
    let out = spatial_attention(&mut g, &b, &p, xv, &cfg.attention_cfg).unwrap().output;
    let dv = cfg.attention_cfg.dv_total;
    let affine = |name: &str, input: &[f64], rows: usize| -> Vec<f64> {
        let w = store.get(&format!("{p}/{name}/w")).unwrap().data();
        let bias = store.get(&format!("{p}/{name}/b")).unwrap().data();
        (0..rows)
            .map(|r| bias[r] + input.iter().enumerate().map(|(k, &v)| w[r * input.len() + k] * v).sum::<f64>())
            .collect()
    };
    let v = affine("v", x.data(), dv);
    let expect = affine("out", &v, dv);
    for (a, e) in g.value(out).data().iter().zip(&expect) {
        assert!((a - e).abs() <= 1e-12);
    }
}

/// Dense two-token multi-head attention written out with plain loops.
#[test]
fn two_token_attention_matches_dense_oracle() {
    let mut cfg = toy_model_config(1, true);
    cfg.fpn_channels = 3;
    cfg.attention_cfg.heads = 2;
    cfg.attention_cfg.dk_per_head = 2;
    cfg.attention_cfg.dv_total = 2;
    let mut store = fusion_store(&cfg, 12);
    let p = fusion_prefix(0);
    // hand-set projections: q, k [4,3], v [2,3], out [2,2]
    let set = |s: &mut ParamStore<f64>, name: &str, shape: &[usize], vals: &[f64]| {
        *s.get_mut(&format!("{p}/{name}")).unwrap() = Tensor::from_f64(shape, vals).unwrap();
    };
    let wq = [0.5, -1.0, 0.25, 1.0, 0.0, -0.5, -0.75, 0.5, 1.0, 0.2, 0.3, -0.4];
    let wk = [1.0, 0.5, -0.5, -0.25, 1.0, 0.75, 0.6, -0.2, 0.1, -1.0, 0.4, 0.9];
    let wv = [1.0, -1.0, 0.5, 0.25, 0.75, -0.5];
    let wo = [0.8, -0.3, 0.1, 1.2];
    let (bq, bk, bv, bo) = ([0.1, -0.2, 0.0, 0.3], [0.0, 0.05, -0.1, 0.2], [0.3, -0.1], [0.01, -0.02]);
    set(&mut store, "q/w", &[4, 3, 1, 1], &wq);
    set(&mut store, "k/w", &[4, 3, 1, 1], &wk);
    set(&mut store, "v/w", &[2, 3, 1, 1], &wv);
    set(&mut store, "out/w", &[2, 2, 1, 1], &wo);
    set(&mut store, "q/b", &[4], &bq);
    set(&mut store, "k/b", &[4], &bk);
    set(&mut store, "v/b", &[2], &bv);
    set(&mut store, "out/b", &[2], &bo);
    // x[channel][token]
    let x = [[0.2, -1.3], [0.7, 0.4], [-0.5, 1.1]];

    let proj = |w: &[f64], b: &[f64], rows: usize| -> Vec<[f64; 2]> {
        (0..rows)
            .map(|r| {
                let f = |t: usize| b[r] + (0..3).map(|c| w[r * 3 + c] * x[c][t]).sum::<f64>();
                [f(0), f(1)]
            })
            .collect()
    };
    let (q, k, v) = (proj(&wq, &bq, 4), proj(&wk, &bk, 4), proj(&wv, &bv, 2));
    let mut heads = vec![[0.0; 2]; 2];
    for h in 0..2 {
        for i in 0..2 {
            let logit = |j: usize| (0..2).map(|d| q[h * 2 + d][i] * k[h * 2 + d][j]).sum::<f64>() / 2f64.sqrt();
            let (l0, l1) = (logit(0), logit(1));
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            heads[h][i] = a0 * v[h][0] + a1 * v[h][1];
        }
    }
    let expect: Vec<f64> = (0..2)
        .flat_map(|r| (0..2).map(move |t| (r, t)))
        .map(|(r, t)| bo[r] + wo[r * 2] * heads[0][t] + wo[r * 2 + 1] * heads[1][t])
        .collect();

    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let xt = Tensor::from_f64(&[3, 1, 2], &[x[0][0], x[0][1], x[1][0], x[1][1], x[2][0], x[2][1]]).unwrap();
    let xv = g.input(xt);
    let out = spatial_attention(&mut g, &b, &p, xv, &cfg.attention_cfg).unwrap().output;
    for (a, e) in g.value(out).data().iter().zip(&expect) {
        assert!((a - e).abs() <= 1e-10, "{a} vs {e}");
    }
}

#[test]
fn fused_width_is_attention_plus_conv_branch() {
    for (tokens, attention) in [
        (FusionTokens::Channels, true),
        (FusionTokens::Windows, true),
        (FusionTokens::Channels, false),
    ] {
        for windows in [1, 3, 5] {
            let mut cfg = toy_model_config(windows, attention);
            cfg.fusion_tokens = tokens;
            let store = fusion_store(&cfg, 13);
            let mut g = Graph::new();
            let b = store.bind_frozen(&mut g);
            let mut r = rng(14);
            let maps: Vec<_> = (0..windows).map(|_| g.input(random(&[cfg.fpn_channels, 4, 4], &mut r))).collect();
            let f = fuse_level(&mut g, &b, &cfg, 2, &maps).unwrap();
            assert_eq!(g.shape(f), &[cfg.fpn_channels, 4, 4]);
        }
    }
}

#[test]
fn fusion_rejects_mismatched_maps() {
    let cfg = toy_model_config(3, true);
    let store = fusion_store(&cfg, 15);
    let mut g = Graph::new();
    let b = store.bind_frozen(&mut g);
    let a = g.input(Tensor::zeros(&[8, 4, 4]));
    let c = g.input(Tensor::zeros(&[8, 2, 2]));
    assert!(fuse_level(&mut g, &b, &cfg, 0, &[a, a, c]).is_err());
    assert!(fuse_level(&mut g, &b, &cfg, 0, &[a, a]).is_err());
}

#[test]
fn fuse_gradient_checks() {
    for (tokens, attention) in [
        (FusionTokens::Channels, true),
        (FusionTokens::Windows, true),
        (FusionTokens::Channels, false),
    ] {
        let mut cfg = toy_model_config(3, attention);
        cfg.fusion_tokens = tokens;
        let store = fusion_store(&cfg, 16);
        let f = cfg.fpn_channels;
        let fuse = |g: &mut Graph<f64>, b: &uld_core::model::Bound, x| {
            let maps: Vec<_> = (0..3).map(|i| g.slice(x, i * f, f)).collect::<Result<_, _>>()?;
            let y = fuse_level(g, b, &cfg, 1, &maps)?;
            random_readout(g, y, 17)
        };
        let point = random(&[3 * f, 3, 3], &mut rng(18));
        // with respect to the input maps
        let r = gradient_check(
            |g, x| {
                let b = store.bind_frozen(g);
                fuse(g, &b, x)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{tokens:?} attention={attention}: input {r:?}");
        // with respect to every fusion parameter; a key bias shifts each
        // softmax row by a constant, so its gradient is exactly zero and
        // is checked separately below
        let mut coords = sample_coords(&store, 6, &mut rng(19));
        coords.retain(|(n, _)| !n.ends_with("/k/b"));
        let r = param_gradcheck(&store, &coords, 1e-5, |g, b| {
            let x = g.input(point.clone());
            fuse(g, b, x)
        });
        assert!(r.max_rel_error <= 1e-4, "{tokens:?} attention={attention}: params {r:?}");
        if attention && tokens == FusionTokens::Channels {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let x = g.input(point.clone());
            let y = fuse(&mut g, &b, x).unwrap();
            let grads = g.backward(y);
            let kb = grads.get(b.var(&format!("{}/k/b", fusion_prefix(1))).unwrap()).unwrap();
            assert!(kb.data().iter().all(|v| v.abs() <= 1e-12), "{kb:?}");
        }
    }
}

#[test]
fn load_pretrained_initializes_backbone_only() {
    let cfg = toy_model_config(3, true);
    let donor = Detector::<f64>::new(cfg.clone(), 1).unwrap();
    let dir = std::env::temp_dir().join(format!("uld-pre-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("backbone.ultens");
    uld_core::numerics::checkpoint::write_container(&path, &donor.params.filter_prefix("backbone/")).unwrap();

    let mut model = Detector::<f64>::new(cfg, 2).unwrap();
    let before = model.clone();
    let report = model.load_pretrained(&path).unwrap();
    assert!(report.unexpected.is_empty());
    assert!(report.loaded.iter().all(|n| n.starts_with("backbone/")));
    assert!(!report.missing.is_empty() && report.missing.iter().all(|n| n.starts_with("fpn/")));
    for (name, t) in model.params.iter() {
        if name.starts_with("backbone/") {
            assert_eq!(t, donor.params.get(name).unwrap());
        } else {
            assert_eq!(t, before.params.get(name).unwrap(), "{name} changed");
        }
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn parameter_names_cover_every_level() {
    let model = Detector::<f64>::new(toy_model_config(5, true), 0).unwrap();
    for j in 0..NUM_LEVELS {
        let p = fusion_prefix(j);
        for part in ["q", "k", "v", "out", "conv"] {
            assert!(model.params.get(&format!("{p}/{part}/w")).is_some(), "{p}/{part}");
        }
    }
}
