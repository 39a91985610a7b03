//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uld_core::model::{AttentionConfig, Bound, ModelConfig, ParamStore};
use uld_core::numerics::{relative_error, Graph, Tensor, Var};
use uld_core::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Small detector used wherever a full network is needed quickly.
pub fn toy_model_config(num_windows: usize, attention: bool) -> ModelConfig {
    ModelConfig {
        backbone_widths: vec![4, 4, 8, 8],
        backbone_blocks: vec![1, 1, 1, 1],
        fpn_channels: 8,
        num_windows,
        attention,
        attention_cfg: AttentionConfig {
            heads: 2,
            dk_per_head: 3,
            dv_total: 4,
        },
        head_convs: 1,
        ..ModelConfig::default()
    }
}

/// Outcome of a parameter-space gradient check.
#[derive(Debug, Default)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// `(name, coordinate, analytic, numeric)` for every checked coordinate.
    pub entries: Vec<(String, usize, f64, f64)>,
}

/// Central-difference check of `loss` with respect to the listed parameter
/// coordinates. `loss` builds a scalar from a graph with the store bound.
pub fn param_gradcheck(
    store: &ParamStore<f64>,
    coords: &[(String, Vec<usize>)],
    step: f64,
    loss: impl Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
) -> ParamCheck {
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let root = loss(&mut g, &b).unwrap();
    let grads = g.backward(root);
    let mut report = ParamCheck::default();
    for (name, cs) in coords {
        let var = b.var(name).unwrap();
        let analytic: Vec<f64> = match grads.get(var) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; store.get(name).unwrap().len()],
        };
        let eval = |c: usize, delta: f64| -> Result<f64> {
            let mut s = store.clone();
            s.get_mut(name).unwrap().data_mut()[c] += delta;
            let mut g = Graph::new();
            let b = s.bind(&mut g);
            let y = loss(&mut g, &b)?;
            Ok(g.value(y).item())
        };
        for &c in cs {
            let numeric = (eval(c, step).unwrap() - eval(c, -step).unwrap()) / (2.0 * step);
            let err = relative_error(analytic[c], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{c}]");
            }
            report.checked += 1;
            report.entries.push((name.clone(), c, analytic[c], numeric));
        }
    }
    report
}

/// Up to `per_tensor` spread-out coordinates of every parameter.
pub fn sample_coords(store: &ParamStore<f64>, per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Vec<usize>)> {
    store
        .iter()
        .map(|(name, t)| {
            let n = t.len();
            let mut cs: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
            };
            cs.sort_unstable();
            cs.dedup();
            (name.to_string(), cs)
        })
        .collect()
}

/// `sum(x ⊙ r)` for a fixed random `r`, a generic scalar readout.
pub fn random_readout(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let r = g.input(random(&shape, &mut rng(seed)));
    let p = g.mul(x, r)?;
    Ok(g.sum(p))
}

use uld_core::detect::{assign_targets, pyramid_geometry, total_loss, LocationTargets, LossConfig, DEFAULT_LEVEL_RANGES};
use uld_core::geometry::BBox;
use uld_core::model::{LevelOutput, FIRST_LEVEL};

/// Random boxes inside a `size × size` image, side lengths in `[lo, hi)`.
pub fn random_boxes(n: usize, size: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let w = rng.gen_range(lo..hi).min(size);
            let h = rng.gen_range(lo..hi).min(size);
            let x = rng.gen_range(0.0..=size - w);
            let y = rng.gen_range(0.0..=size - h);
            BBox::new(x, y, x + w, y + h)
        })
        .collect()
}

/// A random batch of raw head outputs with targets from random boxes.
pub fn toy_loss_batch(seed: u64) -> (Vec<Vec<oracle::ToyLevel>>, Vec<Vec<LocationTargets>>) {
    let mut r = rng(seed);
    let images = r.gen_range(1..=3);
    let size = [32usize, 64][r.gen_range(0..2)];
    let mut levels = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..images {
        let nb = r.gen_range(0..=4);
        let boxes = random_boxes(nb, size as f64, 4.0, 60.0, &mut r);
        let t = assign_targets(&boxes, &pyramid_geometry(size, size), &DEFAULT_LEVEL_RANGES).levels;
        let lv = t
            .iter()
            .map(|lt| {
                let n = lt.geometry.len();
                oracle::ToyLevel {
                    stride: lt.geometry.stride,
                    cls: (0..n).map(|_| r.gen_range(-4.0..2.0)).collect(),
                    reg: (0..4 * n).map(|_| r.gen_range(0.5f64..40.0)).collect(),
                    ctr: (0..n).map(|_| r.gen_range(-2.0..2.0)).collect(),
                    targets: (0..n).map(|i| lt.labels[i].then(|| (lt.reg[i], lt.ctr[i]))).collect(),
                }
            })
            .collect();
        levels.push(lv);
        targets.push(t);
    }
    (levels, targets)
}

/// Puts a toy batch on a tape as head outputs.
pub fn toy_outputs(g: &mut Graph<f64>, batch: &[Vec<oracle::ToyLevel>]) -> Vec<Vec<LevelOutput>> {
    batch
        .iter()
        .map(|image| {
            image
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    let n = l.cls.len();
                    let side = (n as f64).sqrt() as usize;
                    LevelOutput {
                        level: j + FIRST_LEVEL,
                        stride: l.stride,
                        cls: g.input(Tensor::new(vec![1, side, side], l.cls.clone()).unwrap()),
                        reg: g.input(Tensor::new(vec![4, side, side], l.reg.clone()).unwrap()),
                        ctr: g.input(Tensor::new(vec![1, side, side], l.ctr.clone()).unwrap()),
                    }
                })
                .collect()
        })
        .collect()
}

/// Library loss of a toy batch as `(total, cls, reg, ctr)`.
pub fn library_loss(batch: &[Vec<oracle::ToyLevel>], targets: &[Vec<LocationTargets>], cfg: &LossConfig) -> (f64, f64, f64, f64) {
    let mut g = Graph::new();
    let outs = toy_outputs(&mut g, batch);
    let pairs: Vec<(&[LevelOutput], &[LocationTargets])> =
        outs.iter().zip(targets).map(|(o, t)| (o.as_slice(), t.as_slice())).collect();
    let v = total_loss(&mut g, &pairs, cfg).unwrap().values(&g);
    (v.total, v.cls, v.reg, v.ctr)
}

/// The shipped desk-scale experiment config.
pub fn desk_config() -> uld_core::train::ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
    uld_core::train::ExperimentConfig::load(&path).unwrap()
}

/// Fresh scratch directory under the system temp dir.
pub fn scratch_dir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("uld-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// Random multi-image evaluation scene: lesions plus detections that are a mix
/// of jittered copies and clutter, with scores on a coarse grid so ties occur.
pub fn random_eval_scene(seed: u64, max_images: usize) -> (Vec<uld_core::detect::DetectionRow>, Vec<uld_core::ct::BoxAnnotation>) {
    use uld_core::ct::{BoxAnnotation, Organ};
    use uld_core::detect::DetectionRow;
    let mut r = rng(seed);
    let images = r.gen_range(1..=max_images);
    let (mut dets, mut gts) = (Vec::new(), Vec::new());
    for i in 0..images {
        let id = format!("img{i:02}");
        let n_gt = r.gen_range(0..=5);
        let lesions = random_boxes(n_gt, 128.0, 6.0, 40.0, &mut r);
        for b in &lesions {
            let organ = Organ::ALL[r.gen_range(0..Organ::ALL.len())];
            gts.push(BoxAnnotation::new(id.clone(), *b, organ, r.gen_range(3.0..50.0)).unwrap());
        }
        for _ in 0..r.gen_range(0..=8) {
            let b = if !lesions.is_empty() && r.gen_bool(0.6) {
                let g = lesions[r.gen_range(0..lesions.len())];
                let j = 0.3 * g.width().min(g.height());
                let (dx, dy) = (r.gen_range(-j..=j), r.gen_range(-j..=j));
                BBox::new(g.x1 + dx, g.y1 + dy, g.x2 + dx, g.y2 + dy)
            } else {
                random_boxes(1, 128.0, 6.0, 40.0, &mut r)[0]
            };
            let score = r.gen_range(1..=10) as f64 / 10.0;
            dets.push(DetectionRow { image_id: id.clone(), x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2, score });
        }
    }
    if gts.is_empty() {
        gts.push(BoxAnnotation::new("img00", BBox::new(10.0, 10.0, 30.0, 30.0), Organ::ALL[0], 12.0).unwrap());
    }
    (dets, gts)
}
