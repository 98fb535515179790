#![allow(clippy::needless_range_loop)]

use ivit_core::autodiff::Tape;
use ivit_core::params::{trunc_normal, ParamStore};
use ivit_core::vit::*;
use ivit_core::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(depth: usize, shift: ShiftVariant, heads: Vec<usize>) -> VitConfig {
    VitConfig {
        height: 8,
        width: 8,
        patch: 4,
        dim: 16,
        depth,
        heads: 2,
        mlp_hidden: 32,
        shift,
        shift_back: None,
        shift_forward: None,
        dataset_heads: heads,
    }
}

/// Initialisation plus a sizeable perturbation so no weight is special.
fn generic_model(cfg: VitConfig, seed: u64) -> VitModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = VitModel::<f64>::init(cfg.clone(), &mut rng).unwrap();
    let store = base
        .params()
        .map_values(|p| p.value.add(&trunc_normal(p.value.shape(), 0.3, &mut rng)).unwrap());
    VitModel::from_store(cfg, store).unwrap()
}

fn pixels(shape: &[usize], seed: u64) -> Tensor<f64> {
    trunc_normal(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Literal reading of the piecewise shift for class tokens `[b][t][d]`.
fn shift_oracle(cls: &[Vec<Vec<f64>>], back: usize, fwd: usize) -> Vec<Vec<Vec<f64>>> {
    let t_len = cls[0].len();
    let mut out = cls.to_vec();
    for (b, clip) in cls.iter().enumerate() {
        for t in 0..t_len {
            for d in 0..clip[t].len() {
                out[b][t][d] = if d < back {
                    if t == 0 { 0.0 } else { clip[t - 1][d] }
                } else if d < back + fwd {
                    if t + 1 == t_len { 0.0 } else { clip[t + 1][d] }
                } else {
                    clip[t][d]
                };
            }
        }
    }
    out
}

fn run_shift(z: &Tensor<f64>, b: usize, t: usize, back: usize, fwd: usize) -> Tensor<f64> {
    let tape = Tape::new();
    let act = ActivationSet::new(tape.leaf(z.clone()), b, t).unwrap();
    token_shift(act, back, fwd).unwrap().z.value()
}

#[test]
fn token_shift_unit_vector() {
    let z = Tensor::<f64>::from_f64(vec![3, 1, 4], &(1..=12).map(f64::from).collect::<Vec<_>>()).unwrap();
    let out = run_shift(&z, 1, 3, 1, 1);
    let expect = [0.0, 6.0, 3.0, 4.0, 1.0, 10.0, 7.0, 8.0, 5.0, 0.0, 11.0, 12.0];
    assert_eq!(out.data(), &expect);
    let cls: Vec<Vec<Vec<f64>>> = vec![z.data().chunks(4).map(|c| c.to_vec()).collect()];
    let oracle: Vec<f64> = shift_oracle(&cls, 1, 1).concat().concat();
    assert_eq!(oracle, expect);
}

#[test]
fn token_shift_degenerate_amounts() {
    let z = pixels(&[6, 3, 8], 1);
    assert_eq!(run_shift(&z, 2, 3, 0, 0), z);
    let single = run_shift(&z, 6, 1, 2, 3);
    for row in 0..6 {
        let cls = &single.data()[row * 24..row * 24 + 8];
        assert!(cls[..5].iter().all(|&v| v == 0.0));
        assert_eq!(&cls[5..], &z.data()[row * 24 + 5..row * 24 + 8]);
    }
    let tape = Tape::new();
    let act = ActivationSet::new(tape.leaf(z), 2, 3).unwrap();
    assert!(token_shift(act, 5, 4).is_err());
}

proptest! {
    #[test]
    fn token_shift_matches_oracle(b in 1usize..3, t in 1usize..6, n in 1usize..4, d in 1usize..7, back in 0usize..4, fwd in 0usize..4, seed in any::<u64>()) {
        prop_assume!(back + fwd <= d);
        let z = pixels(&[b * t, n, d], seed);
        let out = run_shift(&z, b, t, back, fwd);
        let cls: Vec<Vec<Vec<f64>>> = (0..b)
            .map(|bi| (0..t).map(|ti| z.data()[(bi * t + ti) * n * d..][..d].to_vec()).collect())
            .collect();
        let want = shift_oracle(&cls, back, fwd);
        for bi in 0..b {
            for ti in 0..t {
                let row = (bi * t + ti) * n * d;
                prop_assert_eq!(&out.data()[row..row + d], &want[bi][ti][..]);
                // Patch tokens pass through untouched.
                prop_assert_eq!(&out.data()[row + d..row + n * d], &z.data()[row + d..row + n * d]);
            }
        }
    }

    #[test]
    fn patch_count_law(grid_h in 1usize..8, grid_w in 1usize..8, patch in 1usize..9) {
        let mut cfg = config(1, ShiftVariant::None, vec![2]);
        cfg.height = grid_h * patch;
        cfg.width = grid_w * patch;
        cfg.patch = patch;
        prop_assert!(cfg.validate().is_ok());
        prop_assert_eq!(cfg.num_patches() * patch * patch, cfg.height * cfg.width);
        prop_assert_eq!(cfg.patch_dim(), 3 * patch * patch);
    }
}

#[test]
fn shift_zero_fill_only_at_clip_ends() {
    // Nonzero input, so zeros in the output come from the boundary fill.
    let z = pixels(&[5, 2, 8], 4).map(|v| v.abs() + 0.5);
    let out = run_shift(&z, 1, 5, 2, 3);
    for t in 0..5 {
        for d in 0..8 {
            let zero = out.data()[t * 16 + d] == 0.0;
            let boundary = (t == 0 && d < 2) || (t == 4 && (2..5).contains(&d));
            assert_eq!(zero, boundary, "frame {t} channel {d}");
        }
    }
}

#[test]
fn embedding_matches_two_step_oracle() {
    let cfg = config(1, ShiftVariant::None, vec![2]);
    let model = generic_model(cfg.clone(), 3);
    let x = pixels(&[2, 3, 8, 8], 5);
    let patches = patchify(&x, 4).unwrap();
    let get = |n: &str| model.params().by_name(n).unwrap().value.clone();
    let (proj, pos, cls) = (get("embed.proj"), get("embed.pos"), get("embed.cls"));
    let tape = Tape::new();
    let bound = model.params().bind(&tape);
    let pe = PatchEmbedding {
        proj: model.params().id_of("embed.proj").unwrap(),
        pos: model.params().id_of("embed.pos").unwrap(),
        cls: model.params().id_of("embed.cls").unwrap(),
    };
    let z = embed(&tape, &patches, &pe, &bound, 2, 1).unwrap().z.value();
    // Step one: project every patch. Step two: add positions, prepend c₀.
    let projected = patches.matmul(&proj).unwrap();
    for row in 0..2 {
        for tok in 0..5 {
            for d in 0..16 {
                let want = if tok == 0 {
                    cls.data()[d] + pos.data()[d]
                } else {
                    projected.data()[(row * 4 + tok - 1) * 16 + d] + pos.data()[tok * 16 + d]
                };
                assert_eq!(z.data()[(row * 5 + tok) * 16 + d], want);
            }
        }
    }
}

#[test]
fn zero_embedding_leaves_only_the_class_token() {
    let cfg = config(1, ShiftVariant::None, vec![2]);
    let model = generic_model(cfg.clone(), 3);
    let store = model.params().map_values(|p| match p.name.as_str() {
        "embed.proj" | "embed.pos" => Tensor::zeros(p.value.shape().to_vec()),
        _ => p.value.clone(),
    });
    let model = VitModel::from_store(cfg, store).unwrap();
    let tape = Tape::new();
    let bound = model.params().bind(&tape);
    let pe = PatchEmbedding {
        proj: model.params().id_of("embed.proj").unwrap(),
        pos: model.params().id_of("embed.pos").unwrap(),
        cls: model.params().id_of("embed.cls").unwrap(),
    };
    let patches = patchify(&pixels(&[1, 3, 8, 8], 1), 4).unwrap();
    let z = embed(&tape, &patches, &pe, &bound, 1, 1).unwrap().z.value();
    assert_eq!(&z.data()[..16], model.params().by_name("embed.cls").unwrap().value.data());
    assert!(z.data()[16..].iter().all(|&v| v == 0.0));
}

/// A single encoder block with D = 2, one head, hidden width 3, and the
/// weights given explicitly.
struct HandBlock {
    store: ParamStore<f64>,
    block: EncoderBlock,
}

fn hand_block(values: &[f64]) -> HandBlock {
    let mut store = ParamStore::new();
    let mut it = values.iter().copied();
    let mut take = |name: &str, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
        store.insert(name, Tensor::new(shape, data).unwrap()).unwrap()
    };
    let ln1 = LayerNormParams { gamma: take("g1", vec![2]), beta: take("b1", vec![2]) };
    let query = Linear { weight: take("wq", vec![2, 2]), bias: Some(take("bq", vec![2])) };
    let key = Linear { weight: take("wk", vec![2, 2]), bias: None };
    let value = Linear { weight: take("wv", vec![2, 2]), bias: Some(take("bv", vec![2])) };
    let out = Linear { weight: take("wo", vec![2, 2]), bias: Some(take("bo", vec![2])) };
    let ln2 = LayerNormParams { gamma: take("g2", vec![2]), beta: take("b2", vec![2]) };
    let fc1 = Linear { weight: take("w1", vec![2, 3]), bias: Some(take("c1", vec![3])) };
    let fc2 = Linear { weight: take("w2", vec![3, 2]), bias: Some(take("c2", vec![2])) };
    let block = EncoderBlock { ln1, msa: Attention { query, key, value, out, heads: 1 }, ln2, fc1, fc2 };
    HandBlock { store, block }
}

const HAND_PARAMS: usize = 4 + 6 + 4 + 6 + 6 + 4 + 9 + 8;

fn run_block(h: &HandBlock, z: &Tensor<f64>, frames: usize, shift: Option<(usize, usize)>) -> Tensor<f64> {
    let tape = Tape::new();
    let bound = h.store.bind(&tape);
    let rows = z.shape()[0];
    let act = ActivationSet::new(tape.leaf(z.clone()), rows / frames, frames).unwrap();
    encoder_block(act, &h.block, &bound, shift).unwrap().z.value()
}

// Scalar reference implementations for the step-by-step oracle.
fn ln(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64;
    x.iter().enumerate().map(|(i, a)| g[i] * (a - m) / (v + 1e-5).sqrt() + b[i]).collect()
}

fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, dout: usize) -> Vec<f64> {
    (0..dout)
        .map(|j| x.iter().enumerate().map(|(i, a)| a * w[i * dout + j]).sum::<f64>() + b.map_or(0.0, |b| b[j]))
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn block_oracle(p: &[f64], tokens: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = |a: usize, n: usize| &p[a..a + n];
    let (g1, b1, wq, bq, wk, wv, bv, wo, bo) = (s(0, 2), s(2, 2), s(4, 4), s(8, 2), s(10, 4), s(14, 4), s(18, 2), s(20, 4), s(24, 2));
    let (g2, b2, w1, c1, w2, c2) = (s(26, 2), s(28, 2), s(30, 6), s(36, 3), s(39, 6), s(45, 2));
    let normed: Vec<_> = tokens.iter().map(|t| ln(t, g1, b1)).collect();
    let q: Vec<_> = normed.iter().map(|t| affine(t, wq, Some(bq), 2)).collect();
    let k: Vec<_> = normed.iter().map(|t| affine(t, wk, None, 2)).collect();
    let v: Vec<_> = normed.iter().map(|t| affine(t, wv, Some(bv), 2)).collect();
    let mut out = Vec::new();
    for i in 0..tokens.len() {
        let scores: Vec<f64> = k.iter().map(|kj| (q[i][0] * kj[0] + q[i][1] * kj[1]) / 2f64.sqrt()).collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let mixed: Vec<f64> = (0..2).map(|d| (0..tokens.len()).map(|j| scores[j].exp() / total * v[j][d]).sum()).collect();
        let attn = affine(&mixed, wo, Some(bo), 2);
        let z1: Vec<f64> = (0..2).map(|d| tokens[i][d] + attn[d]).collect();
        let hidden: Vec<f64> = affine(&ln(&z1, g2, b2), w1, Some(c1), 3).into_iter().map(gelu).collect();
        let mlp = affine(&hidden, w2, Some(c2), 2);
        out.push((0..2).map(|d| z1[d] + mlp[d]).collect());
    }
    out
}

#[test]
fn encoder_block_matches_step_by_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p: Vec<f64> = (0..HAND_PARAMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = hand_block(&p);
    let tokens = vec![vec![0.3, -1.1], vec![1.7, 0.4]];
    let z = Tensor::new(vec![1, 2, 2], tokens.concat()).unwrap();
    let got = run_block(&h, &z, 1, None);
    for (a, b) in got.data().iter().zip(block_oracle(&p, &tokens).concat()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn zero_weights_make_the_block_an_identity() {
    // γ = 1, everything else 0.
    let mut p = vec![0.0; HAND_PARAMS];
    p[0..2].copy_from_slice(&[1.0, 1.0]);
    p[26..28].copy_from_slice(&[1.0, 1.0]);
    let z = pixels(&[3, 2, 2], 2);
    assert_eq!(run_block(&hand_block(&p), &z, 1, None), z);
}

#[test]
fn attention_mixes_every_token() {
    let cfg = config(1, ShiftVariant::None, vec![2]);
    let model = generic_model(cfg, 6);
    let tape = Tape::new();
    let bound = model.params().bind(&tape);
    let x = pixels(&[1, 3, 8, 8], 3);
    let base = model.encode(&tape, &bound, &x).unwrap().z.value();
    for patch in 0..4 {
        // Perturb only the pixels of one patch (token patch+1).
        let mut y = x.clone();
        let (py, px) = (patch / 2, patch % 2);
        for c in 0..3 {
            for i in 0..4 {
                y.data_mut()[(c * 8 + py * 4 + i) * 8 + px * 4] += 0.5;
            }
        }
        let tape = Tape::new();
        let bound = model.params().bind(&tape);
        let moved = model.encode(&tape, &bound, &y).unwrap().z.value();
        for tok in 0..5 {
            let diff: f64 = (0..16).map(|d| (moved.data()[tok * 16 + d] - base.data()[tok * 16 + d]).abs()).sum();
            assert!(diff > 1e-6, "patch {patch} left token {tok} unchanged");
        }
    }
}

#[test]
fn temporal_receptive_field_grows_one_frame_per_block() {
    let (t_len, depth) = (6, 3);
    let model = generic_model(config(depth, ShiftVariant::TokenShift, vec![2]), 9);
    let x = pixels(&[1, t_len, 3, 8, 8], 10);
    let base = model.class_tokens(&x).unwrap();
    for src in 0..t_len {
        let mut y = x.clone();
        let frame = 3 * 64;
        for v in &mut y.data_mut()[src * frame..(src + 1) * frame] {
            *v += 0.25;
        }
        let moved = model.class_tokens(&y).unwrap();
        for t in 0..t_len {
            let diff = (0..16).map(|d| (moved.data()[t * 16 + d] - base.data()[t * 16 + d]).abs()).fold(0.0, f64::max);
            if t.abs_diff(src) <= depth {
                assert!(diff > 1e-6, "frame {src} should reach frame {t}");
            } else {
                assert!(diff < 1e-12, "frame {src} leaked into frame {t}: {diff}");
            }
        }
    }
}

#[test]
fn shift_free_model_ignores_frame_order() {
    let model = generic_model(config(2, ShiftVariant::None, vec![3]), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = pixels(&[2, 5, 3, 8, 8], 3);
    let base = model.logits(&x, 0).unwrap();
    let frame = 3 * 64;
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let mut data = Vec::with_capacity(x.numel());
        for b in 0..2 {
            for &t in &perm {
                data.extend_from_slice(&x.data()[(b * 5 + t) * frame..(b * 5 + t + 1) * frame]);
            }
        }
        let y = Tensor::new(x.shape().to_vec(), data).unwrap();
        for (a, b) in model.logits(&y, 0).unwrap().data().iter().zip(base.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn single_frame_video_is_an_image() {
    for seed in 0..20 {
        let model = generic_model(config(2, ShiftVariant::None, vec![4]), seed);
        let img = pixels(&[3, 3, 8, 8], seed + 100);
        let video = img.reshape(vec![3, 1, 3, 8, 8]).unwrap();
        let (a, b) = (model.logits(&img, 0).unwrap(), model.logits(&video, 0).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn duplicated_frames_pool_to_the_image_logits() {
    let model = generic_model(config(2, ShiftVariant::None, vec![4]), 7);
    let img = pixels(&[2, 3, 8, 8], 8);
    let frame = 3 * 64;
    let mut data = Vec::new();
    for b in 0..2 {
        for _ in 0..4 {
            data.extend_from_slice(&img.data()[b * frame..(b + 1) * frame]);
        }
    }
    let video = Tensor::new(vec![2, 4, 3, 8, 8], data).unwrap();
    let (a, b) = (model.logits(&img, 0).unwrap(), model.logits(&video, 0).unwrap());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn logits_shape_follows_the_head() {
    let model = generic_model(config(1, ShiftVariant::TokenShift, vec![10, 101]), 0);
    assert_eq!(model.logits(&pixels(&[3, 3, 8, 8], 0), 1).unwrap().shape(), &[3, 101]);
    assert_eq!(model.logits(&pixels(&[3, 2, 3, 8, 8], 0), 0).unwrap().shape(), &[3, 10]);
    assert!(model.logits(&pixels(&[3, 3, 8, 8], 0), 2).is_err());
}

#[test]
fn checkpoint_roundtrip_gives_identical_logits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ivck");
    let model: VitModel<f32> = generic_model(config(2, ShiftVariant::TokenShift, vec![3, 5]), 4).cast();
    save_checkpoint(&model, &path).unwrap();
    let back: VitModel<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    let x = pixels(&[2, 3, 3, 8, 8], 1).cast::<f32>();
    let (a, b) = (model.logits(&x, 1).unwrap(), back.logits(&x, 1).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
