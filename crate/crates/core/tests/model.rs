use aang_core::corpus::{TargetKind, Targets, TransformedBatch, CLS, PAD};
use aang_core::model::*;
use aang_core::objective_space::{OutputTag, ReprTag};
use aang_core::rng::{stream, Stream};
use ndarray::{Array1, Array2, Axis};

fn tiny_config(d: usize, heads: usize, layers: usize, vocab: usize, seq: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        num_classes: 3,
        d_model: d,
        n_heads: heads,
        d_ff: 2 * d,
        n_layers: layers,
        max_seq_len: seq,
        init_std: 0.3,
    }
}

/// Two rows, the second padded after four positions.
fn batch_for(output: OutputTag, mode: ReprTag, seq: usize, vocab: u32) -> TransformedBatch {
    let lengths = vec![seq, 4];
    let mut ids = vec![vec![PAD; seq]; 2];
    for (b, row) in ids.iter_mut().enumerate() {
        row[0] = CLS;
        for i in 1..lengths[b] {
            row[i] = 4 + ((i * 3 + b * 5) as u32 % (vocab - 4));
        }
    }
    let loss_mask: Vec<Vec<bool>> = (0..2)
        .map(|b| (0..seq).map(|i| i >= 1 && i < lengths[b]).collect())
        .collect();
    let (kind, targets) = match output {
        OutputTag::DenoiseToken | OutputTag::NextToken => (
            TargetKind::TokenIds,
            Targets::TokenIds(
                (0..2)
                    .map(|b| (0..seq).map(|i| 4 + ((i * 7 + b) as u32 % (vocab - 4))).collect())
                    .collect(),
            ),
        ),
        OutputTag::EndTaskLabel => (TargetKind::ClassLabel, Targets::ClassLabel(vec![2, 0])),
        OutputTag::TfIdf => (
            TargetKind::TfIdfValues,
            Targets::TfIdfValues(
                (0..2)
                    .map(|b| (0..seq).map(|i| ((i + b) as f64 * 0.37).sin()).collect())
                    .collect(),
            ),
        ),
    };
    let loss_mask = if kind == TargetKind::ClassLabel {
        vec![vec![false; seq]; 2]
    } else {
        loss_mask
    };
    TransformedBatch {
        input_ids: ids,
        lengths,
        target_kind: kind,
        targets,
        loss_mask,
        repr_mode: mode,
        output,
        descriptor_id: 0,
    }
}

fn mask_for(mode: ReprTag, seq: usize) -> AttentionMaskSpec {
    let mut rng = stream(11, Stream::Mask);
    build_attention_mask(mode, seq, &mut rng).unwrap()
}

fn model_with_heads(cfg: ModelConfig, seed: u64) -> TinyModel {
    let mut rng = stream(seed, Stream::Init);
    let mut m = TinyModel::new(cfg, &mut rng).unwrap();
    for &o in OutputTag::ALL {
        m.ensure_head(HeadKind::Output(o), &mut rng);
    }
    // Nonzero class output layer so its gradients reach the body.
    for id in 0..m.params.len() {
        let name = m.params.tensor(id).name.clone();
        if name.contains("out.weight") && name.starts_with("head.") {
            let shape = m.params.value(id).dim();
            *m.params.value_mut(id) = Array2::from_shape_fn(shape, |(i, j)| ((i * 5 + j) as f64 * 0.9).sin() * 0.4);
        }
    }
    m
}

fn loss_of(m: &TinyModel, batch: &TransformedBatch, mask: &AttentionMaskSpec) -> f64 {
    forward(m, batch, mask).unwrap().0
}

#[test]
fn backward_matches_central_differences_for_every_mode_and_head() {
    let seq = 6;
    let base = model_with_heads(tiny_config(8, 2, 2, 10, seq), 5);
    let eps = 1e-4;
    let mut checked = 0usize;
    for &mode in ReprTag::ALL {
        let mask = mask_for(mode, seq);
        for &o in OutputTag::ALL {
            let batch = batch_for(o, mode, seq, 10);
            let (_, mut tape) = forward(&base, &batch, &mask).unwrap();
            let grads = tape.backward().unwrap();
            let mut m = base.clone();
            for id in 0..m.params.len() {
                let (r, c) = m.params.value(id).dim();
                for i in 0..r {
                    for j in 0..c {
                        let orig = m.params.value(id)[[i, j]];
                        m.params.value_mut(id)[[i, j]] = orig + eps;
                        let up = loss_of(&m, &batch, &mask);
                        m.params.value_mut(id)[[i, j]] = orig - eps;
                        let down = loss_of(&m, &batch, &mask);
                        m.params.value_mut(id)[[i, j]] = orig;
                        let fd = (up - down) / (2.0 * eps);
                        let an = grads.get(id)[[i, j]];
                        let tol = 1e-7 + 1e-4 * fd.abs().max(an.abs());
                        assert!(
                            (fd - an).abs() <= tol,
                            "{mode}/{o} {} [{i},{j}]: analytic {an} vs numeric {fd}",
                            m.params.tensor(id).name
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn unused_heads_get_exactly_zero_gradient() {
    let seq = 6;
    let m = model_with_heads(tiny_config(8, 2, 1, 10, seq), 2);
    let mask = mask_for(ReprTag::Bidirectional, seq);
    let batch = batch_for(OutputTag::DenoiseToken, ReprTag::Bidirectional, seq, 10);
    let (_, mut tape) = forward(&m, &batch, &mask).unwrap();
    let g = tape.backward().unwrap();
    for kind in [HeadKind::Output(OutputTag::TfIdf), HeadKind::Output(OutputTag::EndTaskLabel), HeadKind::Dev] {
        for id in m.head_params(kind) {
            assert!(g.get(id).iter().all(|&v| v == 0.0));
        }
    }
    let used = m.head_params(HeadKind::Output(OutputTag::DenoiseToken));
    assert!(g.get(used[0]).iter().any(|&v| v != 0.0));
}

#[test]
fn uniform_class_head_gives_log_c() {
    let seq = 6;
    let mut rng = stream(1, Stream::Init);
    let mut m = TinyModel::new(tiny_config(8, 2, 2, 10, seq), &mut rng).unwrap();
    m.ensure_head(HeadKind::Output(OutputTag::EndTaskLabel), &mut rng);
    let batch = batch_for(OutputTag::EndTaskLabel, ReprTag::Bidirectional, seq, 10);
    let loss = loss_of(&m, &batch, &mask_for(ReprTag::Bidirectional, seq));
    assert!((loss - 3f64.ln()).abs() < 1e-6);
}

#[test]
fn empty_loss_mask_gives_zero_loss_and_zero_gradient() {
    let seq = 6;
    let m = model_with_heads(tiny_config(8, 2, 1, 10, seq), 3);
    let mut batch = batch_for(OutputTag::DenoiseToken, ReprTag::Bidirectional, seq, 10);
    batch.loss_mask = vec![vec![false; seq]; 2];
    let (loss, mut tape) = forward(&m, &batch, &mask_for(ReprTag::Bidirectional, seq)).unwrap();
    assert_eq!(loss, 0.0);
    let g = tape.backward().unwrap();
    assert!(g.flatten(&m.params, GradScope::BodyAndHeads).iter().all(|&v| v == 0.0));
}

#[test]
fn missing_head_is_an_error() {
    let seq = 6;
    let mut rng = stream(1, Stream::Init);
    let m = TinyModel::new(tiny_config(8, 2, 1, 10, seq), &mut rng).unwrap();
    let batch = batch_for(OutputTag::TfIdf, ReprTag::Bidirectional, seq, 10);
    let r = forward(&m, &batch, &mask_for(ReprTag::Bidirectional, seq));
    assert!(matches!(r, Err(aang_core::Error::MissingHead(_))));
}

#[test]
fn flatten_scopes_partition_the_parameters() {
    let m = model_with_heads(tiny_config(8, 2, 1, 10, 6), 4);
    let g = Gradients::zeros_like(&m.params);
    let full = g.flatten(&m.params, GradScope::BodyAndHeads).len();
    let body = g.flatten(&m.params, GradScope::BodyOnly).len();
    let heads: usize = m
        .head_kinds()
        .into_iter()
        .flat_map(|k| m.head_params(k))
        .map(|id| m.params.value(id).len())
        .sum();
    assert_eq!(full, m.params.num_scalars());
    assert_eq!(body + heads, full);
}

fn full_input(ids: Vec<Vec<u32>>, positions: Vec<Vec<usize>>) -> EncoderInput {
    let is_pad = ids.iter().map(|r| r.iter().map(|&t| t == PAD).collect()).collect();
    EncoderInput { ids, positions, is_pad }
}

#[test]
fn left_to_right_hidden_states_ignore_later_tokens() {
    let seq = 8;
    let m = model_with_heads(tiny_config(16, 4, 2, 12, seq), 6);
    let base: Vec<u32> = vec![2, 5, 6, 7, 8, 9, 10, 11];
    let pos = vec![(0..seq).collect::<Vec<_>>()];
    for (mode, changed) in [(ReprTag::LeftToRight, 5usize), (ReprTag::RightToLeft, 2usize)] {
        let mask = mask_for(mode, seq);
        let mut other = base.clone();
        other[changed] = 4;
        let h1 = hidden_states(&m, &full_input(vec![base.clone()], pos.clone()), &mask).unwrap();
        let h2 = hidden_states(&m, &full_input(vec![other], pos.clone()), &mask).unwrap();
        for i in 0..seq {
            let unaffected = if mode == ReprTag::LeftToRight { i < changed } else { i > changed };
            let same = h1.row(i).iter().zip(h2.row(i).iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            if unaffected {
                assert!(same, "{mode}: position {i} changed");
            } else if i == changed {
                assert!(!same);
            }
        }
    }
}

#[test]
fn random_factorized_equals_left_to_right_on_permuted_sequence() {
    let seq = 8;
    let m = model_with_heads(tiny_config(16, 4, 2, 12, seq), 7);
    let ids: Vec<u32> = vec![2, 9, 4, 11, 7, 5, 10, 6];
    let perm = vec![3, 0, 6, 1, 7, 2, 5, 4];
    let rf = AttentionMaskSpec::from_permutation(perm.clone()).unwrap();
    let h = hidden_states(&m, &full_input(vec![ids.clone()], vec![(0..seq).collect()]), &rf).unwrap();

    let permuted: Vec<u32> = perm.iter().map(|&p| ids[p]).collect();
    let l2r = mask_for(ReprTag::LeftToRight, seq);
    let hp = hidden_states(&m, &full_input(vec![permuted], vec![perm.clone()]), &l2r).unwrap();
    for (r, &p) in perm.iter().enumerate() {
        for (a, b) in hp.row(r).iter().zip(h.row(p).iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_rows_sum_to_one_over_permitted_positions() {
    let seq = 6;
    let m = model_with_heads(tiny_config(8, 2, 2, 10, seq), 8);
    for &mode in ReprTag::ALL {
        let mask = mask_for(mode, seq);
        let batch = batch_for(OutputTag::DenoiseToken, mode, seq, 10);
        let input = EncoderInput::from_batch(&batch);
        let maps = attention_maps(&m, &input, &mask).unwrap();
        assert_eq!(maps.len(), 2 * 2 * 2);
        for (k, a) in maps.iter().enumerate() {
            let b = (k / 2) % 2;
            let allowed = mask.with_padding(&input.is_pad[b]);
            for i in 0..seq {
                let s: f64 = a.row(i).sum();
                assert!((s - 1.0).abs() < 1e-6);
                for j in 0..seq {
                    if !allowed[[i, j]] {
                        assert_eq!(a[[i, j]], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_layer_model_matches_softmax_regression_gradient() {
    let seq = 6;
    let vocab = 10;
    let mut rng = stream(9, Stream::Init);
    let mut m = TinyModel::new(tiny_config(8, 2, 0, vocab, seq), &mut rng).unwrap();
    let kind = HeadKind::Output(OutputTag::DenoiseToken);
    m.ensure_head(kind, &mut rng);
    let batch = batch_for(OutputTag::DenoiseToken, ReprTag::Bidirectional, seq, vocab as u32);
    let (_, mut tape) = forward(&m, &batch, &mask_for(ReprTag::Bidirectional, seq)).unwrap();
    let g = tape.backward().unwrap();

    let e = m.params.value(m.params.find("embed.token").unwrap()).clone();
    let pe = m.params.value(m.params.find("embed.position").unwrap()).clone();
    let w = m.params.value(m.params.find("head.DenoiseToken.weight").unwrap()).clone();
    let bias = m.params.value(m.params.find("head.DenoiseToken.bias").unwrap()).clone();
    let Targets::TokenIds(t) = &batch.targets else { unreachable!() };
    let lm = &batch.loss_mask;
    let picks: Vec<(usize, usize)> = (0..2)
        .flat_map(|b| (0..seq).filter(move |&i| lm[b][i]).map(move |i| (b, i)))
        .collect();
    let n = picks.len() as f64;
    let mut gw = Array2::<f64>::zeros(w.dim());
    let mut gb = Array1::<f64>::zeros(vocab);
    for &(b, i) in &picks {
        let x = &e.row(batch.input_ids[b][i] as usize) + &pe.row(i);
        let z = x.dot(&w) + bias.row(0);
        let mx = z.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let ez = z.mapv(|v| (v - mx).exp());
        let mut p = &ez / ez.sum();
        p[t[b][i] as usize] -= 1.0;
        p /= n;
        gw += &x.insert_axis(Axis(1)).dot(&p.clone().insert_axis(Axis(0)));
        gb += &p;
    }
    let wid = m.params.find("head.DenoiseToken.weight").unwrap();
    let bid = m.params.find("head.DenoiseToken.bias").unwrap();
    for (a, b) in g.get(wid).iter().zip(gw.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in g.get(bid).iter().zip(gb.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_restores_loss() {
    let seq = 6;
    let m = model_with_heads(tiny_config(8, 2, 1, 10, seq), 12);
    let mask = mask_for(ReprTag::LeftToRight, seq);
    let batch = batch_for(OutputTag::NextToken, ReprTag::LeftToRight, seq, 10);
    let before = loss_of(&m, &batch, &mask);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m.params, &path).unwrap();
    let mut other = model_with_heads(tiny_config(8, 2, 1, 10, seq), 13);
    assert_ne!(loss_of(&other, &batch, &mask), before);
    load_checkpoint(&mut other.params, &path).unwrap();
    assert_eq!(loss_of(&other, &batch, &mask).to_bits(), before.to_bits());
}
