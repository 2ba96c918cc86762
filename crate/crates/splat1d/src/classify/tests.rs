use rand::Rng;

use super::*;
use crate::rngutil::substream;

fn random_image(seed: u64, width: usize) -> Vec<Rgb> {
    let mut rng = substream(seed, "classify-img");
    (0..width).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

#[test]
fn constant_image_features_differ_only_in_position() {
    let img = vec![[0.4, 0.4, 0.4]; 32];
    let mut rng = substream(0, "emb");
    let emb = Embedding::new(1, ID_EMBED_DIM, &mut rng);
    let a = extract_features(&img, 0, 0, &emb);
    let b = extract_features(&img, 31, 0, &emb);
    assert_ne!(a.f_pos, b.f_pos);
    assert_eq!(a.f_id, b.f_id);
    assert_eq!(a.f_c, b.f_c);
}

#[test]
fn positional_encoding_at_zero_is_all_cosines() {
    let img = random_image(1, 16);
    let mut rng = substream(1, "emb");
    let emb = Embedding::new(1, ID_EMBED_DIM, &mut rng);
    let f = extract_features(&img, 0, 0, &emb);
    for k in 0..POS_FREQUENCIES {
        assert_eq!(f.f_pos[2 * k], 0.0);
        assert_eq!(f.f_pos[2 * k + 1], 1.0);
    }
    assert!(f.f_pos.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn local_std_of_constant_window_is_zero() {
    let img = vec![[0.7, 0.1, 0.5]; 32];
    let feats = extract_static_features(&img);
    for f in &feats.f_c {
        for c in 0..3 {
            assert!(f[6 + c].abs() < 1e-12);
            assert!((f[3 + c] - img[0][c]).abs() < 1e-12);
        }
        assert_eq!(&f[0..3], &[0.7, 0.1, 0.5]);
    }
}

#[test]
fn beta_respects_the_floor_and_softplus_at_zero() {
    // softplus(0) = ln 2, so a zeroed head yields ln 2 + floor.
    let mut rng = substream(2, "beta");
    let mut psi = Mlp::new(&[PSI_IN_DIM, 4, 1], &mut rng);
    for layer in &mut psi.layers {
        layer.w.iter_mut().for_each(|w| *w = 0.0);
        layer.b.iter_mut().for_each(|b| *b = 0.0);
    }
    let img = random_image(3, 8);
    let feats = extract_static_features(&img);
    let emb = Embedding::new(1, ID_EMBED_DIM, &mut rng);
    let betas = predict_beta(&psi, &feats, emb.row(0));
    for b in betas {
        assert!((b - (2.0f64.ln() + BETA_FLOOR)).abs() < 1e-12);
    }

    // Strongly negative raw output saturates to the floor.
    psi.layers.last_mut().unwrap().b[0] = -60.0;
    let betas = predict_beta(&psi, &feats, emb.row(0));
    for b in betas {
        assert!((b - BETA_FLOOR).abs() < 1e-12);
    }
}

#[test]
fn beta_forward_matches_manual_composition() {
    let mut rng = substream(4, "beta-fwd");
    let psi = Mlp::new(&[PSI_IN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], &mut rng);
    let emb = Embedding::new(2, ID_EMBED_DIM, &mut rng);
    let img = random_image(5, 16);
    let feats = extract_static_features(&img);
    let betas = predict_beta(&psi, &feats, emb.row(1));
    for px in 0..16 {
        let mut input = Vec::new();
        input.extend_from_slice(&feats.f_pos[px]);
        input.extend_from_slice(emb.row(1));
        input.extend_from_slice(&feats.f_c[px]);
        let raw = psi.forward(&input);
        let expect = (raw.max(0.0) + (-raw.abs()).exp().ln_1p()) + BETA_FLOOR;
        assert!((betas[px] - expect).abs() < 1e-12);
    }
}

#[test]
fn mask_outputs_stay_strictly_inside_unit_interval() {
    let mut rng = substream(6, "mask");
    let eta = Mlp::new(&[ETA_IN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], &mut rng);
    let img = random_image(7, 32);
    let feats = extract_static_features(&img);
    let beta = vec![0.3; 32];
    for m in predict_mask(&eta, &feats, &beta) {
        assert!(m > 0.0 && m < 1.0);
    }
}

#[test]
fn mask_prediction_is_pixelwise() {
    let mut rng = substream(8, "mask-perm");
    let eta = Mlp::new(&[ETA_IN_DIM, 8, 1], &mut rng);
    let img = random_image(9, 16);
    let feats = extract_static_features(&img);
    let beta: Vec<f64> = (0..16).map(|i| 0.1 + 0.01 * i as f64).collect();
    let m = predict_mask(&eta, &feats, &beta);

    // Reversing the per-pixel features reverses the outputs.
    let rev_feats = ViewFeatures {
        f_pos: feats.f_pos.iter().rev().cloned().collect(),
        f_c: feats.f_c.iter().rev().cloned().collect(),
    };
    let rev_beta: Vec<f64> = beta.iter().rev().cloned().collect();
    let rev = predict_mask(&eta, &rev_feats, &rev_beta);
    let mut expect = m.clone();
    expect.reverse();
    assert_eq!(rev, expect);
}

#[test]
fn uncertainty_loss_identities() {
    // beta = 1 everywhere: loss = mean(L)/2.
    let l = vec![0.2, 0.4, 0.6];
    let loss = uncertainty_loss(&l, &[1.0, 1.0, 1.0]);
    assert!((loss - 0.2).abs() < 1e-12);

    // The pointwise minimizer is beta* = sqrt(L).
    let l = 0.49;
    let at = |b: f64| l / (2.0 * b * b) + b.ln();
    let star = l.sqrt();
    assert!(at(star) < at(star + 1e-3));
    assert!(at(star) < at(star - 1e-3));
}

#[test]
fn uncertainty_gradients_match_finite_differences() {
    let mut rng = substream(10, "uncer-fd");
    let mut psi = Mlp::new(&[PSI_IN_DIM, 8, 8, 1], &mut rng);
    let mut emb = Embedding::new(2, ID_EMBED_DIM, &mut rng);
    let img = random_image(11, 12);
    let feats = extract_static_features(&img);
    let loss_map: Vec<f64> = (0..12).map(|_| rng.gen_range(0.01..0.9)).collect();

    let (_, _, grads, id_grad) = uncertainty_step(&psi, &feats, emb.row(0), &loss_map);

    let h = 1e-5;
    let loss_of = |psi: &Mlp, emb: &Embedding| {
        let betas = predict_beta(psi, &feats, emb.row(0));
        uncertainty_loss(&loss_map, &betas)
    };
    let check = |a: f64, fd: f64, what: &str| {
        let denom = a.abs().max(fd.abs()).max(1e-3);
        assert!((a - fd).abs() / denom < 1e-4, "{what}: {a} vs {fd}");
    };
    for k in 0..psi.layers.len() {
        for idx in (0..psi.layers[k].w.len()).step_by(7) {
            let orig = psi.layers[k].w[idx];
            psi.layers[k].w[idx] = orig + h;
            let plus = loss_of(&psi, &emb);
            psi.layers[k].w[idx] = orig - h;
            let minus = loss_of(&psi, &emb);
            psi.layers[k].w[idx] = orig;
            check(grads.w[k][idx], (plus - minus) / (2.0 * h), "psi w");
        }
    }
    for i in 0..ID_EMBED_DIM {
        let orig = emb.data[i];
        emb.data[i] = orig + h;
        let plus = loss_of(&psi, &emb);
        emb.data[i] = orig - h;
        let minus = loss_of(&psi, &emb);
        emb.data[i] = orig;
        check(id_grad[i], (plus - minus) / (2.0 * h), "embedding");
    }
}

#[test]
fn supervision_loss_gating() {
    let m_c = vec![0.9, 0.2, 0.6];
    // Perfect predictions on active pixels.
    assert_eq!(supervision_loss(&[1.0, 0.0], &[true, false], &[true, true]), 0.0);
    // No active pixels: zero loss and zero gradients.
    let m_self = vec![true, false, true];
    let m_u = vec![false, false, false];
    assert_eq!(supervision_loss(&m_c, &m_self, &m_u), 0.0);
    let mut rng = substream(12, "sup");
    let eta = Mlp::new(&[ETA_IN_DIM, 8, 1], &mut rng);
    let img = random_image(13, 3);
    let feats = extract_static_features(&img);
    let (loss, _, grads) = supervision_step(&eta, &feats, &[0.1; 3], &m_self, &m_u);
    assert_eq!(loss, 0.0);
    assert!(grads.w.iter().all(|layer| layer.iter().all(|&g| g == 0.0)));
}

#[test]
fn supervision_gradients_match_finite_differences() {
    let mut rng = substream(14, "sup-fd");
    let mut eta = Mlp::new(&[ETA_IN_DIM, 8, 8, 1], &mut rng);
    let img = random_image(15, 12);
    let feats = extract_static_features(&img);
    let beta: Vec<f64> = (0..12).map(|_| rng.gen_range(0.05..1.0)).collect();
    let m_self: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.5)).collect();
    let m_u: Vec<bool> = (0..12).map(|_| rng.gen_bool(0.7)).collect();

    let (_, _, grads) = supervision_step(&eta, &feats, &beta, &m_self, &m_u);

    let h = 1e-5;
    let loss_of = |eta: &Mlp| {
        let m_c = predict_mask(eta, &feats, &beta);
        supervision_loss(&m_c, &m_self, &m_u)
    };
    for k in 0..eta.layers.len() {
        for idx in (0..eta.layers[k].w.len()).step_by(5) {
            let orig = eta.layers[k].w[idx];
            eta.layers[k].w[idx] = orig + h;
            let plus = loss_of(&eta);
            eta.layers[k].w[idx] = orig - h;
            let minus = loss_of(&eta);
            eta.layers[k].w[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = grads.w[k][idx];
            let denom = a.abs().max(fd.abs()).max(1e-3);
            assert!((a - fd).abs() / denom < 1e-4, "eta w[{k}][{idx}]: {a} vs {fd}");
        }
    }
}

#[test]
fn mask_head_fits_frozen_labels() {
    let mut rng = substream(16, "fit");
    let mut eta = Mlp::new(&[ETA_IN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], &mut rng);
    let width = 64;
    let img = random_image(17, width);
    let feats = extract_static_features(&img);
    let beta: Vec<f64> = (0..width).map(|i| if (20..40).contains(&i) { 0.8 } else { 0.1 }).collect();
    let m_self: Vec<bool> = (0..width).map(|i| !(20..40).contains(&i)).collect();
    let m_u = vec![true; width];

    let mut opt = Adam::new(1e-3, eta.param_count());
    let (initial, _, _) = supervision_step(&eta, &feats, &beta, &m_self, &m_u);
    let mut last = initial;
    for _ in 0..2000 {
        let (loss, _, grads) = supervision_step(&eta, &feats, &beta, &m_self, &m_u);
        eta.step(&grads, &mut opt);
        last = loss;
    }
    assert!(
        last <= 0.1 * initial,
        "loss only went from {initial} to {last}"
    );
}

#[test]
fn classifier_serialization_round_trips_exactly() {
    let mut rng = substream(18, "ser");
    let clf = NoiseClassifier::new(5, &mut rng);
    let text = serde_json::to_string(&clf).unwrap();
    let back: NoiseClassifier = serde_json::from_str(&text).unwrap();
    assert_eq!(clf, back);
}
