use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn head(kind: HeadKind, dim: usize, classes: usize, seed: u64) -> (FusionHead, ModelParameters) {
    let cfg = FusionConfig {
        head: kind,
        embed: vec![6],
        classifier: vec![5],
        attention_heads: 2,
        attention_head_dim: 3,
        hidden: vec![5],
        angles: ANGLES.to_vec(),
    };
    let mut params = ModelParameters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FusionHead::new(&mut params, &cfg, dim, classes, &mut rng).unwrap();
    (h, params)
}

fn reps(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn invariant(h: &FusionHead, p: &ModelParameters, r: &[Vec<f64>]) -> ClassDistribution {
    let pooling = match h.kind() {
        HeadKind::Max => Pooling::Max,
        HeadKind::Attention => Pooling::Attention,
        _ => Pooling::Vote,
    };
    predict_angle_invariant(h, p, r, pooling).unwrap()
}

fn softmax3(l: [f64; 3]) -> Vec<f64> {
    let z: f64 = l.iter().map(|v| v.exp()).sum();
    l.iter().map(|v| v.exp() / z).collect()
}

#[test]
fn vote_head_sums_logits() {
    let mut params = ModelParameters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let phi = Mlp::new(&mut params, "v", 3, &[3], false, &mut rng);
    let w = params.tensor_mut(phi.layers[0].weight);
    *w = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]])
        .unwrap();
    *params.tensor_mut(phi.layers[0].bias) = Tensor::zeros(1, 3);
    let head = FusionHead::Vote { phi };
    let p = predict_angle_invariant(
        &head,
        &params,
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        Pooling::Vote,
    )
    .unwrap();
    let want = softmax3([1.0, 1.0, 0.0]);
    for (a, b) in p.probs.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn tracking_mean_of_softmaxes() {
    let d = mean_distribution(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]]).unwrap();
    for (a, b) in d.probs.iter().zip([0.4, 0.5, 0.1]) {
        assert!((a - b).abs() < 1e-12);
    }
    let q = vec![0.3, 0.3, 0.4];
    let d = mean_distribution(&[q.clone(), q.clone()]).unwrap();
    for (a, b) in d.probs.iter().zip(&q) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn tracking_head_routes_by_angle() {
    let (h, p) = head(HeadKind::Tracking, 4, 3, 1);
    let r = reps(2, 4, 2);
    let single = h.angle_probs(&p, &[(90, r[0].clone())]).unwrap();
    let one = predict_orientation_tracking(&h, &p, &[(90, r[0].clone())]).unwrap();
    assert_eq!(one.probs, single[0]);
    let both = h
        .angle_probs(&p, &[(90, r[0].clone()), (180, r[1].clone())])
        .unwrap();
    let fused = predict_orientation_tracking(&h, &p, &[(90, r[0].clone()), (180, r[1].clone())])
        .unwrap();
    for c in 0..3 {
        assert!((fused.probs[c] - (both[0][c] + both[1][c]) / 2.0).abs() < 1e-15);
    }
    // a different angle's classifier may consume the same representation
    let swapped = h.angle_probs(&p, &[(180, r[0].clone())]).unwrap();
    assert_ne!(swapped[0], single[0]);
    assert!(predict_orientation_tracking(&h, &p, &[(7, r[0].clone())]).is_err());
}

#[test]
fn tracking_log_probs_match_mean() {
    let (h, p) = head(HeadKind::Tracking, 4, 3, 5);
    let r = reps(3, 4, 6);
    let tagged = [(0u16, r[0].clone()), (45, r[1].clone()), (315, r[2].clone())];
    let want = predict_orientation_tracking(&h, &p, &tagged).unwrap();
    let mut tape = Tape::new();
    let vars: Vec<(u16, Var)> = tagged
        .iter()
        .map(|(a, v)| (*a, tape.leaf(Tensor::row_vector(v.clone()))))
        .collect();
    let lp = h.log_probs_on(&mut tape, &p, &vars).unwrap();
    for (l, q) in tape.value(lp).data().iter().zip(&want.probs) {
        assert!((l.exp() - q).abs() < 1e-12);
    }
}

#[test]
fn invariant_heads_are_distributions_and_permutation_stable() {
    for kind in [HeadKind::Max, HeadKind::Attention, HeadKind::Vote] {
        let (h, p) = head(kind, 5, 4, 3);
        let r = reps(4, 5, 9);
        let a = invariant(&h, &p, &r);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut rev = r.clone();
        rev.reverse();
        let b = invariant(&h, &p, &rev);
        if kind == HeadKind::Vote {
            assert_eq!(a.argmax(), b.argmax());
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-9);
            }
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn identical_set_matches_singleton() {
    for kind in [HeadKind::Max, HeadKind::Attention, HeadKind::Vote] {
        let (h, p) = head(kind, 5, 4, 11);
        let v = reps(1, 5, 12);
        let one = invariant(&h, &p, &v);
        let many = invariant(&h, &p, &[v[0].clone(), v[0].clone(), v[0].clone()]);
        if kind == HeadKind::Vote {
            assert_eq!(one.argmax(), many.argmax());
        } else {
            assert_eq!(one, many);
        }
    }
}

#[test]
fn wrong_pooling_and_empty_set_error() {
    let (h, p) = head(HeadKind::Max, 5, 4, 1);
    assert!(predict_angle_invariant(&h, &p, &reps(2, 5, 1), Pooling::Vote).is_err());
    assert!(predict_angle_invariant(&h, &p, &[], Pooling::Max).is_err());
}

#[test]
fn attention_pool_hand_computed() {
    let mut params = ModelParameters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pool = AttentionPool::new(&mut params, "a", 2, 1, 2, &mut rng);
    let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    *params.tensor_mut(pool.seed) = Tensor::row_vector(vec![1.0, 0.5]);
    *params.tensor_mut(pool.heads[0].query) = eye.clone();
    *params.tensor_mut(pool.heads[0].key) = eye.clone();
    *params.tensor_mut(pool.heads[0].value) = eye.clone();
    *params.tensor_mut(pool.output.weight) = eye;
    *params.tensor_mut(pool.output.bias) = Tensor::row_vector(vec![0.1, -0.2]);

    let x1 = [2.0, 0.0];
    let x2 = [0.0, 4.0];
    // q = (1, 0.5); scores = q.x / sqrt(2)
    let s1 = (1.0 * 2.0) / 2f64.sqrt();
    let s2 = (0.5 * 4.0) / 2f64.sqrt();
    let z = s1.exp() + s2.exp();
    let (w1, w2) = (s1.exp() / z, s2.exp() / z);
    let want = [w1 * x1[0] + w2 * x2[0] + 0.1, w1 * x1[1] + w2 * x2[1] - 0.2];

    let got = attention_pool(&pool, &params, &[x1.to_vec(), x2.to_vec()]).unwrap();
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }

    let single = attention_pool(&pool, &params, &[x1.to_vec()]).unwrap();
    assert_eq!(single.len(), 2);
    assert!((single[0] - 2.1).abs() < 1e-12 && (single[1] + 0.2).abs() < 1e-12);
    assert!(attention_pool(&pool, &params, &[]).is_err());
}

#[test]
fn head_kind_parses() {
    assert_eq!("vote".parse::<HeadKind>().unwrap(), HeadKind::Vote);
    assert!("mean".parse::<HeadKind>().is_err());
}
