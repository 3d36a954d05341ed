//! Novelty bounds, the analytic surprise oracle, and combined-score
//! properties.

use creativity_core::corpus::Artifact;
use creativity_core::measures::{
    batch_report, combine, deep_creativity, distance_to_uniform, distance_upper_bound, novelty,
    novelty_from_posterior, surprise, CreativityWeights, SurpriseConfig, WeightPolicy,
};
use creativity_core::models::{
    CnnConfig, HeadKind, LanguageModel, LmConfig, NextTokenModel, NoveltyClassifier,
    ValueDiscriminator,
};
use creativity_core::rng::Rng;
use creativity_core::tensor::{ParamSet, Tape, Tensor, TensorId};
use creativity_core::Result;
use proptest::prelude::*;

#[test]
fn novelty_hand_cases() {
    // Uniform posterior: maximal novelty.
    assert_eq!(novelty_from_posterior(&[0.25; 4]).unwrap(), 1.0);
    // One-hot: zero novelty, for every position.
    for i in 0..4 {
        let mut y = [0.0; 4];
        y[i] = 1.0;
        let n = novelty_from_posterior(&y).unwrap();
        assert!(n.abs() < 1e-15, "one-hot at {i}: {n}");
    }
    // Hand evaluation: y = (0.5, 0.5, 0), distance √6/6, bound √6/3.
    let n = novelty_from_posterior(&[0.5, 0.5, 0.0]).unwrap();
    assert!((n - 0.5).abs() < 1e-12);
}

#[test]
fn novelty_rejects_degenerate_support() {
    assert!(novelty_from_posterior(&[1.0]).is_err());
    assert!(novelty_from_posterior(&[]).is_err());
}

fn random_posterior(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n).map(|_| -rng.uniform().max(1e-300).ln()).collect();
    let sum: f64 = y.iter().sum();
    for v in &mut y {
        *v /= sum;
    }
    y
}

#[test]
fn novelty_bound_suite() {
    let mut rng = Rng::new(77).split("bounds");
    for n in 2..=10usize {
        let ub = distance_upper_bound(n);
        for _ in 0..10_000 {
            let y = random_posterior(n, &mut rng);
            let d = distance_to_uniform(&y).unwrap();
            assert!(d >= 0.0);
            assert!(d <= ub + 1e-12, "N={n}: distance {d} > bound {ub}");
            let nov = novelty_from_posterior(&y).unwrap();
            assert!((0.0..=1.0).contains(&nov), "N={n}: novelty {nov}");
        }
        // Both bounds attained exactly.
        let uniform = vec![1.0 / n as f64; n];
        assert_eq!(distance_to_uniform(&uniform).unwrap(), 0.0);
        let mut onehot = vec![0.0; n];
        onehot[0] = 1.0;
        let d = distance_to_uniform(&onehot).unwrap();
        assert!((d - ub).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn novelty_is_permutation_invariant(
        mut y in prop::collection::vec(0.001f64..1.0, 2..8),
        rot in 0usize..8
    ) {
        let sum: f64 = y.iter().sum();
        for v in &mut y { *v /= sum; }
        let base = novelty_from_posterior(&y).unwrap();
        let mut rotated = y.clone();
        rotated.rotate_left(rot % y.len());
        let other = novelty_from_posterior(&rotated).unwrap();
        prop_assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn dc_is_strictly_monotone_in_each_component(
        v in 0.0f64..1.0, n in 0.0f64..1.0, s in 0.0f64..3.0,
        dv in 0.01f64..0.5, dn in 0.01f64..0.5, ds in 0.01f64..0.5,
        w1 in 0.05f64..0.9, w2 in 0.05f64..0.9
    ) {
        // Normalize two free weights into a strictly positive triple.
        let total = w1 + w2 + 0.1;
        let weights = CreativityWeights {
            alpha_value: w1 / total,
            alpha_novelty: w2 / total,
            alpha_surprise: 0.1 / total,
        };
        weights.validate().unwrap();
        let base = combine(&weights, v, n, s);
        prop_assert!(combine(&weights, v + dv, n, s) > base);
        prop_assert!(combine(&weights, v, n + dn, s) > base);
        prop_assert!(combine(&weights, v, n, s + ds) > base);
        // Componentwise dominance implies a strictly higher DC.
        prop_assert!(combine(&weights, v + dv, n + dn, s + ds) > base);
    }
}

#[test]
fn weights_must_sum_to_one() {
    assert!(CreativityWeights::default().validate().is_ok());
    let w = CreativityWeights {
        alpha_value: 0.5,
        alpha_novelty: 0.5,
        alpha_surprise: 0.1,
    };
    assert!(w.validate().is_err());
    let w = CreativityWeights {
        alpha_value: 1.2,
        alpha_novelty: -0.2,
        alpha_surprise: 0.0,
    };
    assert!(w.validate().is_err());
}

/// One-unit linear next-token model over a 2-token vocabulary: the two
/// weights are the logits directly, so gradients are computable by hand.
struct TinyModel {
    params: ParamSet,
}

impl TinyModel {
    fn new(w0: f64, w1: f64) -> Self {
        let mut params = ParamSet::new();
        params
            .add("w", Tensor::new(vec![2], vec![w0, w1]).unwrap(), true)
            .unwrap();
        TinyModel { params }
    }
}

impl NextTokenModel for TinyModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn sequence_nll_loss(&self, tape: &mut Tape, tokens: &[u32]) -> Result<TensorId> {
        let w = tape.param(&self.params, 0)?;
        let sm = tape.softmax(w)?;
        let mut terms = Vec::new();
        for &t in tokens {
            let p = tape.pick(sm, t as usize)?;
            terms.push(tape.ln(p)?);
        }
        let total = tape.add_n(&terms)?;
        tape.affine(total, -1.0 / tokens.len() as f64, 0.0)
    }
}

#[test]
fn surprise_matches_pencil_and_paper() {
    let (w0, w1) = (0.8, -0.4);
    let model = TinyModel::new(w0, w1);
    let tokens = [0u32, 1, 1];
    // Mean-NLL gradient of a softmax over direct logits:
    // ∂J/∂w_i = p_i − freq_i.
    let e0 = f64::exp(w0);
    let e1 = f64::exp(w1);
    let p0 = e0 / (e0 + e1);
    let p1 = e1 / (e0 + e1);
    let f0 = 1.0 / 3.0;
    let f1 = 2.0 / 3.0;
    let eta = 1.0;
    let dw0 = -eta * (p0 - f0);
    let dw1 = -eta * (p1 - f1);
    let expected = ((dw0 / w0).abs() + (dw1 / w1).abs()) / 2.0;
    let cfg = SurpriseConfig::default();
    let s = surprise(&model, &tokens, &cfg).unwrap();
    assert!(
        (s - expected).abs() < 1e-12,
        "surprise {s} vs hand value {expected}"
    );
}

#[test]
fn surprise_is_homogeneous_in_eta() {
    let model = TinyModel::new(0.3, 1.1);
    let tokens = [1u32, 0];
    let base = SurpriseConfig::default();
    let doubled = SurpriseConfig { eta: 2.0, ..base };
    let s1 = surprise(&model, &tokens, &base).unwrap();
    let s2 = surprise(&model, &tokens, &doubled).unwrap();
    assert_eq!(s2, 2.0 * s1);
}

#[test]
fn surprise_does_not_mutate_the_model() {
    let mut rng = Rng::new(20);
    let model = LanguageModel::new(
        LmConfig {
            vocab_size: 8,
            embed_dim: 4,
            context_len: 5,
            lstm_units: 4,
            dropout_rate: 0.2,
        },
        &mut rng,
    )
    .unwrap();
    let before: Vec<Vec<u64>> = model
        .params
        .iter()
        .map(|p| p.tensor.values().iter().map(|v| v.to_bits()).collect())
        .collect();
    surprise(&model, &[4, 5, 6, 7], &SurpriseConfig::default()).unwrap();
    let after: Vec<Vec<u64>> = model
        .params
        .iter()
        .map(|p| p.tensor.values().iter().map(|v| v.to_bits()).collect())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn surprise_zero_gradient_is_zero() {
    // Uniform logits and balanced tokens: p_i = freq_i = 1/2, so the
    // gradient vanishes exactly.
    let model = TinyModel::new(0.7, 0.7);
    let s = surprise(&model, &[0, 1], &SurpriseConfig::default()).unwrap();
    assert_eq!(s, 0.0);
}

#[test]
fn surprise_clamps_near_zero_weights() {
    let model = TinyModel::new(1e-12, 0.5);
    let cfg = SurpriseConfig::default();
    let s = surprise(&model, &[0], &cfg).unwrap();
    assert!(s.is_finite());
    // Without clamping the first ratio would be ~1e11; the clamp caps the
    // denominator at 1e-8.
    let tight = SurpriseConfig {
        zero_weight_epsilon: 1e-2,
        ..cfg
    };
    assert!(surprise(&model, &[0], &tight).unwrap() < s);
}

#[test]
fn surprise_rejects_empty_artifacts() {
    let model = TinyModel::new(0.1, 0.2);
    assert!(surprise(&model, &[], &SurpriseConfig::default()).is_err());
}

#[test]
fn exclude_embeddings_policy_skips_the_table() {
    let mut rng = Rng::new(21);
    let model = LanguageModel::new(
        LmConfig {
            vocab_size: 8,
            embed_dim: 4,
            context_len: 5,
            lstm_units: 4,
            dropout_rate: 0.0,
        },
        &mut rng,
    )
    .unwrap();
    let all = surprise(&model, &[4, 5], &SurpriseConfig::default()).unwrap();
    let skip = surprise(
        &model,
        &[4, 5],
        &SurpriseConfig {
            weight_policy: WeightPolicy::ExcludeEmbeddings,
            ..SurpriseConfig::default()
        },
    )
    .unwrap();
    // Embedding rows for absent tokens contribute zero ratios, so
    // excluding the table raises the average here.
    assert!(all >= 0.0 && skip >= 0.0);
    assert_ne!(all, skip);
}

fn scoring_models(vocab: usize, seed: u64) -> (ValueDiscriminator, NoveltyClassifier, LanguageModel) {
    let rng = Rng::new(seed);
    let cnn = |head| CnnConfig {
        vocab_size: vocab,
        embed_dim: 4,
        max_len: 8,
        kernel_sizes: vec![2, 3],
        filters_per_kernel: 3,
        dropout_rate: 0.0,
        head,
    };
    let dv = ValueDiscriminator::new(cnn(HeadKind::Sigmoid), &mut rng.split("dv")).unwrap();
    let dn = NoveltyClassifier::new(cnn(HeadKind::Softmax { num_classes: 3 }), &mut rng.split("dn"))
        .unwrap();
    let gs = LanguageModel::new(
        LmConfig {
            vocab_size: vocab,
            embed_dim: 4,
            context_len: 6,
            lstm_units: 4,
            dropout_rate: 0.0,
        },
        &mut rng.split("gs"),
    )
    .unwrap();
    (dv, dn, gs)
}

fn artifact(id: &str, tokens: &[u32], era: Option<&str>) -> Artifact {
    Artifact {
        id: id.into(),
        raw_text: String::new(),
        tokens: tokens.to_vec(),
        class_label: None,
        era_tag: era.map(|s| s.to_string()),
    }
}

#[test]
fn dc_row_is_exactly_the_weighted_sum() {
    let (dv, dn, gs) = scoring_models(10, 30);
    let weights = CreativityWeights::default();
    let cfg = SurpriseConfig::default();
    let a = artifact("x", &[4, 5, 6, 7], Some("context"));
    let row = deep_creativity(&a, &dv, &dn, &gs, &weights, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&row.value));
    assert!((0.0..=1.0).contains(&row.novelty));
    assert!(row.surprise >= 0.0);
    let expected = combine(&weights, row.value, row.novelty, row.surprise);
    assert!((row.dc - expected).abs() < 1e-12);
    assert_eq!(row.class_posterior.len(), 3);
    // Degenerate weights: DC equals the value component exactly.
    let only_value = CreativityWeights {
        alpha_value: 1.0,
        alpha_novelty: 0.0,
        alpha_surprise: 0.0,
    };
    let row2 = deep_creativity(&a, &dv, &dn, &gs, &only_value, &cfg).unwrap();
    assert_eq!(row2.dc, row2.value);
}

#[test]
fn vocabulary_size_mismatch_rejected() {
    let (dv, _, gs) = scoring_models(10, 31);
    let (_, dn_other, _) = scoring_models(12, 32);
    let a = artifact("x", &[4, 5], None);
    assert!(deep_creativity(
        &a,
        &dv,
        &dn_other,
        &gs,
        &CreativityWeights::default(),
        &SurpriseConfig::default()
    )
    .is_err());
}

#[test]
fn batch_report_groups_and_means() {
    let (dv, dn, gs) = scoring_models(10, 33);
    let weights = CreativityWeights::default();
    let cfg = SurpriseConfig::default();
    let artifacts = vec![
        artifact("a", &[4, 5, 6], Some("era-a")),
        artifact("b", &[5, 6, 7], Some("era-a")),
        artifact("c", &[6, 7, 8], Some("era-b")),
    ];
    let report = batch_report(&artifacts, &dv, &dn, &gs, &weights, &cfg, false).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.groups.len(), 2);
    let ga = report.groups.iter().find(|g| g.era_tag == "era-a").unwrap();
    assert_eq!(ga.count, 2);
    let mean_v = (report.rows[0].value + report.rows[1].value) / 2.0;
    assert!((ga.value - mean_v).abs() < 1e-15);
    // A single-artifact group's mean is the artifact's own scores.
    let gb = report.groups.iter().find(|g| g.era_tag == "era-b").unwrap();
    assert_eq!(gb.value, report.rows[2].value);
    assert_eq!(gb.dc, report.rows[2].dc);
}

#[test]
fn batch_report_duplicate_artifact_leaves_mean_unchanged() {
    let (dv, dn, gs) = scoring_models(10, 34);
    let weights = CreativityWeights::default();
    let cfg = SurpriseConfig::default();
    let one = vec![artifact("a", &[4, 5, 6], Some("g"))];
    let two = vec![
        artifact("a", &[4, 5, 6], Some("g")),
        artifact("a2", &[4, 5, 6], Some("g")),
    ];
    let r1 = batch_report(&one, &dv, &dn, &gs, &weights, &cfg, false).unwrap();
    let r2 = batch_report(&two, &dv, &dn, &gs, &weights, &cfg, false).unwrap();
    assert_eq!(r1.groups[0].dc, r2.groups[0].dc);
}

#[test]
fn surprise_normalization_is_flagged_and_rescales() {
    let (dv, dn, gs) = scoring_models(10, 35);
    let weights = CreativityWeights::default();
    let cfg = SurpriseConfig::default();
    let artifacts = vec![
        artifact("a", &[4, 5, 6], Some("g")),
        artifact("b", &[7, 8, 9, 4, 5], Some("g")),
        artifact("c", &[9, 9, 9], Some("g")),
    ];
    let raw = batch_report(&artifacts, &dv, &dn, &gs, &weights, &cfg, false).unwrap();
    assert!(!raw.surprise_normalized);
    let norm = batch_report(&artifacts, &dv, &dn, &gs, &weights, &cfg, true).unwrap();
    assert!(norm.surprise_normalized);
    let mut s: Vec<f64> = norm.rows.iter().map(|r| r.surprise).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(s.first().copied().unwrap(), 0.0);
    assert_eq!(s.last().copied().unwrap(), 1.0);
    for row in &norm.rows {
        let expected = combine(&weights, row.value, row.novelty, row.surprise);
        assert!((row.dc - expected).abs() < 1e-12);
    }
    // Value and novelty are untouched by the normalization.
    for (a, b) in raw.rows.iter().zip(&norm.rows) {
        assert_eq!(a.value, b.value);
        assert_eq!(a.novelty, b.novelty);
    }
}

#[test]
fn novelty_of_untrained_classifier_is_consistent_with_posterior() {
    let (_, dn, _) = scoring_models(10, 36);
    let (n, y, _) = novelty(&dn, &[4, 5, 6]).unwrap();
    assert_eq!(n, novelty_from_posterior(&y).unwrap());
}
