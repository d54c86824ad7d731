use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskgrow::autodiff::Graph;
use taskgrow::inference::*;
use taskgrow::network::{ExpandableNetwork, Mode, Template, Tracking};
use taskgrow::trainer::{argmax_rows, AugmentRecipe};
use taskgrow::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(template: &Template, seed: u64) -> Tensor<f64> {
    let [c, h, w] = template.input;
    let mut r = rng(seed);
    Tensor::from_fn(&[c, h, w], |_| r.gen_range(-1.0..1.0))
}

fn ready(net: &mut ExpandableNetwork<f64>) {
    for t in 1..=net.num_tasks() {
        net.mark_stats_initialised(t).unwrap();
    }
}

/// Desk CNN with `tasks` views; every view has usable statistics.
fn desk_net(tasks: usize, seed: u64) -> ExpandableNetwork<f64> {
    let mut net =
        ExpandableNetwork::build_initial(Template::desk_cnn(), 3, &mut rng(seed)).unwrap();
    for t in 2..=tasks {
        net.freeze(t - 1).unwrap();
        net.expand_for_task(t, &[2, 3], 3, &mut rng(seed + t as u64))
            .unwrap();
    }
    ready(&mut net);
    net
}

/// Two views, the second a copy of the first with its head rows permuted.
fn permuted_twin(seed: u64) -> ExpandableNetwork<f64> {
    let mut net =
        ExpandableNetwork::build_initial(Template::desk_cnn(), 3, &mut rng(seed)).unwrap();
    net.freeze(1).unwrap();
    net.expand_for_task(2, &[0, 0], 3, &mut rng(seed + 1))
        .unwrap();
    ready(&mut net);
    let mut copies: Vec<(String, Tensor<f64>)> = net
        .named_tensors()
        .into_iter()
        .filter(|(p, _)| p.contains("bn1/"))
        .map(|(p, t)| (p.replace("bn1/", "bn2/"), t.clone()))
        .collect();
    let perm = [2, 0, 1];
    let w = net.head(1).unwrap().weight.tensor.clone();
    let b = net.head(1).unwrap().bias.tensor.clone();
    let f = w.shape()[1];
    copies.push((
        "head2/weight".into(),
        Tensor::from_fn(&[3, f], |i| w.data()[perm[i / f] * f + i % f]),
    ));
    copies.push((
        "head2/bias".into(),
        Tensor::from_fn(&[3], |i| b.data()[perm[i]] + 0.1),
    ));
    for (p, t) in copies {
        net.load_tensor(&p, t).unwrap();
    }
    net
}

fn loss_of(logits: Tensor<f64>, label: usize, weighting: Weighting) -> f64 {
    let mut g = Graph::new();
    let z = g.variable(logits);
    let l = weighted_loss(&mut g, z, label, weighting).unwrap();
    g.value(l).item()
}

#[test]
fn weighted_loss_of_uniform_slots_is_log_k_squared() {
    let k = 4;
    let l = loss_of(Tensor::zeros(&[3, k]), 1, Weighting::Entropy);
    assert!((l - (k as f64).ln().powi(2)).abs() < 1e-12);
}

#[test]
fn weighted_loss_of_one_hot_slots_is_zero() {
    let logits = Tensor::from_fn(&[2, 3], |i| if i % 3 == 2 { 40.0 } else { 0.0 });
    assert!(loss_of(logits, 2, Weighting::Entropy).abs() < 1e-12);
}

#[test]
fn weighted_loss_two_slot_oracle() {
    let logits = Tensor::new(
        vec![2, 2],
        vec![0.7f64.ln(), 0.3f64.ln(), 0.6f64.ln(), 0.4f64.ln()],
    )
    .unwrap();
    let l = loss_of(logits, 0, Weighting::Entropy);
    assert!((l - 0.2808357976456974).abs() < 1e-12, "{l}");
}

#[test]
fn slot_gradient_obeys_product_rule() {
    let mut r = rng(7);
    for _ in 0..50 {
        let k = r.gen_range(2..7);
        let z = Tensor::from_fn(&[1, k], |_| r.gen_range(-3.0..3.0));
        let y = r.gen_range(0..k);
        let grad = |build: &dyn Fn(
            &mut Graph<f64>,
            taskgrow::autodiff::NodeId,
        ) -> taskgrow::autodiff::NodeId| {
            let mut g = Graph::new();
            let zi = g.variable(z.clone());
            let l = build(&mut g, zi);
            let gr = g.backward(l).unwrap();
            (g.value(l).item(), gr.wrt(zi, &g))
        };
        let (_, whole) = grad(&|g, zi| weighted_loss(g, zi, y, Weighting::Entropy).unwrap());
        let (ce, d_ce) = grad(&|g, zi| {
            let c = g.softmax_cross_entropy(zi, &[y]).unwrap();
            g.sum(c)
        });
        let (ent, d_ent) = grad(&|g, zi| {
            let p = g.softmax(zi).unwrap();
            let e = g.entropy(p).unwrap();
            g.sum(e)
        });
        for i in 0..k {
            let expect = ent * d_ce.data()[i] + ce * d_ent.data()[i];
            assert!((whole.data()[i] - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn aug_batch_slots() {
    let t = Template::desk_cnn();
    let x = image(&t, 1);
    let one = make_aug_batch(&x, 1, &AugmentRecipe::by_id("desk").unwrap(), &mut rng(0)).unwrap();
    assert_eq!(one.shape(), &[1, 1, 16, 16]);
    assert_eq!(one.index0(0), x);
    let same = make_aug_batch(&x, 11, &AugmentRecipe::by_id("none").unwrap(), &mut rng(0)).unwrap();
    for a in 0..11 {
        assert_eq!(same.index0(a), x);
    }
    let rgb = Tensor::from_fn(&[3, 32, 32], |i| (i % 97) as f64 / 97.0);
    let cifar = make_aug_batch(
        &rgb,
        11,
        &AugmentRecipe::by_id("cifar").unwrap(),
        &mut rng(3),
    )
    .unwrap();
    assert_eq!(cifar.shape(), &[11, 3, 32, 32]);
    assert_eq!(cifar.index0(0), rgb);
    assert!((1..11).any(|a| cifar.index0(a) != rgb));
    assert!(make_aug_batch(&x, 0, &AugmentRecipe::by_id("desk").unwrap(), &mut rng(0)).is_err());
}

#[test]
fn pseudo_label_examples() {
    assert_eq!(mode_of(&[2, 2, 3], 4), 2);
    assert_eq!(mode_of(&[1, 2], 3), 1);
    let probs = Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap();
    assert_eq!(pseudo_label(&probs), 1);
}

#[test]
fn mean_filters_are_block_means_of_the_full_gradient() {
    let t = Template::vgg_style("toy", [1, 6, 6], &[2]);
    let mut net = ExpandableNetwork::<f64>::build_initial(t.clone(), 3, &mut rng(4)).unwrap();
    ready(&mut net);
    let x = Tensor::stack(&[image(&t, 5), image(&t, 6)]).unwrap();
    let layers = vec!["conv1".to_string(), HEAD.to_string()];
    let full =
        gradient_embedding(&net, 1, &x, &layers, Weighting::Entropy, Reduction::Full).unwrap();
    let reduced = gradient_embedding(
        &net,
        1,
        &x,
        &layers,
        Weighting::Entropy,
        Reduction::MeanFilters,
    )
    .unwrap();
    let conv_full = &full.segments[0].values;
    assert_eq!(conv_full.len(), 2 * 9);
    assert_eq!(reduced.segments[0].values.len(), 2);
    for f in 0..2 {
        let mean = conv_full[f * 9..(f + 1) * 9].iter().sum::<f64>() / 9.0;
        assert!((reduced.segments[0].values[f] - mean).abs() < 1e-15);
    }
    let head_full = &full.segments[1].values;
    let row = head_full.len() / 3;
    for j in 0..3 {
        let mean = head_full[j * row..(j + 1) * row].iter().sum::<f64>() / row as f64;
        assert!((reduced.segments[1].values[j] - mean).abs() < 1e-15);
    }
    let (lf, lr) = embedding_lengths(net.spec(), 1, &layers).unwrap();
    assert_eq!((lf as usize, lr as usize), (full.len(), reduced.len()));
}

#[test]
fn embedding_covers_frozen_groups_and_rejects_unknown_layers() {
    let net = desk_net(3, 2);
    let x = Tensor::stack(&[image(&Template::desk_cnn(), 9)]).unwrap();
    let layers = default_layers(net.spec());
    assert_eq!(layers, vec!["conv1", "conv2", "head"]);
    let e = gradient_embedding(
        &net,
        3,
        &x,
        &layers,
        Weighting::Entropy,
        Reduction::MeanFilters,
    )
    .unwrap();
    // conv1 8+2+2, conv2 16+3+3, head 3
    assert_eq!(
        e.segments
            .iter()
            .map(|s| s.values.len())
            .collect::<Vec<_>>(),
        vec![12, 22, 3]
    );
    for task in 1..=3 {
        let (full, reduced) = embedding_lengths(net.spec(), task, &layers).unwrap();
        let full_e =
            gradient_embedding(&net, task, &x, &layers, Weighting::Entropy, Reduction::Full)
                .unwrap();
        assert_eq!(full as usize, full_e.len());
        assert!(reduced < full);
    }
    assert!(gradient_embedding(
        &net,
        1,
        &x,
        &["conv9".to_string()],
        Weighting::Unit,
        Reduction::Full
    )
    .is_err());
}

#[test]
fn argmin_examples() {
    let s1 = normalized_norm(&[1.0, -1.0], Norm::L1);
    let s2 = normalized_norm(&[3.0, 3.0, 3.0, 3.0], Norm::L1);
    assert_eq!((s1, s2), (1.0, 3.0));
    assert_eq!(argmin_task(&[s1, s2]), 1);
    assert_eq!(argmin_task(&[0.4]), 1);
    assert_eq!(argmin_task(&[0.5, 0.2, 0.2]), 2);
    let net = desk_net(1, 3);
    let p = predict_task(
        &net,
        &image(&Template::desk_cnn(), 1),
        0,
        &PredictorConfig::default(),
    )
    .unwrap();
    assert_eq!(p.predicted_task, 1);
}

#[test]
fn single_slot_full_l1_is_the_raw_cross_entropy_gradient_norm() {
    let net = desk_net(3, 11);
    let x = image(&Template::desk_cnn(), 12);
    let layers = default_layers(net.spec());
    let cfg = PredictorConfig {
        mode: PredictorMode::GradNoAug,
        reduction: Reduction::Full,
        norm: Norm::L1,
        ..PredictorConfig::default()
    };
    let p = predict_task(&net, &x, 5, &cfg).unwrap();
    for task in 1..=3 {
        let mut g = Graph::new();
        let xi = g.constant(Tensor::stack(std::slice::from_ref(&x)).unwrap());
        let pass = net
            .record(&mut g, task, xi, Mode::Eval, Tracking::All)
            .unwrap();
        let label = argmax_rows(g.value(pass.logits))[0];
        let ce = g.softmax_cross_entropy(pass.logits, &[label]).unwrap();
        let loss = g.sum(ce);
        let grads = g.backward(loss).unwrap();
        let (mut l1, mut n) = (0.0, 0usize);
        for (path, id) in &pass.params {
            let selected = path.starts_with("conv1/group")
                || path.starts_with("conv2/group")
                || path.starts_with(&format!("head{task}/"));
            if selected {
                let gt = grads.wrt(*id, &g);
                l1 += gt.data().iter().map(|v| v.abs()).sum::<f64>();
                n += gt.numel();
            }
        }
        let expect = l1 / n as f64;
        let got = p.per_task_scores[task - 1];
        assert!(
            (got - expect).abs() <= 1e-12 * expect.max(1.0),
            "task {task}: {got} vs {expect}"
        );
    }
    assert_eq!(layers.len(), 3);
}

#[test]
fn view_scores_do_not_depend_on_other_views() {
    let net = desk_net(4, 21);
    let x = image(&Template::desk_cnn(), 22);
    let cfg = PredictorConfig::default();
    let all = predict_task(&net, &x, 17, &cfg).unwrap();
    for upto in 1..=4 {
        let part = predict_task_upto(&net, upto, &x, 17, &cfg).unwrap();
        assert_eq!(part.per_task_scores[..], all.per_task_scores[..upto]);
    }
    let again = predict_task(&net, &x, 17, &cfg).unwrap();
    assert_eq!(again, all);
    // evaluating the views in reverse order picks the same task
    let rev: Vec<f64> = all.per_task_scores.iter().rev().copied().collect();
    assert_eq!(4 + 1 - argmin_task(&rev), all.predicted_task);
}

#[test]
fn symmetric_views_tie_in_both_gradient_modes() {
    let net = permuted_twin(31);
    let x = image(&Template::desk_cnn(), 32);
    for mode in [
        PredictorMode::GradientAggregation,
        PredictorMode::GradUnweightedAug,
    ] {
        let cfg = PredictorConfig {
            mode,
            shared_augmentations: true,
            ..PredictorConfig::default()
        };
        let p = predict_task(&net, &x, 3, &cfg).unwrap();
        let [a, b] = [p.per_task_scores[0], p.per_task_scores[1]];
        assert!((a - b).abs() <= 1e-12 * a, "{mode:?}: {a} vs {b}");
        assert_eq!(p.predicted_task, if a <= b { 1 } else { 2 });
    }
}

#[test]
fn entropy_baseline_prefers_the_confident_view() {
    let mut net = desk_net(2, 41);
    let f = net.head(1).unwrap().weight.tensor.shape()[1];
    net.load_tensor("head1/weight", Tensor::zeros(&[3, f]))
        .unwrap();
    net.load_tensor("head1/bias", Tensor::zeros(&[3])).unwrap();
    let f2 = net.head(2).unwrap().weight.tensor.shape()[1];
    net.load_tensor("head2/weight", Tensor::zeros(&[3, f2]))
        .unwrap();
    net.load_tensor(
        "head2/bias",
        Tensor::new(vec![3], vec![0.0, 60.0, 0.0]).unwrap(),
    )
    .unwrap();
    let x = image(&Template::desk_cnn(), 42);
    for mode in [PredictorMode::Entropy, PredictorMode::CrossEntropy] {
        let cfg = PredictorConfig {
            mode,
            ..PredictorConfig::default()
        };
        let p = predict_task(&net, &x, 0, &cfg).unwrap();
        assert_eq!(p.predicted_task, 2, "{mode:?}");
        assert_eq!(p.predicted_class_local, 1);
    }
}

#[test]
fn identical_views_pick_the_first_task() {
    let mut net = permuted_twin(51);
    let w = net.head(1).unwrap().weight.tensor.clone();
    let b = net.head(1).unwrap().bias.tensor.clone();
    net.load_tensor("head2/weight", w).unwrap();
    net.load_tensor("head2/bias", b).unwrap();
    let x = image(&Template::desk_cnn(), 52);
    for &mode in PredictorMode::ALL.iter() {
        let cfg = PredictorConfig {
            mode,
            shared_augmentations: true,
            ..PredictorConfig::default()
        };
        let p = predict_task(&net, &x, 9, &cfg).unwrap();
        assert_eq!(p.per_task_scores[0], p.per_task_scores[1], "{mode:?}");
        assert_eq!(p.predicted_task, 1, "{mode:?}");
    }
}

#[test]
fn unknown_mode_and_bad_config_are_rejected() {
    assert!(PredictorMode::parse("max-logit").is_err());
    for &m in PredictorMode::ALL.iter() {
        assert_eq!(PredictorMode::parse(m.name()).unwrap(), m);
    }
    let bad = PredictorConfig {
        augmentations: 0,
        ..PredictorConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = PredictorConfig {
        recipe: "nope".into(),
        ..PredictorConfig::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn duplicating_segments_keeps_the_normalized_norm(
        v in prop::collection::vec(-5.0f64..5.0, 1..40),
        copies in 2usize..4,
    ) {
        let dup: Vec<f64> = (0..copies).flat_map(|_| v.iter().copied()).collect();
        let a = normalized_norm(&v, Norm::L1);
        let b = normalized_norm(&dup, Norm::L1);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn global_loss_scale_keeps_the_argmin(
        scores in prop::collection::vec(1e-6f64..10.0, 1..8),
        c in 1e-3f64..1e3,
    ) {
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        prop_assert_eq!(argmin_task(&scores), argmin_task(&scaled));
        let v: Vec<f64> = scores.iter().map(|s| s - 1.0).collect();
        let sv: Vec<f64> = v.iter().map(|x| x * c).collect();
        let (a, b) = (normalized_norm(&v, Norm::L1) * c, normalized_norm(&sv, Norm::L1));
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }
}
