//! End-to-end behavior of the training loops on small rendering spaces:
//! learnability, seeding discipline, budget parity, and the reduction
//! identities between the three methods.

use advrand::adversary::{
    domain_classifier, input_dim_for, run_dr, run_vadra, run_vadra_da, sample_uniform_cell,
    DaConfig, Dataset, DrConfig, VadraConfig,
};
use advrand::learner::{LearnerState, SampleLabel};
use advrand::policy::PolicyState;
use advrand::render::{render_shape, RenderSpace, Shape};
use advrand::rng::{derive_seed, rng_from, stream_seed, Stream};
use advrand::tensor::Tensor;

/// Render a labeled target set of `count` samples from the given space,
/// optionally restricted to one shape.
fn render_target(
    space: &RenderSpace<f64>,
    count: usize,
    only_shape: Option<Shape>,
    seed: u64,
) -> Dataset<f64> {
    let stream = stream_seed(seed, Stream::Target);
    let mut rng = rng_from(stream);
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    while out.len() < count {
        let cell = sample_uniform_cell(space, &mut rng);
        let params = space
            .shape_params_from_cell(cell, derive_seed(stream, i))
            .unwrap();
        i += 1;
        if let Some(shape) = only_shape {
            if params.shape != shape {
                continue;
            }
        }
        let s = render_shape(&params, space).unwrap();
        out.push((s.image, SampleLabel::from_render(&s.label)));
    }
    out
}

fn small_space() -> RenderSpace<f64> {
    let mut s = RenderSpace::<f64>::shape_color();
    s.height = 16;
    s.width = 16;
    s
}

#[test]
fn uniform_draws_cover_every_cell() {
    // 10^4 uniform draws over 252 cells: the expected number of missed
    // cells is 252 * (1 - 1/252)^10000 ~ 1e-15, so full coverage is the
    // only plausible outcome.
    let space = RenderSpace::<f64>::shape_color();
    let mut rng = rng_from(stream_seed(3, Stream::UniformSample));
    let mut seen = vec![false; space.cardinality()];
    for _ in 0..10_000 {
        seen[sample_uniform_cell(&space, &mut rng)] = true;
    }
    assert!(seen.iter().all(|&s| s), "some cells never drawn");
}

#[test]
fn noise_free_task_is_learnable_to_high_accuracy() {
    // With kappa = 0 the color label is a deterministic function of a few
    // pixels; uniform training must reach near-perfect target accuracy.
    let mut space = small_space();
    space.kappa = 0.0;
    let target = render_target(&space, 120, None, 99);
    let cfg = DrConfig::<f64> {
        m: 48,
        iterations: 30,
        learner_lr: 0.05,
        lr_decay: 0.0,
        epochs: 1,
        batch_size: 16,
        seed: 5,
    };
    let mut h = LearnerState::mlp(input_dim_for(&space), &[32], 6, 5).unwrap();
    let metrics = run_dr(&cfg, &space, &mut h, &target).unwrap();
    let last = metrics.records.last().unwrap();
    assert!(
        last.target_acc >= 0.99,
        "final accuracy {} below 0.99",
        last.target_acc
    );
}

#[test]
fn same_seed_reproduces_the_run_byte_for_byte() {
    let space = small_space();
    let target = render_target(&space, 30, None, 7);
    let cfg = VadraConfig::<f64> {
        m1: 8,
        m2: 6,
        iterations: 4,
        batch_size: 4,
        seed: 21,
        ..VadraConfig::default()
    };
    let run = || {
        let mut h = LearnerState::mlp(input_dim_for(&space), &[16], 6, 1).unwrap();
        let mut pi = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
        run_vadra(&cfg, &space, &mut h, &mut pi, &target)
            .unwrap()
            .to_csv()
    };
    assert_eq!(run(), run());
    let mut other = cfg.clone();
    other.seed = 22;
    let mut h = LearnerState::mlp(input_dim_for(&space), &[16], 6, 1).unwrap();
    let mut pi = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
    let different = run_vadra(&other, &space, &mut h, &mut pi, &target)
        .unwrap()
        .to_csv();
    assert_ne!(run(), different, "changing the seed changed nothing");
}

#[test]
fn dr_and_vadra_consume_equal_render_budgets() {
    let space = small_space();
    let target = render_target(&space, 20, None, 13);
    let dr_cfg = DrConfig::<f64> {
        m: 12,
        iterations: 3,
        batch_size: 6,
        seed: 2,
        ..DrConfig::default()
    };
    let va_cfg = VadraConfig::<f64> {
        m1: 8,
        m2: 4,
        iterations: 3,
        batch_size: 6,
        seed: 2,
        ..VadraConfig::default()
    };
    assert_eq!(dr_cfg.m, va_cfg.budget());
    let mut h = LearnerState::mlp(input_dim_for(&space), &[16], 6, 1).unwrap();
    let dr = run_dr(&dr_cfg, &space, &mut h, &target).unwrap();
    let mut h = LearnerState::mlp(input_dim_for(&space), &[16], 6, 1).unwrap();
    let mut pi = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
    let va = run_vadra(&va_cfg, &space, &mut h, &mut pi, &target).unwrap();
    assert_eq!(dr.total_renders, va.total_renders);
    assert_eq!(dr.total_renders, (3 * 12) as u64);
}

#[test]
fn zero_domain_weights_reduce_to_the_plain_policy_loop() {
    // w2 = w4 = 0 must reproduce run_vadra exactly, down to the last bit,
    // even though the domain classifier still trains on the side.
    let space = small_space();
    let target = render_target(&space, 24, None, 31);
    let base = VadraConfig::<f64> {
        m1: 8,
        m2: 6,
        iterations: 5,
        batch_size: 4,
        seed: 17,
        ..VadraConfig::default()
    };
    let mut h1 = LearnerState::mlp(input_dim_for(&space), &[16], 6, 4).unwrap();
    let mut pi1 = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
    let plain = run_vadra(&base, &space, &mut h1, &mut pi1, &target).unwrap();

    let da_cfg = DaConfig::<f64> {
        base: base.clone(),
        w1: 1.0,
        w2: 0.0,
        w3: 1.0,
        w4: 0.0,
        ..DaConfig::default()
    };
    let mut h2 = LearnerState::mlp(input_dim_for(&space), &[16], 6, 4).unwrap();
    let mut pi2 = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
    let mut probe = domain_classifier(h2.feature_dim(), 16, 77).unwrap();
    let pool: Vec<Tensor<f64>> = render_target(&space, 10, Some(Shape::Circle), 55)
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    let adapted = run_vadra_da(&da_cfg, &space, &mut h2, &mut pi2, &mut probe, &pool, &target)
        .unwrap();

    assert_eq!(plain.to_csv(), adapted.to_csv());
    assert_eq!(h1, h2);
    assert_eq!(pi1, pi2);
}

#[test]
fn frozen_uniform_policy_tracks_the_uniform_baseline_statistically() {
    // With policy_lr = 0 and a uniform initialization the policy loop
    // feeds the learner the same training distribution as the uniform
    // baseline: m1 uniform draws per iteration (the m2 scoring draws
    // never reach the learner). Over paired seeds the mean final target
    // accuracy must agree within a small margin.
    let space = small_space();
    let target = render_target(&space, 60, None, 404);
    let seeds = [11u64, 12, 13, 14, 15];
    let mut dr_mean = 0.0f64;
    let mut va_mean = 0.0f64;
    for &seed in &seeds {
        let dr_cfg = DrConfig::<f64> {
            m: 16,
            iterations: 8,
            batch_size: 8,
            seed,
            ..DrConfig::default()
        };
        let mut h = LearnerState::mlp(input_dim_for(&space), &[24], 6, seed).unwrap();
        let dr = run_dr(&dr_cfg, &space, &mut h, &target).unwrap();
        dr_mean += dr.records.last().unwrap().target_acc / seeds.len() as f64;

        let va_cfg = VadraConfig::<f64> {
            m1: 16,
            m2: 8,
            iterations: 8,
            batch_size: 8,
            policy_lr: 0.0,
            seed,
            ..VadraConfig::default()
        };
        let mut h = LearnerState::mlp(input_dim_for(&space), &[24], 6, seed).unwrap();
        let mut pi = PolicyState::uniform(space.cardinality(), 0.9).unwrap();
        let va = run_vadra(&va_cfg, &space, &mut h, &mut pi, &target).unwrap();
        assert_eq!(pi.logits(), vec![0.0; space.cardinality()].as_slice());
        va_mean += va.records.last().unwrap().target_acc / seeds.len() as f64;
    }
    assert!(
        (dr_mean - va_mean).abs() <= 0.10,
        "uniform-policy mean {va_mean} vs baseline mean {dr_mean}"
    );
}

#[test]
fn two_arm_rewards_drive_the_policy_to_the_paying_arm() {
    // 500 REINFORCE updates on a 2-cell problem with rewards (1, 0).
    let mut pi = PolicyState::<f64>::uniform(2, 0.0).unwrap();
    let mut rng = rng_from(8);
    for _ in 0..500 {
        let draws = pi.sample(&mut rng, 8);
        let rewards: Vec<f64> = draws
            .iter()
            .map(|d| if d.cells[0] == 0 { 1.0 } else { 0.0 })
            .collect();
        let grad = pi.reinforce_grad(&draws, &rewards).unwrap();
        pi.step(&grad, 0.5).unwrap();
        pi.update_baseline(&rewards).unwrap();
    }
    let p = pi.probs();
    assert!(p[0] > 0.99, "p(paying arm) = {} after 500 steps", p[0]);
}

#[test]
fn near_delta_logits_dominate_sampling() {
    // One logit at +20: that cell should win essentially every draw.
    let mut pi = PolicyState::<f64>::uniform(5, 0.0).unwrap();
    pi.step(&[20.0, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
    let mut rng = rng_from(99);
    let draws = pi.sample(&mut rng, 10_000);
    let hits = draws.iter().filter(|d| d.cells[0] == 0).count();
    assert!(hits as f64 / 10_000.0 > 0.999, "hit rate {}", hits);
}

#[test]
fn uniform_sampling_frequencies_concentrate_at_one_quarter() {
    // 10^5 draws from a uniform 4-cell policy: each frequency lands in
    // 0.25 +/- 0.01 (about 7 binomial standard deviations).
    let pi = PolicyState::<f64>::uniform(4, 0.0).unwrap();
    let mut rng = rng_from(123);
    let draws = pi.sample(&mut rng, 100_000);
    let mut counts = [0usize; 4];
    for d in &draws {
        counts[d.cells[0]] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let f = c as f64 / 100_000.0;
        assert!((f - 0.25).abs() <= 0.01, "cell {i} frequency {f}");
    }
}
