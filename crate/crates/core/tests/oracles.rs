//! Independent-arithmetic checks: every differentiable or closed-form
//! quantity the crate computes is recomputed here by a second route
//! (finite differences, hand-rolled loops, exact enumeration) and the two
//! answers are compared. None of these tests call the code path they
//! verify to produce the expected value.

use advrand::learner::{
    loss_value, per_cell_losses, softmax, Gradients, LearnerState, LossKind, SampleLabel,
};
use advrand::policy::PolicyState;
use advrand::render::RenderSpace;
use advrand::rng::rng_from;
use advrand::tensor::Tensor;
use advrand::theory::{multi_source_bound, BoundInputs};
use rand::Rng;

/// Central finite difference of the loss along one parameter.
fn fd_slope(
    net: &LearnerState<f64>,
    layer: usize,
    which: Which,
    idx: usize,
    x: &Tensor<f64>,
    label: &SampleLabel,
    kind: LossKind,
    eps: f64,
) -> f64 {
    let probe = |delta: f64| -> f64 {
        let mut n = net.clone();
        match which {
            Which::Weight => n.layers_mut()[layer].weights[idx] += delta,
            Which::Bias => n.layers_mut()[layer].bias[idx] += delta,
        }
        let (logits, _) = n.forward(x).unwrap();
        loss_value(kind, &logits, label).unwrap()
    };
    (probe(eps) - probe(-eps)) / (2.0 * eps)
}

#[derive(Clone, Copy)]
enum Which {
    Weight,
    Bias,
}

fn max_relative_fd_error(
    net: &LearnerState<f64>,
    x: &Tensor<f64>,
    label: &SampleLabel,
    kind: LossKind,
) -> f64 {
    let mut grads = Gradients::zeros_like(net);
    net.backward(x, label, kind, &mut grads).unwrap();
    let mut worst: f64 = 0.0;
    for (li, lg) in grads.layers.iter().enumerate() {
        let entries = lg
            .weights
            .iter()
            .enumerate()
            .map(|(i, &g)| (Which::Weight, i, g))
            .chain(lg.bias.iter().enumerate().map(|(i, &g)| (Which::Bias, i, g)));
        for (which, idx, analytic) in entries {
            let numeric = fd_slope(net, li, which, idx, x, label, kind, 1e-5);
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn backward_matches_finite_differences_for_class_loss() {
    let mut rng = rng_from(101);
    for trial in 0..3 {
        let net = LearnerState::<f64>::mlp(6, &[5, 4], 3, 7 + trial).unwrap();
        let x = Tensor::from_vec((0..6).map(|_| rng.gen::<f64>() - 0.5).collect());
        let label = SampleLabel::Class(rng.gen_range(0..3));
        let err = max_relative_fd_error(&net, &x, &label, LossKind::CrossEntropy);
        assert!(err < 1e-6, "trial {trial}: max relative error {err}");
    }
}

#[test]
fn backward_matches_finite_differences_for_grid_loss() {
    let mut rng = rng_from(202);
    let kind = LossKind::PerCellCrossEntropy {
        cells: 4,
        classes: 3,
    };
    let net = LearnerState::<f64>::mlp(8, &[6], 12, 3).unwrap();
    let x = Tensor::from_vec((0..8).map(|_| rng.gen::<f64>() - 0.5).collect());
    let label = SampleLabel::Cells(vec![0, 1, 2, 1]);
    let err = max_relative_fd_error(&net, &x, &label, kind);
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn forward_matches_handwritten_loops() {
    // A fixed two-layer net recomputed with nothing but nested loops.
    let net = LearnerState::<f64>::mlp(3, &[4], 2, 55).unwrap();
    let x = vec![0.3, -1.2, 0.8];
    let l0 = &net.layers()[0];
    let mut hidden = vec![0.0f64; 4];
    for o in 0..4 {
        let mut acc = l0.bias[o];
        for i in 0..3 {
            acc += l0.weights[o * 3 + i] * x[i];
        }
        hidden[o] = acc.max(0.0);
    }
    let l1 = &net.layers()[1];
    let mut logits = vec![0.0f64; 2];
    for o in 0..2 {
        let mut acc = l1.bias[o];
        for i in 0..4 {
            acc += l1.weights[o * 4 + i] * hidden[i];
        }
        logits[o] = acc;
    }
    let (got_logits, got_features) = net.forward(&Tensor::from_vec(x)).unwrap();
    for (a, b) in got_logits.iter().zip(logits.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in got_features.iter().zip(hidden.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn softmax_matches_naive_exponentials() {
    let logits: Vec<f64> = vec![0.3, -1.0, 2.5, 0.0];
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    let naive: Vec<f64> = logits.iter().map(|v| v.exp() / z).collect();
    let got = softmax(&logits);
    for (a, b) in got.iter().zip(naive.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn softmax_stays_finite_at_extreme_logits() {
    let got = softmax(&[1000.0f64, -1000.0, 0.0]);
    assert!(got.iter().all(|p| p.is_finite()));
    let total: f64 = got.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(got[0] > 0.999_999);
}

#[test]
fn per_cell_loss_averages_independent_cell_losses() {
    // Two cells, three classes each; the combined loss must equal the
    // mean of the two stand-alone cross-entropies.
    let logits: Vec<f64> = vec![0.2, -0.4, 1.1, -0.9, 0.6, 0.0];
    let truth = vec![2usize, 0];
    let kind = LossKind::PerCellCrossEntropy {
        cells: 2,
        classes: 3,
    };
    let all = loss_value(kind, &logits, &SampleLabel::Cells(truth.clone())).unwrap();
    let single = |cell: usize| -> f64 {
        let block = &logits[cell * 3..(cell + 1) * 3];
        let z: f64 = block.iter().map(|v| v.exp()).sum();
        -(block[truth[cell]].exp() / z).ln()
    };
    assert!((all - (single(0) + single(1)) / 2.0).abs() < 1e-12);
    let per = per_cell_losses(&logits, &truth, 3).unwrap();
    assert!((per[0] - single(0)).abs() < 1e-12);
    assert!((per[1] - single(1)).abs() < 1e-12);
}

/// Exact expected REINFORCE gradient on a bandit: enumerate single-draw
/// batches weighted by their probabilities.
fn enumerated_expectation(pi: &PolicyState<f64>, rewards: &[f64]) -> Vec<f64> {
    let probs = pi.probs();
    let mut expect = vec![0.0f64; probs.len()];
    for (arm, &p_arm) in probs.iter().enumerate() {
        let draw = advrand::policy::ThetaDraw {
            cells: vec![arm],
            log_prob: probs[arm].ln(),
        };
        let g = pi.reinforce_grad(&[draw], &[rewards[arm]]).unwrap();
        for (e, gi) in expect.iter_mut().zip(g.iter()) {
            *e += p_arm * gi;
        }
    }
    expect
}

/// The same expectation from the closed form: Σ_a p_a (r_a − b)(e_a − p).
fn analytic_expectation(probs: &[f64], rewards: &[f64], baseline: f64) -> Vec<f64> {
    let mut expect = vec![0.0f64; probs.len()];
    for (arm, &p_arm) in probs.iter().enumerate() {
        let adv = rewards[arm] - baseline;
        for (j, e) in expect.iter_mut().enumerate() {
            let indicator = if j == arm { 1.0 } else { 0.0 };
            *e += p_arm * adv * (indicator - probs[j]);
        }
    }
    expect
}

#[test]
fn enumerated_reinforce_matches_analytic_expectation() {
    let mut pi = PolicyState::<f64>::uniform(3, 0.0).unwrap();
    pi.step(&[0.4, -0.2, 0.1], 1.0).unwrap();
    let rewards = [1.0, 0.0, 0.5];
    let enumerated = enumerated_expectation(&pi, &rewards);
    let analytic = analytic_expectation(&pi.probs(), &rewards, 0.0);
    for (a, b) in enumerated.iter().zip(analytic.iter()) {
        assert!((a - b).abs() < 1e-12, "enumerated {a} vs analytic {b}");
    }
}

#[test]
fn enumerated_expectation_is_invariant_to_constant_baseline() {
    // A constant baseline shifts every sample's advantage but not the
    // expectation, because E[∇ log π] = 0.
    let mut pi = PolicyState::<f64>::uniform(3, 0.0).unwrap();
    pi.step(&[0.8, 0.1, -0.3], 1.0).unwrap();
    let rewards = [1.0, 0.0, 0.5];
    let without = enumerated_expectation(&pi, &rewards);
    // Install a nonzero baseline (decay 0 makes it exactly the mean fed in).
    pi.update_baseline(&[0.4]).unwrap();
    assert!((pi.baseline() - 0.4).abs() < 1e-15);
    let with = enumerated_expectation(&pi, &rewards);
    for (a, b) in without.iter().zip(with.iter()) {
        assert!((a - b).abs() < 1e-12, "b=0 gives {a}, b=0.4 gives {b}");
    }
    let analytic = analytic_expectation(&pi.probs(), &rewards, 0.4);
    for (a, b) in with.iter().zip(analytic.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn bound_matches_independently_grouped_arithmetic() {
    let mut rng = rng_from(77);
    for _ in 0..200 {
        let n = rng.gen_range(1..5usize);
        let mut alpha: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let asum: f64 = alpha.iter().sum();
        for a in alpha.iter_mut() {
            *a /= asum;
        }
        let mut beta: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let bsum: f64 = beta.iter().sum();
        for b in beta.iter_mut() {
            *b /= bsum;
        }
        let inputs = BoundInputs::<f64> {
            d_vc: rng.gen_range(1..50),
            m: rng.gen_range(2..100_000),
            delta: 0.5 * rng.gen::<f64>() + 0.25,
            alpha: alpha.clone(),
            beta: beta.clone(),
            lambda: (0..n).map(|_| rng.gen::<f64>()).collect(),
            div: (0..n).map(|_| 2.0 * rng.gen::<f64>()).collect(),
            eps_star: rng.gen::<f64>() * 0.2,
        };
        let report = multi_source_bound(&inputs).unwrap();
        // Second route: accumulate in reverse order with explicit scalars.
        let m = inputs.m as f64;
        let d = inputs.d_vc as f64;
        let mut shift = 0.0f64;
        for i in (0..n).rev() {
            shift += inputs.alpha[i] * (2.0 * inputs.lambda[i] + inputs.div[i]);
        }
        let mut ratio = 0.0f64;
        for i in (0..n).rev() {
            ratio += inputs.alpha[i] * inputs.alpha[i] / inputs.beta[i];
        }
        let complexity =
            2.0 * (ratio * (d * (2.0 * m).ln() - inputs.delta.ln()) / (2.0 * m)).sqrt();
        let expected = inputs.eps_star + shift + complexity;
        assert!(
            (report.total - expected).abs() < 1e-10,
            "reported {} vs regrouped {expected}",
            report.total
        );
    }
}

#[test]
fn renderer_brightness_jitter_amplitude_scales_with_size_index() {
    // With all other noise off, the dominant channel of the rendered
    // shape must stay within kappa * size_idx of the palette value; an
    // exceedance would mean the jitter amplitude is mis-derived.
    let mut space = RenderSpace::<f64>::shape_color();
    space.position_jitter = 0.0;
    space.pixel_noise = 0.0;
    space.kappa = 0.05;
    for size_idx in [0usize, 3, 6] {
        let cell = space.cell_from_shape_params(&advrand::render::ShapeParams {
            shape: advrand::render::Shape::Square,
            material: advrand::render::Material::Flat,
            color_idx: 2,
            size_idx,
            noise_seed: 0,
        });
        let bound = space.kappa * size_idx as f64 + 1e-12;
        for seed in 0..20u64 {
            let params = space.shape_params_from_cell(cell, seed).unwrap();
            let sample = advrand::render::render_shape(&params, &space).unwrap();
            // Center pixel of a flat square sits inside the shape.
            let (h, w) = (space.height, space.width);
            let data = sample.image.data();
            let center = ((h / 2) * w + w / 2) * 3;
            let g = data[center + 1];
            let clean = space.palette[2][1];
            assert!(
                (g - clean).abs() <= bound,
                "size {size_idx} seed {seed}: channel {g} vs clean {clean}, bound {bound}"
            );
        }
    }
}
