//! The closed-form conditional-weight meta-gradient against its
//! finite-difference oracle: random small MLPs, every loss kind, random
//! batches and rates. This is the load-bearing numerical property of the
//! whole method.

use longtail_core::data::Batch;
use longtail_core::fdcheck::{max_relative_error, meta_epsilon_fd};
use longtail_core::loss::LossKind;
use longtail_core::model::{standard_normal, Model, ModelSpec};
use longtail_core::seeding::substream;
use longtail_core::tensor::Tensor;
use longtail_core::weighting::{
    effective_number_weights, meta_epsilon_gradient, meta_epsilon_gradient_with_weights,
    ClassifierObjective, EpsilonBatch,
};
use rand::RngCore;

const H: f64 = 1e-3;
const TOL: f64 = 1e-5;

fn random_batch(rows: usize, dims: usize, classes: usize, seed: u64, label: &str) -> Batch {
    let mut rng = substream(seed, label);
    let data: Vec<f64> = (0..rows * dims)
        .map(|_| standard_normal(&mut rng))
        .collect();
    let labels: Vec<usize> = (0..rows)
        .map(|_| (rng.next_u64() % classes as u64) as usize)
        .collect();
    Batch {
        features: Tensor::from_vec(vec![rows, dims], data).unwrap(),
        labels,
    }
}

struct Case {
    dims: usize,
    hidden: Vec<usize>,
    classes: usize,
    batch: usize,
    dev_batch: usize,
    eta: f64,
    loss_index: usize,
}

fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = substream(999, "meta-cases");
    let mut pick = |lo: usize, hi: usize| lo + (rng.next_u64() as usize) % (hi - lo + 1);
    for i in 0..24 {
        let dims = pick(2, 6);
        let classes = pick(2, 5);
        let hidden = match pick(0, 2) {
            0 => vec![],
            1 => vec![pick(3, 8)],
            _ => vec![pick(3, 6), pick(3, 6)],
        };
        let batch = pick(1, 8);
        let dev_batch = pick(1, 8);
        // Rates in the regime training actually uses; large η inflates the
        // oracle's O(h²) truncation term without touching the closed form.
        let eta = 0.01 * pick(1, 10) as f64;
        out.push(Case {
            dims,
            hidden,
            classes,
            batch,
            dev_batch,
            eta,
            loss_index: i % 3,
        });
    }
    out
}

#[test]
fn closed_form_matches_fd_across_random_configs() {
    let mut checked = 0;
    for (i, case) in cases().into_iter().enumerate() {
        let seed = 1000 + i as u64;
        let spec = ModelSpec::mlp(case.dims, case.hidden.clone(), case.classes, seed);
        let model = Model::new(spec).unwrap();
        assert!(
            model.param_count() <= 500,
            "case {i}: {} params exceeds the desk-scale bound",
            model.param_count()
        );
        let counts: Vec<usize> = (0..case.classes).map(|c| 20 * (c + 1)).collect();
        // LDAM's logit scale (s = 30) steepens the dev-loss curvature, so the
        // oracle's O(h²·f''') truncation needs a smaller step there; the
        // smooth losses use the standard step h = 1e-3.
        let (loss, h) = match case.loss_index {
            0 => (LossKind::CrossEntropy, H),
            1 => (LossKind::Focal { gamma: 1.5 }, H),
            _ => (LossKind::ldam_default(&counts).unwrap(), 1e-4),
        };
        let objective = ClassifierObjective::new(&model, loss);
        let theta = model.get_params();
        let train = random_batch(case.batch, case.dims, case.classes, seed, "train");
        let dev = random_batch(case.dev_batch, case.dims, case.classes, seed, "dev");

        // Lookahead weights from effective numbers plus a nonzero ε, so the
        // exactness claim is exercised away from the ε = 0 initialization too.
        let w = effective_number_weights(&counts, 0.99, true).unwrap();
        let mut eps = EpsilonBatch::zeros((0..case.batch).collect(), case.eta);
        let fake_grad: Vec<f64> = (0..case.batch).map(|j| 0.05 * (j as f64 - 1.0)).collect();
        longtail_core::weighting::update_epsilon(&mut eps, &fake_grad, 1.0).unwrap();

        let analytic =
            meta_epsilon_gradient(&objective, &theta, &train, &dev, &w, &eps, case.eta).unwrap();
        let weights = longtail_core::weighting::total_weight(&w, &train.labels, &eps).unwrap();
        let numeric =
            meta_epsilon_fd(&objective, &theta, &train, &dev, &weights, case.eta, h).unwrap();

        let err = max_relative_error(&analytic, &numeric);
        assert!(
            err <= TOL,
            "case {i} (dims {}, hidden {:?}, K {}, |B| {}, |Bd| {}, eta {}): rel err {err:e}",
            case.dims,
            case.hidden,
            case.classes,
            case.batch,
            case.dev_batch,
            case.eta
        );
        checked += 1;
    }
    assert!(
        checked >= 20,
        "need at least 20 configurations, ran {checked}"
    );
}

#[test]
fn closed_form_matches_fd_on_small_cnn() {
    let seed = 77;
    let model = Model::new(ModelSpec::small_cnn([4, 4, 1], vec![2], 3, 3, seed)).unwrap();
    let mut rng = substream(seed, "cnn-batch");
    let make = |rows: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let data: Vec<f64> = (0..rows * 16).map(|_| standard_normal(rng)).collect();
        let labels: Vec<usize> = (0..rows).map(|_| (rng.next_u64() % 3) as usize).collect();
        Batch {
            features: Tensor::from_vec(vec![rows, 4, 4, 1], data).unwrap(),
            labels,
        }
    };
    let train = make(4, &mut rng);
    let dev = make(3, &mut rng);
    let objective = ClassifierObjective::new(&model, LossKind::CrossEntropy);
    let theta = model.get_params();
    let weights = vec![1.0; 4];

    let analytic =
        meta_epsilon_gradient_with_weights(&objective, &theta, &train, &dev, &weights, 0.1)
            .unwrap();
    let numeric = meta_epsilon_fd(&objective, &theta, &train, &dev, &weights, 0.1, H).unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err <= TOL, "cnn rel err {err:e}");
}

/// The formula is exact for any ε, not only at the per-batch zero init:
/// recomputing at a shifted ε must equal the FD oracle there as well.
#[test]
fn exactness_does_not_depend_on_epsilon_origin() {
    let model = Model::new(ModelSpec::mlp(3, vec![5], 3, 5)).unwrap();
    let objective = ClassifierObjective::new(&model, LossKind::CrossEntropy);
    let theta = model.get_params();
    let train = random_batch(5, 3, 3, 50, "train");
    let dev = random_batch(4, 3, 3, 50, "dev");
    for shift in [-0.8, 0.0, 1.7] {
        let weights: Vec<f64> = (0..5).map(|i| 1.0 + shift + 0.1 * i as f64).collect();
        let analytic =
            meta_epsilon_gradient_with_weights(&objective, &theta, &train, &dev, &weights, 0.2)
                .unwrap();
        let numeric = meta_epsilon_fd(&objective, &theta, &train, &dev, &weights, 0.2, H).unwrap();
        assert!(max_relative_error(&analytic, &numeric) <= TOL);
    }
}
