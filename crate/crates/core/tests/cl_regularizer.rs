use std::collections::BTreeSet;

use dualsparse::cl::{
    build_task_memory, train_task, ClConfig, ClPenalty, DualMetric, MemoryBuffer, TaskData, TaskMemory,
};
use dualsparse::data::{make_blobs, split, Dataset};
use dualsparse::likelihood::Likelihood;
use dualsparse::linalg::Matrix;
use dualsparse::nn::{forward, init_weights, Activation, NetworkSpec, Weights};
use dualsparse::train::{objective_and_grad, train_map, Penalty, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LIK: Likelihood = Likelihood::Categorical { num_classes: 4 };

fn spec() -> NetworkSpec {
    NetworkSpec::new(2, 4, vec![10, 10], Activation::Tanh).unwrap()
}

fn blobs(seed: u64) -> Dataset {
    let centers = vec![vec![-2.0, -2.0], vec![2.0, -2.0], vec![-2.0, 2.0], vec![2.0, 2.0]];
    make_blobs(15, &centers, 1.0, seed).unwrap()
}

fn only_classes(data: &Dataset, keep: &[usize]) -> Dataset {
    let y = data.y.classes().unwrap();
    data.select(&(0..data.len()).filter(|&i| keep.contains(&y[i])).collect::<Vec<_>>())
}

fn observed(classes: &[usize]) -> BTreeSet<usize> {
    classes.iter().copied().collect()
}

/// A buffer summarizing classes 0 and 1 at `w`.
fn buffer_at(w: &Weights, m: usize) -> MemoryBuffer {
    let data = only_classes(&blobs(1), &[0, 1]);
    let mem = build_task_memory(&data, w, LIK, 0.5, m, 2, &observed(&[0, 1]), &DualMetric, 8).unwrap();
    MemoryBuffer {
        tasks: vec![mem],
        observed_classes: observed(&[0, 1]),
    }
}

fn perturbed(w: &Weights, scale: f64, rng: &mut ChaCha8Rng) -> Weights {
    let mut v = w.clone();
    for x in v.values_mut() {
        *x += scale * (rng.random::<f64>() - 0.5);
    }
    v
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn central_difference(f: impl Fn(&Weights) -> f64, w: &Weights) -> Vec<f64> {
    let h = 1e-5;
    (0..w.num_params())
        .map(|k| {
            let (mut up, mut down) = (w.clone(), w.clone());
            up.values_mut()[k] += h;
            down.values_mut()[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn regularizer_vanishes_at_the_task_solution_and_is_nonnegative() {
    let w = init_weights(&spec(), 4).unwrap();
    let buffer = buffer_at(&w, 6);
    assert_eq!(buffer.regularizer(&w).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let v = perturbed(&w, 1.0, &mut rng);
        assert!(buffer.regularizer(&v).unwrap() >= 0.0);
    }
}

#[test]
fn unseen_classes_use_identity_blocks() {
    let w = init_weights(&spec(), 4).unwrap();
    let buffer = buffer_at(&w, 5);
    let mem: &TaskMemory = &buffer.tasks[0];
    for c in [2, 3] {
        assert_eq!(mem.bbar_inv[c], Matrix::identity(5));
    }
    assert_ne!(mem.bbar_inv[0], Matrix::identity(5));
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let w_star = init_weights(&spec(), 4).unwrap();
    let buffer = buffer_at(&w_star, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let w = perturbed(&w_star, 0.5, &mut rng);
        let mut g = vec![0.0; w.num_params()];
        buffer.regularizer_with_grad(&w, Some(&mut g)).unwrap();
        let fd = central_difference(|v| buffer.regularizer(v).unwrap(), &w);
        assert!(relative_gap(&g, &fd) <= 1e-5, "gap {}", relative_gap(&g, &fd));
    }
}

#[test]
fn continual_objective_gradient_matches_finite_differences() {
    let w_star = init_weights(&spec(), 4).unwrap();
    let buffer = buffer_at(&w_star, 6);
    let task = only_classes(&blobs(5), &[2, 3]);
    let penalty = ClPenalty {
        buffer: &buffer,
        weight: 3.0,
    };
    let objective = |w: &Weights| {
        let mut scratch = vec![0.0; w.num_params()];
        objective_and_grad(w, &task, &LIK, 0.1).unwrap().0 + penalty.value_and_grad(w, &mut scratch)
    };
    let w = perturbed(&w_star, 0.5, &mut ChaCha8Rng::seed_from_u64(11));
    let (_, mut g) = objective_and_grad(&w, &task, &LIK, 0.1).unwrap();
    penalty.value_and_grad(&w, &mut g);
    let fd = central_difference(objective, &w);
    assert!(relative_gap(&g, &fd) <= 1e-5, "gap {}", relative_gap(&g, &fd));
}

fn task(data: &Dataset, seed: u64) -> TaskData {
    let [train, val, test] = split(data, [0.6, 0.2, 0.2], seed).unwrap();
    TaskData { train, val, test }
}

fn cl_config(tau: f64) -> ClConfig {
    ClConfig {
        tau,
        points_per_task: 6,
        train: TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 30,
            patience: 30,
            prior_precision: 0.1,
            seed: 2,
        },
        metric: "dual".into(),
        batch: 8,
    }
}

#[test]
fn without_memory_or_tau_training_is_plain_map() {
    let t = task(&only_classes(&blobs(2), &[0, 1]), 0);
    let init = init_weights(&spec(), 2).unwrap();
    let plain = train_map(&t.train, &spec(), &LIK, &cl_config(0.0).train, &t.val).unwrap();
    let (empty, _) = train_task(&t, init.clone(), &MemoryBuffer::default(), &cl_config(5.0), &LIK, 0).unwrap();
    assert_eq!(empty.values(), plain.values());

    let buffer = buffer_at(&plain, 4);
    let t2 = task(&only_classes(&blobs(3), &[2, 3]), 1);
    let (a, _) = train_task(&t2, plain.clone(), &buffer, &cl_config(0.0), &LIK, 1).unwrap();
    let (b, _) = train_task(&t2, plain.clone(), &MemoryBuffer::default(), &cl_config(0.0), &LIK, 1).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn a_huge_tau_pins_remembered_outputs() {
    let data = only_classes(&blobs(2), &[0, 1]);
    let t = task(&data, 0);
    let mut cfg = cl_config(0.0);
    cfg.metric = "identity".into();
    let (w1, mem) = train_task(&t, init_weights(&spec(), 2).unwrap(), &MemoryBuffer::default(), &cfg, &LIK, 0).unwrap();
    let buffer = MemoryBuffer {
        tasks: vec![mem.clone()],
        observed_classes: observed(&[0, 1]),
    };
    cfg.tau = 1e6;
    cfg.train.learning_rate = 1e-3;
    let (w2, _) = train_task(&t, w1, &buffer, &cfg, &LIK, 1).unwrap();
    let f = forward(&w2, &mem.z).unwrap();
    assert!(f.sub(&mem.u).unwrap().max_abs() < 1e-2);
}
