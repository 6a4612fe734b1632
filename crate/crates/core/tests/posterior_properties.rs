use std::sync::Arc;

use dualsparse::data::{make_banana, make_blobs, make_sine, Dataset};
use dualsparse::kernel::NtkKernel;
use dualsparse::likelihood::Likelihood;
use dualsparse::linalg::Matrix;
use dualsparse::metrics::nlpd;
use dualsparse::nn::{init_weights, Activation, NetworkSpec, Weights};
use dualsparse::sparse::{sample_inducing, SparsePosterior};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn weights(d: usize, c: usize, seed: u64) -> Arc<Weights> {
    let spec = NetworkSpec::new(d, c, vec![8, 8], Activation::Tanh).unwrap();
    Arc::new(init_weights(&spec, seed).unwrap())
}

/// Three small problems covering every likelihood.
fn problem(kind: u8, n: usize, seed: u64) -> (Dataset, Likelihood, Arc<Weights>) {
    match kind % 3 {
        0 => (
            make_sine(n, 0.2, seed),
            Likelihood::Gaussian { noise_variance: 0.3 },
            weights(1, 1, seed + 1),
        ),
        1 => (make_banana(n, seed), Likelihood::Bernoulli, weights(2, 1, seed + 1)),
        _ => {
            let centers = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, -1.0]];
            let data = make_blobs(n.div_ceil(3), &centers, 0.6, seed).unwrap();
            let idx: Vec<usize> = (0..n).collect();
            (
                data.select(&idx),
                Likelihood::Categorical { num_classes: 3 },
                weights(2, 3, seed + 1),
            )
        }
    }
}

fn max_gap(a: &SparsePosterior, b: &SparsePosterior) -> f64 {
    let (da, db) = (a.duals(), b.duals());
    let mut gap: f64 = 0.0;
    for (x, y) in da.alpha_u.iter().flatten().zip(db.alpha_u.iter().flatten()) {
        gap = gap.max((x - y).abs());
    }
    for (x, y) in da.b_u.iter().zip(&db.b_u) {
        gap = gap.max(x.sub(y).unwrap().max_abs());
    }
    gap
}

fn range(data: &Dataset, lo: usize, hi: usize) -> Dataset {
    data.select(&(lo..hi).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn update_equals_refit(kind in 0u8..3, seed in 0u64..1000, n in 8usize..30, cut in 0.2f64..0.8, m in 1usize..6) {
        let (data, lik, w) = problem(kind, n, seed);
        let k = ((n as f64) * cut) as usize;
        let (d1, d2) = (range(&data, 0, k), range(&data, k, n));
        let z = sample_inducing(&d1.x, m.min(d1.len()), seed).unwrap();
        let updated = SparsePosterior::fit(&d1, w.clone(), lik, 0.7, z.clone(), 5).unwrap().dual_update(&d2).unwrap();
        let refit = SparsePosterior::fit(&data, w, lik, 0.7, z, 5).unwrap();
        prop_assert!(max_gap(&updated, &refit) <= 1e-10);
        let a = nlpd(&updated.predict_y(&data.x, 16, 1).unwrap(), &data.y).unwrap();
        let b = nlpd(&refit.predict_y(&data.x, 16, 1).unwrap(), &data.y).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "nlpd {a} vs {b}");
    }

    #[test]
    fn updates_compose(kind in 0u8..3, seed in 0u64..1000, n in 9usize..30) {
        let (data, lik, w) = problem(kind, n, seed);
        let (a, b, c) = (range(&data, 0, n / 3), range(&data, n / 3, 2 * n / 3), range(&data, 2 * n / 3, n));
        let z = sample_inducing(&a.x, a.len().min(4), seed).unwrap();
        let base = SparsePosterior::fit(&a, w, lik, 1.0, z, 4).unwrap();
        let twice = base.clone().dual_update(&b).unwrap().dual_update(&c).unwrap();
        let once = base.dual_update(&b.concat(&c).unwrap()).unwrap();
        prop_assert!(max_gap(&twice, &once) <= 1e-10);
    }

    #[test]
    fn batch_size_is_invisible(kind in 0u8..3, seed in 0u64..1000, n in 2usize..30) {
        let (data, lik, w) = problem(kind, n, seed);
        let z = sample_inducing(&data.x, n.min(5), seed).unwrap();
        let reference = SparsePosterior::fit(&data, w.clone(), lik, 1.0, z.clone(), n).unwrap();
        for batch in [1, 7] {
            let p = SparsePosterior::fit(&data, w.clone(), lik, 1.0, z.clone(), batch).unwrap();
            prop_assert!(max_gap(&p, &reference) <= 1e-12);
        }
    }

    #[test]
    fn posterior_stays_within_the_prior(kind in 0u8..3, seed in 0u64..1000, n in 4usize..30, m in 1usize..8) {
        let (data, lik, w) = problem(kind, n, seed);
        let z = sample_inducing(&data.x, m.min(n), seed).unwrap();
        let post = SparsePosterior::fit(&data, w.clone(), lik, 0.5, z, 8).unwrap();
        let (test, _, _) = problem(kind, 20, seed + 77);
        let raw = post.predict_f_raw(&test.x).unwrap();
        let prior = NtkKernel::new(w, 0.5).unwrap().diag(&test.x).unwrap();
        for i in 0..test.len() {
            for (c, prior_c) in prior.iter().enumerate() {
                let v = raw.var[(i, c)];
                prop_assert!(v >= -1e-10, "negative variance {v}");
                prop_assert!(v <= prior_c[i] + 1e-10, "variance {v} above prior {}", prior_c[i]);
            }
        }
        for b in &post.duals().b_u {
            let m = b.rows();
            let sym = DMatrix::from_row_slice(m, m, b.as_slice());
            let min = sym.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-8 * b.trace() / m as f64, "min eigenvalue {min}");
        }
    }

    #[test]
    fn updates_never_shrink_b_trace(kind in 0u8..3, seed in 0u64..1000, n in 4usize..20) {
        let (data, lik, w) = problem(kind, n, seed);
        let half = n / 2;
        let z = sample_inducing(&data.x, half.clamp(1, 4), seed).unwrap();
        let p = SparsePosterior::fit(&range(&data, 0, half), w, lik, 1.0, z, 4).unwrap();
        let before: Vec<f64> = p.duals().b_u.iter().map(Matrix::trace).collect();
        let q = p.dual_update(&range(&data, half, n)).unwrap();
        for (b, a) in before.iter().zip(q.duals().b_u.iter().map(Matrix::trace)) {
            prop_assert!(a >= b - 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn empty_update_is_bitwise_identity() {
    let (data, lik, w) = problem(1, 20, 3);
    let z = sample_inducing(&data.x, 5, 0).unwrap();
    let p = SparsePosterior::fit(&data, w, lik, 1.0, z, 6).unwrap();
    let q = p.clone().dual_update(&range(&data, 0, 0)).unwrap();
    assert_eq!(p.duals(), q.duals());
    assert_eq!(p.whitened_duals(), q.whitened_duals());
}
