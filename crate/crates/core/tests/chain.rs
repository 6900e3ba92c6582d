use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use tobitmix::gibbs::init_state;
use tobitmix::simulate::generate;
use tobitmix::{
    builtin_dgp, dataset_loglik, relabel_draws, run_chain, run_chain_from, ChainSettings, Hyperpriors,
    ObservationSet, RelabelRule, RngStream,
};

fn flat(c: usize, p: usize) -> Hyperpriors {
    Hyperpriors::isotropic(c, p, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap()
}

fn uncensored(n: usize, beta: &[f64], sigma: f64, seed: u64) -> ObservationSet {
    let mut rng = RngStream::new(seed);
    let p = beta.len();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.std_normal() });
    let y = (0..n)
        .map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + sigma * rng.std_normal())
        .collect();
    ObservationSet::with_common_bounds(y, x, f64::NEG_INFINITY, f64::INFINITY).unwrap()
}

/// Standard error of a chain mean from 50 non-overlapping batches.
fn batch_se(xs: &[f64]) -> f64 {
    let b = 50;
    let len = xs.len() / b;
    let means: Vec<f64> = xs.chunks(len).take(b).map(|c| c.iter().sum::<f64>() / len as f64).collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (v / b as f64).sqrt()
}

#[test]
fn single_class_flat_prior_matches_conjugate_posterior() {
    let data = uncensored(200, &[0.5, 1.5], 0.8, 3);
    let settings = ChainSettings::new(1, 4500, 500, 1, 17).unwrap();
    let store = run_chain(&data, &flat(1, 2), &settings, &mut RngStream::new(17)).unwrap();
    assert_eq!(store.len(), 4000);

    let x = data.x();
    let y = DVector::from_column_slice(data.y());
    let beta_hat = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let resid = &y - x * &beta_hat;
    let ssr = resid.dot(&resid);
    let nu = (data.n() - 2) as f64;
    let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
    let s2 = ssr / nu;

    for j in 0..2 {
        let draws: Vec<f64> = store.draws.iter().map(|d| d.components[0].beta[j]).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = batch_se(&draws);
        assert!((m - beta_hat[j]).abs() < 4.0 * se, "beta[{j}] mean {m} vs {}", beta_hat[j]);
        let exact_var = nu / (nu - 2.0) * s2 * xtx_inv[(j, j)];
        assert!((v / exact_var - 1.0).abs() < 0.15, "beta[{j}] variance {v} vs {exact_var}");
    }
    let sig: Vec<f64> = store.draws.iter().map(|d| d.components[0].sigma2).collect();
    let m = sig.iter().sum::<f64>() / sig.len() as f64;
    let exact = ssr / (nu - 2.0);
    assert!((m - exact).abs() < 4.0 * batch_se(&sig), "sigma2 mean {m} vs {exact}");
}

#[test]
fn stored_loglik_matches_direct_evaluation() {
    let data = generate(&builtin_dgp(1).unwrap().with_n(300), &mut RngStream::new(5)).unwrap();
    let settings = ChainSettings::new(2, 60, 20, 4, 8).unwrap();
    let hyper = Hyperpriors::isotropic(2, 2, 1.0, 0.0, 0.1, 2.0, 2.0).unwrap();
    let store = run_chain(&data, &hyper, &settings, &mut RngStream::new(8)).unwrap();
    assert_eq!(store.len(), 10);
    for (draw, row) in store.draws.iter().zip(&store.loglik) {
        let mut total = 0.0;
        for i in 0..data.n() {
            let xi = data.row(i);
            let mut lik = 0.0;
            for (comp, w) in draw.components.iter().zip(&draw.weights) {
                let nd = Normal::new(comp.beta.dot(&xi), comp.sigma2.sqrt()).unwrap();
                let y = data.y()[i];
                lik += w * if y == data.lower()[i] {
                    nd.cdf(y)
                } else if y == data.upper()[i] {
                    1.0 - nd.cdf(y)
                } else {
                    nd.pdf(y)
                };
            }
            assert!((row[i] - lik.ln()).abs() < 1e-10, "observation {i}: {} vs {}", row[i], lik.ln());
            total += lik.ln();
        }
        let direct = dataset_loglik(&data, draw).unwrap().total;
        assert!((row.iter().sum::<f64>() - direct).abs() < 1e-10);
        assert!((total - direct).abs() < 1e-8 * direct.abs());
    }
}

#[test]
fn same_seed_same_chain() {
    let data = generate(&builtin_dgp(2).unwrap().with_n(200), &mut RngStream::new(1)).unwrap();
    let hyper = Hyperpriors::isotropic(3, 2, 1.0, 0.0, 0.1, 2.0, 2.0).unwrap();
    let settings = ChainSettings::new(3, 50, 10, 2, 99).unwrap();
    let a = run_chain(&data, &hyper, &settings, &mut RngStream::new(99)).unwrap();
    let b = run_chain(&data, &hyper, &settings, &mut RngStream::new(99)).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.loglik, b.loglik);
    let c = run_chain(&data, &hyper, &settings, &mut RngStream::with_stream(99, 1)).unwrap();
    assert_ne!(a.draws, c.draws);
}

#[test]
fn chain_is_equivariant_under_class_permutation() {
    let data = generate(&builtin_dgp(1).unwrap().with_n(250), &mut RngStream::new(2)).unwrap();
    let hyper = Hyperpriors::isotropic(3, 2, 0.5, 0.0, 0.1, 1.0, 1.0).unwrap();
    let settings = ChainSettings::new(3, 40, 0, 1, 4).unwrap();
    let start = init_state(&data, &settings, &hyper, &mut RngStream::new(40)).unwrap();
    let perm = [2, 0, 1];
    let a = run_chain_from(&data, &hyper, &settings, start.clone(), &mut RngStream::new(41)).unwrap();
    let b = run_chain_from(
        &data,
        &hyper.permuted(&perm),
        &settings,
        start.permuted(&perm),
        &mut RngStream::new(41),
    )
    .unwrap();
    assert_eq!(a.loglik_totals(), b.loglik_totals());
    for (da, db) in a.draws.iter().zip(&b.draws) {
        assert_eq!(&da.permuted(&perm), db);
    }
    let ra = relabel_draws(&a, RelabelRule::ByIntercept);
    let rb = relabel_draws(&b, RelabelRule::ByIntercept);
    assert_eq!(ra.draws, rb.draws);
}
