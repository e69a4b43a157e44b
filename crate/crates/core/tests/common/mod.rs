#![allow(dead_code)]

use hdgee::dataset::{Cluster, ClusteredDataset};
use hdgee::Family;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent clusters of size `m` with N(0, 1) covariates scaled by `x_scale`.
pub fn random_data(n: usize, m: usize, p: usize, family: Family, x_scale: f64, seed: u64) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (0..n)
        .map(|i| {
            let x = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal) * x_scale);
            let y = DVector::from_fn(m, |_, _| match family {
                Family::Gaussian => rng.sample::<f64, _>(StandardNormal),
                Family::Logit => f64::from(rng.random::<bool>()),
            });
            Cluster::new(format!("c{i}"), x, y)
        })
        .collect();
    ClusteredDataset::new(clusters).unwrap()
}

/// Minimum of `sum |omega_j|` subject to `|S omega - xi|_inf <= lambda'`,
/// by enumerating every vertex of the lifted polyhedron in `(omega, t)`.
pub fn l1_projection_by_vertices(s: &DMatrix<f64>, xi: &DVector<f64>, lambda_prime: f64) -> f64 {
    let p = xi.len();
    let dim = 2 * p;
    // rows g' z <= h with z = (omega, t)
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for j in 0..p {
        let mut a = vec![0.0; dim];
        a[j] = 1.0;
        a[p + j] = -1.0;
        rows.push((a, 0.0));
        let mut b = vec![0.0; dim];
        b[j] = -1.0;
        b[p + j] = -1.0;
        rows.push((b, 0.0));
    }
    for i in 0..p {
        let mut up = vec![0.0; dim];
        let mut lo = vec![0.0; dim];
        for j in 0..p {
            up[j] = s[(i, j)];
            lo[j] = -s[(i, j)];
        }
        rows.push((up, xi[i] + lambda_prime));
        rows.push((lo, lambda_prime - xi[i]));
    }
    let mut best = f64::INFINITY;
    let k = rows.len();
    let mut idx: Vec<usize> = (0..dim).collect();
    loop {
        let a = DMatrix::from_fn(dim, dim, |r, c| rows[idx[r]].0[c]);
        let h = DVector::from_fn(dim, |r, _| rows[idx[r]].1);
        if a.determinant().abs() > 1e-10 {
            if let Some(z) = a.lu().solve(&h) {
                let feasible = rows
                    .iter()
                    .all(|(g, hv)| g.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() <= hv + 1e-9);
                if feasible {
                    best = best.min((p..dim).map(|j| z[j]).sum());
                }
            }
        }
        // next combination in lexicographic order
        let Some(i) = (0..dim).rev().find(|&i| idx[i] < k - dim + i) else {
            return best;
        };
        idx[i] += 1;
        for r in i + 1..dim {
            idx[r] = idx[r - 1] + 1;
        }
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let p = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, p);
    for j in 0..p {
        let mut up = x.clone();
        let mut dn = x.clone();
        up[j] += h;
        dn[j] -= h;
        jac.set_column(j, &((f(&up) - f(&dn)) / (2.0 * h)));
    }
    jac
}

pub fn status(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
