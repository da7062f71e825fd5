//! Naive reference implementations used as oracles by the integration
//! tests. Written for clarity, deliberately sharing no code with the crate.
#![allow(dead_code)]

use densemetric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn naive_contrastive(f: &Matrix, pos: &[(usize, usize)], neg: &[(usize, usize)], m: f64) -> f64 {
    let p: f64 = pos.iter().map(|&(i, j)| sqd(f.row(i), f.row(j))).sum();
    let n: f64 = neg.iter().map(|&(i, j)| (m - sqd(f.row(i), f.row(j))).max(0.0)).sum();
    p + n
}

pub fn naive_triplet(f: &Matrix, t: &[(usize, usize, usize)], m: f64) -> f64 {
    t.iter()
        .map(|&(a, p, n)| (m + sqd(f.row(a), f.row(p)) - sqd(f.row(a), f.row(n))).max(0.0))
        .sum()
}

pub fn naive_npair(f: &Matrix, t: &[(usize, usize, Vec<usize>)]) -> f64 {
    t.iter()
        .map(|(a, p, negs)| {
            let fa = f.row(*a);
            let s: f64 = negs
                .iter()
                .map(|&k| (inner(fa, f.row(k)) - inner(fa, f.row(*p))).exp())
                .sum();
            (1.0 + s).ln()
        })
        .sum()
}

/// Mean squared distance to the class mean.
pub fn naive_density(rows: &[&[f64]]) -> f64 {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    rows.iter().map(|r| sqd(r, &mean)).sum::<f64>() / n
}

/// Regularizer value over the classes of `labels` with at least two rows.
pub fn naive_regularizer(
    f: &Matrix,
    labels: &[usize],
    alphas: &[f64],
    d0: &[f64],
    eta: f64,
    penalty_weight: f64,
) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let classes: Vec<usize> = classes
        .into_iter()
        .filter(|&c| labels.iter().filter(|&&l| l == c).count() >= 2)
        .collect();
    let c = classes.len() as f64;
    let mut fit = 0.0;
    let mut reward = 0.0;
    for &k in &classes {
        let rows: Vec<&[f64]> = (0..f.rows()).filter(|&i| labels[i] == k).map(|i| f.row(i)).collect();
        let dk = naive_density(&rows);
        fit += (dk - alphas[k]).powi(2);
        reward += alphas[k];
    }
    let w = |k: usize| d0[k].max(1e-6).powf(eta);
    let mut pen = 0.0;
    for &i in &classes {
        for &j in &classes {
            pen += (w(j) * alphas[i] - w(i) * alphas[j]).powi(2);
        }
    }
    fit / c - reward / c + penalty_weight * pen / (c * c)
}

/// NMI straight from the contingency table.
pub fn naive_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let ra: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cb: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = |v: &[f64]| -> f64 {
        v.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
    };
    let (ha, hb) = (h(&ra), h(&cb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let c = table[i][j];
            if c > 0.0 {
                mi += c / n * (n * c / (ra[i] * cb[j])).ln();
            }
        }
    }
    2.0 * mi / (ha + hb)
}

/// Random unit-norm rows.
pub fn unit_rows(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = inner(&v, &v).sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// `classes` labels with `per` rows each, grouped.
pub fn grouped_labels(classes: usize, per: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
}
