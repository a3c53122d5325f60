//! Brute-force reference implementations of the scorers.
#![allow(clippy::needless_range_loop)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0) * scale)
}

pub fn random_probs(rng: &mut ChaCha8Rng, n: usize, z: usize) -> Array2<f64> {
    let mut p = Array2::from_shape_fn((n, z), |_| rng.random_range(0.01..1.0f64).powi(3));
    for mut row in p.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

pub fn naive_leep(probs: &Array2<f64>, labels: &[usize], classes: usize) -> f64 {
    let (n, z) = probs.dim();
    let mut joint = vec![vec![0.0; z]; classes];
    for y in 0..classes {
        for j in 0..z {
            for i in 0..n {
                if labels[i] == y {
                    joint[y][j] += probs[[i, j]] / n as f64;
                }
            }
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut p = 0.0;
        for j in 0..z {
            let mut pz = 0.0;
            for row in &joint {
                pz += row[j];
            }
            if pz > 0.0 {
                p += joint[labels[i]][j] / pz * probs[[i, j]];
            }
        }
        total += p.max(1e-12).ln();
    }
    total / n as f64
}

pub fn naive_kernel(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize, sigma: f64) -> f64 {
    let mut d2 = 0.0;
    for c in 0..a.ncols() {
        d2 += (a[[i, c]] - b[[j, c]]).powi(2);
    }
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn naive_mmd2(x: &Array2<f64>, y: &Array2<f64>, sigma: f64) -> f64 {
    let (n, m) = (x.nrows(), y.nrows());
    let mut kxx = 0.0;
    for i in 0..n {
        for j in 0..n {
            kxx += naive_kernel(x, i, x, j, sigma);
        }
    }
    let mut kyy = 0.0;
    for i in 0..m {
        for j in 0..m {
            kyy += naive_kernel(y, i, y, j, sigma);
        }
    }
    let mut kxy = 0.0;
    for i in 0..n {
        for j in 0..m {
            kxy += naive_kernel(x, i, y, j, sigma);
        }
    }
    kxx / (n * n) as f64 + kyy / (m * m) as f64 - 2.0 * kxy / (n * m) as f64
}

pub fn naive_median(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = x.outer_iter().chain(y.outer_iter()).map(|r| r.to_vec()).collect();
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let h = d.len() / 2;
    let med = if d.len() % 2 == 1 { d[h] } else { 0.5 * (d[h - 1] + d[h]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// `ln det` and solve of a small symmetric positive-definite system by
/// Gaussian elimination.
pub fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (f64, Vec<f64>) {
    let k = b.len();
    let mut log_det = 0.0;
    for p in 0..k {
        log_det += a[p][p].ln();
        for r in p + 1..k {
            let f = a[r][p] / a[p][p];
            for c in p..k {
                a[r][c] -= f * a[p][c];
            }
            b[r] -= f * b[p];
        }
    }
    let mut x = vec![0.0; k];
    for p in (0..k).rev() {
        let s: f64 = (p + 1..k).map(|c| a[p][c] * x[c]).sum();
        x[p] = (b[p] - s) / a[p][p];
    }
    (log_det, x)
}

/// Log evidence evaluated directly from its definition.
pub fn dense_evidence(f: &Array2<f64>, y: &[f64], alpha: f64, beta: f64) -> f64 {
    let (n, k) = f.dim();
    let mut a = vec![vec![0.0; k]; k];
    let mut fty = vec![0.0; k];
    for i in 0..k {
        a[i][i] = alpha;
        for j in 0..k {
            for r in 0..n {
                a[i][j] += beta * f[[r, i]] * f[[r, j]];
            }
        }
        for r in 0..n {
            fty[i] += beta * f[[r, i]] * y[r];
        }
    }
    let (log_det, m) = solve_spd(a, fty);
    let mut res = 0.0;
    for r in 0..n {
        let pred: f64 = (0..k).map(|c| f[[r, c]] * m[c]).sum();
        res += (y[r] - pred).powi(2);
    }
    let mtm: f64 = m.iter().map(|v| v * v).sum();
    let (n, k) = (n as f64, k as f64);
    0.5 * n * beta.ln() + 0.5 * k * alpha.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * beta * res
        - 0.5 * alpha * mtm
        - 0.5 * log_det
}

/// LogME score from a 200×200 log-spaced grid over `[1e-3, 1e3]²`.
pub fn grid_logme(f: &Array2<f64>, labels: &[usize], classes: usize) -> f64 {
    let grid: Vec<f64> = (0..200).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 199.0)).collect();
    let n = f.nrows() as f64;
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        if !labels.contains(&c) {
            continue;
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        let mut best = f64::NEG_INFINITY;
        for &a in &grid {
            for &b in &grid {
                best = best.max(dense_evidence(f, &y, a, b));
            }
        }
        total += best / n;
        used += 1;
    }
    total / used as f64
}

pub fn informative_fixture(seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(12..=20);
    let k = rng.random_range(1..=3);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let f = Array2::from_shape_fn((n, k), |(i, j)| {
        let signal = if labels[i] == j % 2 { 1.0 } else { -1.0 };
        signal + 0.8 * rng.random_range(-1.0..1.0)
    });
    (f, labels)
}

/// Mean log-sum-exp by explicit exponentials.
pub fn naive_energy(f: &Array2<f64>) -> f64 {
    let (n, k) = f.dim();
    let mut total = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..k {
            s += f[[i, j]].exp();
        }
        total += s.ln();
    }
    total / n as f64
}
