// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures and reference implementations shared by the integration tests
//! and the acceptance runner. The reference implementations are written
//! from the definitions, deliberately not reusing library code paths.

#![allow(dead_code)]

pub mod criteria;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use steerkit::algorithms::{LayerActivations, SteerVector};
use steerkit::store::{StrategyBundle, StrategyProfile};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn gauss_vec(r: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d).map(|_| sigma * gauss(r)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

pub fn random_unit(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    unit(&gauss_vec(r, d, 1.0))
}

/// Paired rows with `pos_i = neg_i + shift + noise`.
pub fn shifted_pairs(r: &mut ChaCha8Rng, n: usize, shift: &[f64], noise: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = shift.len();
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    for _ in 0..n {
        let base = gauss_vec(r, d, 1.0);
        let jitter = gauss_vec(r, d, noise);
        pos.push(
            base.iter()
                .zip(shift)
                .zip(&jitter)
                .map(|((b, s), j)| b + s + j)
                .collect(),
        );
        neg.push(base);
    }
    (pos, neg)
}

pub fn layer(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> LayerActivations {
    LayerActivations::from_rows(pos, neg).expect("well-formed fixture")
}

/// Random paired rows with no particular structure.
pub fn random_layer(seed: u64, n: usize, d: usize) -> LayerActivations {
    let mut r = rng(seed);
    let pos: Vec<Vec<f64>> = (0..n).map(|_| gauss_vec(&mut r, d, 1.0)).collect();
    let neg: Vec<Vec<f64>> = (0..n).map(|_| gauss_vec(&mut r, d, 1.0)).collect();
    layer(&pos, &neg)
}

// ---------------------------------------------------------------------------
// reference implementations
// ---------------------------------------------------------------------------

/// Mean of `pos_i − neg_i`, accumulated term by term, then normalised.
pub fn md_oracle(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> Vec<f64> {
    let d = pos[0].len();
    let mut acc = vec![0.0; d];
    for (p, q) in pos.iter().zip(neg) {
        for k in 0..d {
            acc[k] += p[k] - q[k];
        }
    }
    for a in &mut acc {
        *a /= pos.len() as f64;
    }
    unit(&acc)
}

/// Top eigenvector of the covariance of the differences by power iteration,
/// oriented to have a positive dot product with the mean difference.
pub fn pca_power_oracle(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> Vec<f64> {
    let n = pos.len();
    let d = pos[0].len();
    let diffs: Vec<Vec<f64>> = pos
        .iter()
        .zip(neg)
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| a - b).collect())
        .collect();
    let mean: Vec<f64> = (0..d)
        .map(|k| diffs.iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &diffs {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.1 * k as f64).collect();
    v = unit(&v);
    for _ in 0..20_000 {
        let next: Vec<f64> = (0..d).map(|i| dot(&cov[i], &v)).collect();
        let next = unit(&next);
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-15 {
            break;
        }
    }
    if dot(&v, &mean) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Globally optimal 2-means over all rows by enumerating every partition,
/// returned as the normalised difference (cluster holding more positive rows)
/// − (other cluster). Only for small inputs.
pub fn kmeans_exhaustive(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> Vec<f64> {
    let rows: Vec<&Vec<f64>> = pos.iter().chain(neg).collect();
    let n = rows.len();
    assert!(n <= 16, "exhaustive search is exponential");
    let d = rows[0].len();
    let centroid = |mask: u32, side: bool| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = (0..n)
            .filter(|&i| ((mask >> i) & 1 == 1) == side)
            .map(|i| rows[i])
            .collect();
        (0..d)
            .map(|k| members.iter().map(|r| r[k]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let mut best = (f64::INFINITY, 0u32);
    // fix row 0 on side "false" so each partition is visited once
    for mask in (2u32..(1 << n)).step_by(2) {
        let (c1, c0) = (centroid(mask, true), centroid(mask, false));
        let sse: f64 = (0..n)
            .map(|i| {
                let c = if (mask >> i) & 1 == 1 { &c1 } else { &c0 };
                rows[i].iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        if sse < best.0 {
            best = (sse, mask);
        }
    }
    let mask = best.1;
    let pos_in_1 = (0..pos.len()).filter(|&i| (mask >> i) & 1 == 1).count();
    let (c1, c0) = (centroid(mask, true), centroid(mask, false));
    let v: Vec<f64> = if 2 * pos_in_1 > pos.len() {
        c1.iter().zip(&c0).map(|(a, b)| a - b).collect()
    } else {
        c0.iter().zip(&c1).map(|(a, b)| a - b).collect()
    };
    unit(&v)
}

// ---------------------------------------------------------------------------
// fixtures named by the checks
// ---------------------------------------------------------------------------

/// Differences spread mostly along one random axis, plus a mean offset, so
/// the top principal direction is well separated.
pub fn pca_fixture(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let axis = random_unit(&mut r, d);
    let offset = gauss_vec(&mut r, d, 0.5);
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    for _ in 0..n {
        let base = gauss_vec(&mut r, d, 1.0);
        let a = 4.0 * gauss(&mut r);
        let jitter = gauss_vec(&mut r, d, 0.3);
        pos.push((0..d).map(|k| base[k] + offset[k] + a * axis[k] + jitter[k]).collect());
        neg.push(base);
    }
    (pos, neg)
}

/// Two blobs, each mixing labels, with the positive rows mostly in one.
pub fn kmeans_fixture(seed: u64, n_pairs: usize, d: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let ca = gauss_vec(&mut r, d, 3.0);
    let cb = gauss_vec(&mut r, d, 3.0);
    let spread = 0.4;
    let mut pos = Vec::with_capacity(n_pairs);
    let mut neg = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        // one label-crossing row per side when there is room for it
        let p_center = if i == 0 && n_pairs > 2 { &cb } else { &ca };
        let q_center = if i == 1 && n_pairs > 2 { &ca } else { &cb };
        pos.push(p_center.iter().map(|c| c + spread * gauss(&mut r)).collect());
        neg.push(q_center.iter().map(|c| c + spread * gauss(&mut r)).collect());
    }
    (pos, neg)
}

/// Linearly separable classes along a hidden unit direction `w`, with a
/// margin of 1 on either side and isotropic spread elsewhere.
pub fn lr_fixture(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let d = 8;
    let n = 200;
    let mut r = rng(seed);
    let w = random_unit(&mut r, d);
    let draw = |sign: f64, r: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x = gauss_vec(r, d, 1.0);
        let along = dot(&x, &w);
        let target = sign * (1.0 + along.abs());
        for k in 0..d {
            x[k] += (target - along) * w[k];
        }
        x
    };
    let pos: Vec<Vec<f64>> = (0..n).map(|_| draw(1.0, &mut r)).collect();
    let neg: Vec<Vec<f64>> = (0..n).map(|_| draw(-1.0, &mut r)).collect();
    (pos, neg, w)
}

/// A bundle over `d` dims with the given `(id, steer, anchor, strength)`.
pub fn bundle(layer: usize, num_layers: usize, profiles: &[(&str, Vec<f64>, Vec<f64>, f64)]) -> StrategyBundle {
    let d = profiles[0].1.len();
    StrategyBundle {
        model_id: "test".into(),
        issue: "test".into(),
        num_layers,
        layer,
        hidden_dim: d,
        tau: 0.3,
        beta_default: 1.0,
        profiles: profiles
            .iter()
            .enumerate()
            .map(|(i, (id, steer, anchor, strength))| StrategyProfile {
                steer: SteerVector {
                    algorithm_id: id.to_string(),
                    layer,
                    values: unit(steer),
                },
                anchor: anchor.clone(),
                strength: *strength,
                assigned_ids: vec![format!("s{i}")],
            })
            .collect(),
    }
}

pub fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("valid normal")
}

pub fn coin(r: &mut ChaCha8Rng) -> bool {
    r.random_bool(0.5)
}
