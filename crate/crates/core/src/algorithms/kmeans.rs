// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{ExtractError, LayerActivations, DEGENERACY_THRESHOLD};
use crate::linalg::{self, Matrix};

pub const KMEANS_MAX_ITERS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

/// 2-means over the union of positive and negative rows; returns the
/// normalized difference between the centroid holding most positive rows and
/// the other centroid.
///
/// Seeding is deterministic: the row with the largest norm, then the row
/// farthest from it (lowest index on ties).
pub fn kmeans_vector(acts: &LayerActivations) -> Result<Vec<f64>, ExtractError> {
    let n_pos = acts.rows();
    let data = acts.pos().vstack(acts.neg());
    if data.rows() < 2 {
        return Err(ExtractError::invalid("kmeans", "need at least two rows"));
    }
    let assignment = lloyd(&data)?;
    let centroids = centroids(&data, &assignment, None);
    let toward_pos = linalg::sub(&acts.pos().column_mean(), &acts.neg().column_mean());
    orient(&centroids, &assignment[..n_pos], &toward_pos)
}

fn lloyd(data: &Matrix) -> Result<Vec<usize>, ExtractError> {
    let norms: Vec<f64> = data.iter_rows().map(linalg::norm).collect();
    let first = argmax(&norms);
    let dist: Vec<f64> = data.iter_rows().map(|r| sq_dist(r, data.row(first))).collect();
    let second = argmax(&dist);
    if dist[second] == 0.0 {
        return Err(ExtractError::degenerate("kmeans", "all rows are identical"));
    }
    let mut centers = [data.row(first).to_vec(), data.row(second).to_vec()];
    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = data
            .iter_rows()
            .map(|r| usize::from(sq_dist(r, &centers[1]) < sq_dist(r, &centers[0])))
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        centers = centroids(data, &assignment, Some(&centers));
    }
    Ok(assignment)
}

/// Cluster means; an empty cluster keeps its previous center.
fn centroids(data: &Matrix, assignment: &[usize], previous: Option<&[Vec<f64>; 2]>) -> [Vec<f64>; 2] {
    let mut sums = [vec![0.0; data.cols()], vec![0.0; data.cols()]];
    let mut counts = [0usize; 2];
    for (row, &c) in data.iter_rows().zip(assignment) {
        linalg::add_assign(&mut sums[c], row);
        counts[c] += 1;
    }
    for c in 0..2 {
        if counts[c] > 0 {
            linalg::scale(&mut sums[c], 1.0 / counts[c] as f64);
        } else if let Some(prev) = previous {
            sums[c] = prev[c].clone();
        }
    }
    sums
}

/// Picks which centroid is subtracted from which. `pos_assignment` are the
/// cluster ids of the positive rows.
pub(crate) fn orient(
    centroids: &[Vec<f64>; 2],
    pos_assignment: &[usize],
    toward_pos: &[f64],
) -> Result<Vec<f64>, ExtractError> {
    let in_second = pos_assignment.iter().filter(|&&c| c == 1).count();
    let in_first = pos_assignment.len() - in_second;
    let mut v = linalg::sub(&centroids[0], &centroids[1]);
    let gap = linalg::norm(&v);
    if gap < DEGENERACY_THRESHOLD {
        return Err(ExtractError::degenerate("kmeans", "centroids coincide"));
    }
    if in_second > in_first {
        linalg::scale(&mut v, -1.0);
    } else if in_second == in_first {
        // dot(c0, t) vs dot(c1, t) is the sign of dot(c0 - c1, t)
        linalg::align_sign(&mut v, toward_pos);
    }
    linalg::scale(&mut v, 1.0 / gap);
    Ok(v)
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}
