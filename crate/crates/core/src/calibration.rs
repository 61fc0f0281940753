//! Calibration-set construction: cluster mean-token features with k-means
//! and keep the sample nearest each centroid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SampleBatch;
use crate::numerics::{squared_distance, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Mean of a sample's token rows.
pub fn featurize<T: Scalar>(sample: &SampleBatch<T>) -> Vec<T> {
    let n = T::from_count(sample.num_tokens());
    let mut acc = vec![T::zero(); sample.tokens.cols()];
    for row in sample.tokens.row_iter() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    acc.into_iter().map(|v| v / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    /// Total within-cluster squared distance after each Lloyd iteration.
    pub distortion_history: Vec<T>,
    pub iterations: usize,
}

impl<T: Scalar> Clustering<T> {
    pub fn distortion(&self) -> T {
        self.distortion_history.last().copied().unwrap_or_else(T::zero)
    }
}

fn total_distortion<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>], assign: &[usize]) -> T {
    points
        .iter()
        .zip(assign)
        .fold(T::zero(), |acc, (p, &c)| acc + squared_distance(p, &centroids[c]))
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> usize {
    let mut best = 0;
    let mut best_d = squared_distance(p, &centroids[0]);
    for (c, cen) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding.
///
/// The first centre is `points[rng.next_below(n)]`. Each further centre
/// draws `u = next_f64() · Σ D²` and takes the first point whose running
/// `D²` sum exceeds `u`; if every `D²` is zero it falls back to
/// `next_below(n)`.
fn seed_centroids<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut centroids = vec![points[rng.next_below(n as u64) as usize].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).to_f64_lossless())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > u && d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave u at the very end of the cumulative sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.next_below(n as u64) as usize
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c).to_f64_lossless());
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Each iteration recomputes means, reassigns every point to its nearest
/// centroid (lowest index on ties) and refills empty clusters. Stops when
/// assignments stop changing or after `max_iters` iterations.
/// A cluster left empty takes the point farthest from its own centroid
/// (lowest index on ties) among clusters with more than one member; that
/// point becomes the new centroid and its old cluster's mean is recomputed.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], k: usize, seed: u64, max_iters: usize) -> Result<Clustering<T>> {
    if points.is_empty() {
        return Err(Error::Empty("feature list"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::TooFewPoints { k, n: points.len() });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            op: "kmeans features",
            left: vec![dim],
            right: vec![bad.len()],
        });
    }

    let mut rng = Rng::new(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    refill_empty(points, &mut assign, &mut centroids);
    let mut history = vec![total_distortion(points, &centroids, &assign)];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        update_means(points, &assign, &mut centroids);
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        refill_empty(points, &mut next, &mut centroids);
        let stable = next == assign;
        assign = next;
        history.push(total_distortion(points, &centroids, &assign));
        if stable {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignments: assign,
        distortion_history: history,
        iterations,
    })
}

fn update_means<T: Scalar>(points: &[Vec<T>], assign: &[usize], centroids: &mut [Vec<T>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(assign) {
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(p) {
            *s = *s + v;
        }
    }
    for (c, (sum, &n)) in sums.into_iter().zip(&counts).enumerate() {
        if n > 0 {
            let n = T::from_count(n);
            centroids[c] = sum.into_iter().map(|v| v / n).collect();
        }
    }
}

fn refill_empty<T: Scalar>(points: &[Vec<T>], assign: &mut [usize], centroids: &mut [Vec<T>]) {
    loop {
        let mut sizes = vec![0usize; centroids.len()];
        for &c in assign.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor = None;
        let mut far = T::neg_infinity();
        for (i, p) in points.iter().enumerate() {
            let c = assign[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]);
            if d > far {
                far = d;
                donor = Some(i);
            }
        }
        let i = donor.expect("k <= n leaves some cluster with two members");
        let old = assign[i];
        assign[i] = empty;
        centroids[empty] = points[i].clone();
        let members: Vec<&Vec<T>> = points
            .iter()
            .zip(assign.iter())
            .filter(|&(_, &c)| c == old)
            .map(|(p, _)| p)
            .collect();
        let n = T::from_count(members.len());
        centroids[old] = (0..points[0].len())
            .map(|d| members.iter().fold(T::zero(), |a, p| a + p[d]) / n)
            .collect();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub sample_ids: Vec<usize>,
    pub distortion: f64,
}

/// Member nearest each centroid, ties to the lower sample index, in cluster
/// order.
pub fn select_representatives<T: Scalar>(
    points: &[Vec<T>],
    centroids: &[Vec<T>],
    assignments: &[usize],
) -> Result<Vec<usize>> {
    if points.len() != assignments.len() {
        return Err(Error::DimensionMismatch {
            op: "select_representatives",
            left: vec![points.len()],
            right: vec![assignments.len()],
        });
    }
    let mut best: Vec<Option<(T, usize)>> = vec![None; centroids.len()];
    for (i, (p, &c)) in points.iter().zip(assignments).enumerate() {
        let d = squared_distance(p, &centroids[c]);
        match best[c] {
            Some((bd, _)) if bd <= d => {}
            _ => best[c] = Some((d, i)),
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(c, b)| {
            b.map(|(_, i)| i)
                .ok_or_else(|| Error::InvalidArgument(format!("cluster {c} has no members")))
        })
        .collect()
}

/// Featurize, cluster and pick representatives.
pub fn calibrate<T: Scalar>(samples: &[SampleBatch<T>], k: usize, seed: u64, max_iters: usize) -> Result<CalibrationSet> {
    let features: Vec<Vec<T>> = samples.iter().map(featurize).collect();
    let clustering = kmeans(&features, k, seed, max_iters)?;
    let sample_ids = select_representatives(&features, &clustering.centroids, &clustering.assignments)?;
    Ok(CalibrationSet {
        k,
        seed,
        sample_ids,
        distortion: clustering.distortion().to_f64_lossless(),
    })
}
