use std::collections::HashSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Representative points: k-means++ seeding, Lloyd iterations until every
/// centroid moves less than 1e-9 (at most 100 rounds), then the data point
/// nearest each centroid.
pub fn kmeans_sample(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let m = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != m) {
        return Err(Error::shape("points have inconsistent dimensions"));
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds {} distinct points",
            distinct.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    let n = points.len();

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = closest(&centroids, p).0;
        }
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[assign[a]])
                            .total_cmp(&dist2(&points[b], &centroids[assign[b]]))
                    })
                    .unwrap();
                points[far].clone()
            };
            shift = shift.max(dist2(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < 1e-9 {
            break;
        }
    }
    Ok(centroids
        .iter()
        .map(|c| {
            let (i, _) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, dist2(p, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            points[i].clone()
        })
        .collect())
}

fn closest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = dist2(p, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equal_to_distinct_returns_all() {
        let pts: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64, (k * k) as f64]).collect();
        let mut out = kmeans_sample(&pts, 6, 1).unwrap();
        out.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(out, pts);
    }

    #[test]
    fn two_blobs() {
        let mut pts = Vec::new();
        for k in 0..50 {
            let e = (k as f64 * 0.618).fract() - 0.5;
            pts.push(vec![e]);
            pts.push(vec![100.0 + e]);
        }
        // brute-force optimal 2-clustering splits at the gap
        let out = kmeans_sample(&pts, 2, 4).unwrap();
        let low = out.iter().filter(|p| p[0] < 50.0).count();
        assert_eq!(low, 1);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn deterministic_and_checked() {
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|k| vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()])
            .collect();
        assert_eq!(
            kmeans_sample(&pts, 20, 9).unwrap(),
            kmeans_sample(&pts, 20, 9).unwrap()
        );
        let dup = vec![vec![1.0]; 10];
        assert!(kmeans_sample(&dup, 2, 0).is_err());
        assert_eq!(kmeans_sample(&dup, 1, 0).unwrap(), vec![vec![1.0]]);
    }
}
