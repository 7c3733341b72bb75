//! Lloyd k-means with k-means++ seeding, the WSS elbow profile over an imputed
//! panel, and selection of the panel member with the tightest clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 200;
pub const DEFAULT_RESTARTS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wss: f64,
    pub iterations: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Cluster means of an assignment; empty clusters keep `fallback[j]`.
fn cluster_means(
    data: &[Vec<f64>],
    assignment: &[usize],
    k: usize,
    fallback: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let dim = data.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &c) in data.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(x) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (s, n))| {
            if n == 0 {
                fallback[j].clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Total within-cluster sum of squared distances to the cluster means.
pub fn wss_of(data: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let dim = data.first().map_or(0, Vec::len);
    let means = cluster_means(data, assignment, k, &vec![vec![0.0; dim]; k]);
    data.iter()
        .zip(assignment)
        .map(|(x, &c)| sq_dist(x, &means[c]))
        .sum()
}

fn plus_plus_seed<R: Rng>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = data[idx].clone();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centroids until the assignment stops changing
/// or [`MAX_LLOYD_ITERATIONS`] is reached. An emptied cluster is re-seeded at the
/// point farthest from its current centroid.
pub fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let k = centroids.len();
    let mut assignment: Vec<usize> = data.iter().map(|x| nearest(x, &centroids).0).collect();
    let mut iterations = 0;
    loop {
        iterations += 1;
        centroids = cluster_means(data, &assignment, k, &centroids);

        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&c| counts[c] += 1);
        for j in 0..k {
            if counts[j] == 0 {
                let far = data
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (i, sq_dist(x, &centroids[assignment[i]])))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i);
                if let Some(i) = far {
                    centroids[j] = data[i].clone();
                    counts[assignment[i]] -= 1;
                    assignment[i] = j;
                    counts[j] = 1;
                }
            }
        }

        let next: Vec<usize> = data.iter().map(|x| nearest(x, &centroids).0).collect();
        let changed = next != assignment;
        assignment = next;
        if !changed || iterations >= MAX_LLOYD_ITERATIONS {
            break;
        }
    }
    let centroids = cluster_means(data, &assignment, k, &centroids);
    let wss = data
        .iter()
        .zip(&assignment)
        .map(|(x, &c)| sq_dist(x, &centroids[c]))
        .sum();
    KMeansResult {
        assignment,
        centroids,
        wss,
        iterations,
    }
}

fn validate(data: &[Vec<f64>], k: usize) -> Result<()> {
    if k == 0 || k > data.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={}",
            data.len()
        )));
    }
    let dim = data[0].len();
    if data
        .iter()
        .any(|x| x.len() != dim || x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Dimension(
            "k-means input rows must be finite and equally sized".into(),
        ));
    }
    Ok(())
}

/// Best of `restarts` k-means++ initialized Lloyd runs by WSS.
pub fn kmeans(data: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    validate(data, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(data, plus_plus_seed(data, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.wss < b.wss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// M imputed N × d LC50 matrices sharing dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedPanel {
    pub datasets: Vec<Vec<Vec<f64>>>,
    pub tags: Vec<String>,
}

impl ImputedPanel {
    pub fn new(datasets: Vec<Vec<Vec<f64>>>, tags: Vec<String>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Config("imputed panel is empty".into()));
        }
        if tags.len() != datasets.len() {
            return Err(Error::Dimension("one tag per imputed dataset".into()));
        }
        let n = datasets[0].len();
        let d = datasets[0].first().map_or(0, Vec::len);
        for (m, ds) in datasets.iter().enumerate() {
            if ds.len() != n || ds.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(format!(
                    "dataset {} ({}) has a different shape",
                    m, tags[m]
                )));
            }
            if ds.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "dataset {} ({}) has non-finite entries",
                    m, tags[m]
                )));
            }
        }
        Ok(Self { datasets, tags })
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

/// WSS per (dataset, k) plus the across-dataset mean curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssProfile {
    pub k_values: Vec<usize>,
    /// `per_dataset[m][col]` is the WSS of dataset m at `k_values[col]`.
    pub per_dataset: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    pub warnings: Vec<String>,
}

fn derive_seed(seed: u64, dataset: usize, k: usize) -> u64 {
    // splitmix-style mixing keeps per-cell streams independent of evaluation order
    let mut z = seed
        ^ (dataset as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (k as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Point farthest from its nearest centroid.
fn farthest_point(data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<f64> {
    data.iter()
        .map(|x| (x, nearest(x, centroids).1))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| x.clone())
        .unwrap_or_default()
}

/// WSS elbow profile. Values of k are processed in ascending order regardless of
/// the order given; each k also tries a warm start from the previous k's solution
/// plus the farthest point, which keeps the curve non-increasing.
pub fn wss_profile(
    panel: &ImputedPanel,
    k_values: &[usize],
    restarts: usize,
    seed: u64,
) -> Result<WssProfile> {
    let mut ks: Vec<usize> = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::Config("empty k range".into()));
    }

    let rows: Vec<Result<Vec<(usize, f64)>>> = panel
        .datasets
        .par_iter()
        .enumerate()
        .map(|(m, data)| {
            let mut out = Vec::with_capacity(ks.len());
            let mut previous: Option<KMeansResult> = None;
            for &k in &ks {
                let mut best = kmeans(data, k, restarts, derive_seed(seed, m, k))?;
                if let Some(prev) = &previous {
                    let mut init = prev.centroids.clone();
                    while init.len() < k {
                        let far = farthest_point(data, &init);
                        init.push(far);
                    }
                    let warm = lloyd(data, init);
                    if warm.wss < best.wss {
                        best = warm;
                    }
                }
                out.push((k, best.wss));
                previous = Some(best);
            }
            Ok(out)
        })
        .collect();

    let mut per_sorted = Vec::with_capacity(panel.len());
    for r in rows {
        per_sorted.push(r?);
    }

    // report columns in the caller's order
    let per_dataset: Vec<Vec<f64>> = per_sorted
        .iter()
        .map(|row| {
            k_values
                .iter()
                .map(|k| row.iter().find(|(kk, _)| kk == k).map(|(_, w)| *w).unwrap())
                .collect()
        })
        .collect();
    let m = per_dataset.len() as f64;
    let average = (0..k_values.len())
        .map(|c| per_dataset.iter().map(|row| row[c]).sum::<f64>() / m)
        .collect();

    let mut warnings = Vec::new();
    for (m, row) in per_sorted.iter().enumerate() {
        for w in row.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + 1e-12) {
                warnings.push(format!(
                    "dataset {m}: WSS increases from k={} ({}) to k={} ({})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
    }

    Ok(WssProfile {
        k_values: k_values.to_vec(),
        per_dataset,
        average,
        warnings,
    })
}

/// Index of the dataset with the lowest WSS at `k`; ties go to the lower index.
pub fn select_dataset(profile: &WssProfile, k: usize) -> Option<usize> {
    let col = profile.k_values.iter().position(|&kk| kk == k)?;
    let mut best: Option<(usize, f64)> = None;
    for (m, row) in profile.per_dataset.iter().enumerate() {
        if best.is_none_or(|(_, w)| row[col] < w) {
            best = Some((m, row[col]));
        }
    }
    best.map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![5.0, 5.0],
            vec![6.0, 5.0],
            vec![5.5, 7.0],
        ]
    }

    #[test]
    fn single_cluster_wss_is_total_ss() {
        let data = grid();
        let r = kmeans(&data, 1, 3, 1).unwrap();
        let n = data.len() as f64;
        let mx = data.iter().map(|x| x[0]).sum::<f64>() / n;
        let my = data.iter().map(|x| x[1]).sum::<f64>() / n;
        let tss: f64 = data
            .iter()
            .map(|x| (x[0] - mx).powi(2) + (x[1] - my).powi(2))
            .sum();
        assert!((r.wss - tss).abs() < 1e-12);
    }

    #[test]
    fn singleton_clusters_have_zero_wss() {
        let data = grid();
        let r = kmeans(&data, data.len(), 5, 9).unwrap();
        assert_eq!(r.wss, 0.0);
    }

    #[test]
    fn reported_wss_matches_recomputation() {
        let data = grid();
        for k in 1..=4 {
            let r = kmeans(&data, k, 4, k as u64).unwrap();
            assert!((r.wss - wss_of(&data, &r.assignment, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_k_is_rejected() {
        assert!(kmeans(&grid(), 0, 1, 0).is_err());
        assert!(kmeans(&grid(), 7, 1, 0).is_err());
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let profile = WssProfile {
            k_values: vec![3],
            per_dataset: vec![vec![2.0], vec![1.0], vec![1.0]],
            average: vec![4.0 / 3.0],
            warnings: vec![],
        };
        assert_eq!(select_dataset(&profile, 3), Some(1));
        assert_eq!(select_dataset(&profile, 4), None);
    }
}
