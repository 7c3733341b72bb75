//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use mrdmix::clustering::{similarity_matrix, SimilarityMatrix};
use mrdmix::sampler::draw::std_normal;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// All set partitions of 0..n as restricted growth strings.
pub fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for label in 0..=max + 1 {
            prefix.push(label);
            extend(prefix, n, max.max(label), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        extend(&mut vec![0], n, 0, &mut out);
    }
    out
}

pub fn random_similarity(rng: &mut ChaCha8Rng, n: usize) -> SimilarityMatrix {
    let base: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let draws: Vec<Vec<u8>> = (0..25)
        .map(|_| {
            base.iter()
                .map(|&b| {
                    if rng.random::<f64>() < 0.3 {
                        rng.random_range(0..4)
                    } else {
                        b
                    }
                })
                .collect()
        })
        .collect();
    let refs: Vec<&[u8]> = draws.iter().map(Vec::as_slice).collect();
    similarity_matrix(&refs)
}

pub fn blobs(rng: &mut ChaCha8Rng, per: usize, sigma: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let centers = [
        [0.0, 0.0, 0.0],
        [10.0 * sigma, 0.0, 0.0],
        [0.0, 10.0 * sigma, 0.0],
    ];
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            data.push(center.iter().map(|m| m + sigma * std_normal(rng)).collect());
            truth.push(c);
        }
    }
    (data, truth)
}

pub fn wss_of_assignment(data: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = data[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.iter().zip(labels) {
        counts[l] += 1;
        for j in 0..d {
            sums[l][j] += x[j];
        }
    }
    data.iter()
        .zip(labels)
        .map(|(x, &l)| {
            (0..d)
                .map(|j| (x[j] - sums[l][j] / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}
