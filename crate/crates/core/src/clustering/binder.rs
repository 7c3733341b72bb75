//! Posterior similarity matrix and Binder-loss point estimate of the partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PERMUTATIONS: usize = 64;
const MAX_SWEEPS: usize = 100;

/// Symmetric N × N matrix of co-allocation frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_dense(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "similarity buffer must be n × n");
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_valid(&self) -> bool {
        (0..self.n).all(|i| {
            self.get(i, i) == 1.0
                && (0..self.n).all(|j| {
                    let v = self.get(i, j);
                    (0.0..=1.0).contains(&v) && v == self.get(j, i)
                })
        })
    }
}

/// Fraction of draws in which each pair of items shares a label. Labels only need
/// to be comparable within a draw, so the result is invariant to relabeling.
pub fn similarity_matrix<L>(draws: &[&[L]]) -> SimilarityMatrix
where
    L: Copy + Eq + Into<usize> + Sync,
{
    assert!(!draws.is_empty(), "at least one draw is required");
    let n = draws[0].len();
    let chunk = draws
        .len()
        .div_ceil(rayon::current_num_threads().max(1))
        .max(1);
    let counts = draws
        .par_chunks(chunk)
        .map(|part| {
            let mut counts = vec![0u32; n * n];
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for draw in part {
                groups.iter_mut().for_each(Vec::clear);
                for (i, &label) in draw.iter().enumerate() {
                    let l: usize = label.into();
                    if groups.len() <= l {
                        groups.resize_with(l + 1, Vec::new);
                    }
                    groups[l].push(i);
                }
                for g in &groups {
                    for (a, &i) in g.iter().enumerate() {
                        for &j in &g[a + 1..] {
                            counts[i * n + j] += 1;
                        }
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u32; n * n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let total = draws.len() as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = counts[i * n + j] as f64 / total;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    SimilarityMatrix { n, data }
}

/// Binder loss Σ_{i<j} |1[c_i = c_j] − s_ij|.
pub fn binder_loss<L: Copy + Eq>(partition: &[L], sim: &SimilarityMatrix) -> f64 {
    let n = partition.len();
    let mut loss = 0.0;
    for i in 0..n {
        let row = sim.row(i);
        for j in i + 1..n {
            loss += if partition[i] == partition[j] {
                1.0 - row[j]
            } else {
                row[j]
            };
        }
    }
    loss
}

/// Relabels by order of first appearance.
pub fn canonicalize<L: Copy + Eq + std::hash::Hash>(partition: &[L]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    partition
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Working state for greedy allocation: per-cluster member lists.
struct Working<'a> {
    sim: &'a SimilarityMatrix,
    labels: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
}

impl<'a> Working<'a> {
    fn new(sim: &'a SimilarityMatrix) -> Self {
        Self {
            sim,
            labels: vec![None; sim.n()],
            members: Vec::new(),
        }
    }

    fn from_partition(sim: &'a SimilarityMatrix, partition: &[usize]) -> Self {
        let mut w = Self::new(sim);
        for (i, &c) in partition.iter().enumerate() {
            w.assign(i, c);
        }
        w
    }

    fn assign(&mut self, i: usize, c: usize) {
        if self.members.len() <= c {
            self.members.resize_with(c + 1, Vec::new);
        }
        self.members[c].push(i);
        self.labels[i] = Some(c);
    }

    fn remove(&mut self, i: usize) {
        if let Some(c) = self.labels[i].take() {
            self.members[c].retain(|&j| j != i);
        }
    }

    fn occupied(&self) -> usize {
        self.members.iter().filter(|m| !m.is_empty()).count()
    }

    /// Cluster minimizing the change in loss for item i against the currently
    /// allocated items: Σ_{j∈C}(1 − 2 s_ij), with 0 for opening a new cluster.
    fn best_cluster(&self, i: usize, max_k: usize) -> usize {
        let row = self.sim.row(i);
        let mut best: Option<(usize, f64)> = None;
        let mut empty_slot = None;
        for (c, m) in self.members.iter().enumerate() {
            if m.is_empty() {
                empty_slot.get_or_insert(c);
                continue;
            }
            let cost: f64 = m.iter().map(|&j| 1.0 - 2.0 * row[j]).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        if self.occupied() < max_k {
            let new_slot = empty_slot.unwrap_or(self.members.len());
            if best.is_none_or(|(_, b)| 0.0 < b) {
                return new_slot;
            }
        }
        best.map(|(c, _)| c).unwrap_or(0)
    }

    /// Reassigns items one at a time until no move lowers the loss.
    fn sweep(&mut self, max_k: usize) {
        let n = self.sim.n();
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for i in 0..n {
                let old = self.labels[i].expect("fully allocated");
                self.remove(i);
                let new = self.best_cluster(i, max_k);
                self.assign(i, new);
                if new != old {
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn partition(&self) -> Vec<usize> {
        canonicalize(
            &self
                .labels
                .iter()
                .map(|l| l.expect("fully allocated"))
                .collect::<Vec<_>>(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinderEstimate {
    pub partition: Vec<usize>,
    pub loss: f64,
    /// Loss of the best candidate partition among the supplied draws, if any.
    pub best_candidate_loss: Option<f64>,
}

/// Minimizes Binder loss by sequential greedy allocation over `permutations` random
/// item orders followed by reassignment sweeps. The supplied candidate partitions
/// (typically the retained draws) are scored too and the best is also polished; the
/// result is never worse than any candidate.
pub fn binder_partition<L>(
    sim: &SimilarityMatrix,
    candidates: &[&[L]],
    max_k: usize,
    permutations: usize,
    seed: u64,
) -> BinderEstimate
where
    L: Copy + Eq + Into<usize> + Sync + std::hash::Hash,
{
    let n = sim.n();
    if n == 0 {
        return BinderEstimate {
            partition: Vec::new(),
            loss: 0.0,
            best_candidate_loss: None,
        };
    }
    let max_k = max_k.max(1);

    let greedy: Vec<(Vec<usize>, f64)> = (0..permutations.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut w = Working::new(sim);
            for &i in &order {
                let c = w.best_cluster(i, max_k);
                w.assign(i, c);
            }
            w.sweep(max_k);
            let p = w.partition();
            let loss = binder_loss(&p, sim);
            (p, loss)
        })
        .collect();

    let scored: Vec<(usize, f64)> = candidates
        .par_iter()
        .enumerate()
        .map(|(idx, c)| (idx, binder_loss(c, sim)))
        .collect();
    let best_candidate = scored
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut best = greedy
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one permutation");

    if let Some((idx, loss)) = best_candidate {
        let cand = canonicalize(candidates[idx]);
        let k_cand = cand.iter().max().map_or(0, |m| m + 1);
        let mut w = Working::from_partition(sim, &cand);
        w.sweep(max_k.max(k_cand));
        let polished = w.partition();
        let polished_loss = binder_loss(&polished, sim);
        for (p, l) in [(cand, loss), (polished, polished_loss)] {
            if l < best.1 {
                best = (p, l);
            }
        }
    }

    BinderEstimate {
        partition: best.0,
        loss: best.1,
        best_candidate_loss: best_candidate.map(|(_, l)| l),
    }
}

/// Adjusted Rand index between two partitions of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
