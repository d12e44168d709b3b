//! Walktrap community detection.
//!
//! Communities are merged agglomeratively by the smallest increase in the mean squared
//! random-walk distance, following Pons & Latapy. The walk runs on absolute edge weights
//! with one self-loop per node whose weight is the node's mean incident weight. The
//! returned partition is the level of the merge tree with the highest modularity.

use std::collections::{BTreeMap, BTreeSet};

use crate::netfilter::Network;

pub const DEFAULT_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WalktrapError {
    #[error("network is disconnected")]
    DisconnectedNetwork,
    #[error("node {0} has zero strength")]
    IsolatedNode(usize),
    #[error("random walk length must be at least 1")]
    ZeroSteps,
    #[error("network has no nodes")]
    Empty,
}

/// Community id per item, contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_communities: usize,
}

impl Partition {
    /// Compacts arbitrary ids to `0..k`, keeping their relative order.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let distinct: BTreeSet<usize> = labels.iter().copied().collect();
        let map: BTreeMap<usize, usize> = distinct
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        Self {
            labels: labels.iter().map(|l| map[l]).collect(),
            n_communities: distinct.len(),
        }
    }

    /// Relabels so that communities are numbered by first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = BTreeMap::new();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Self {
            labels,
            n_communities: self.n_communities,
        }
    }

    pub fn single(p: usize) -> Self {
        Self::from_labels(vec![0; p])
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_communities(&self) -> usize {
        self.n_communities
    }

    pub fn members(&self, community: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == community)
            .collect()
    }

    /// True when both partitions group items identically.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        self.canonical().labels == other.canonical().labels
    }
}

/// Weighted modularity of `partition` on the absolute weights of `net`.
pub fn modularity(net: &Network, partition: &Partition) -> f64 {
    let w = net.weights().abs();
    let strength: Vec<f64> = (0..w.nrows()).map(|i| w.row(i).sum()).collect();
    let two_m: f64 = strength.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let k = partition.n_communities();
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    for i in 0..w.nrows() {
        let ci = partition.labels()[i];
        total[ci] += strength[i];
        for j in 0..w.ncols() {
            if partition.labels()[j] == ci {
                internal[ci] += w[(i, j)];
            }
        }
    }
    (0..k)
        .map(|c| internal[c] / two_m - (total[c] / two_m).powi(2))
        .sum()
}

struct Community {
    size: usize,
    prob: Vec<f64>,
    members: Vec<usize>,
}

/// Walktrap partition of `net` using random walks of length `steps`.
pub fn walktrap(net: &Network, steps: usize) -> Result<Partition, WalktrapError> {
    let p = net.n_nodes();
    if p == 0 {
        return Err(WalktrapError::Empty);
    }
    if steps == 0 {
        return Err(WalktrapError::ZeroSteps);
    }
    if p == 1 {
        return Ok(Partition::single(1));
    }
    let abs = net.weights().abs();
    let mut degree = vec![0usize; p];
    for &(u, v) in net.edges() {
        if abs[(u, v)] > 0.0 {
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    let strength: Vec<f64> = (0..p).map(|i| abs.row(i).sum()).collect();
    if let Some(i) = (0..p).find(|&i| strength[i] <= 0.0) {
        return Err(WalktrapError::IsolatedNode(i));
    }
    if !net.is_connected() {
        return Err(WalktrapError::DisconnectedNetwork);
    }

    let mut walk = abs.clone();
    for i in 0..p {
        walk[(i, i)] = strength[i] / degree[i] as f64;
    }
    let d: Vec<f64> = (0..p).map(|i| walk.row(i).sum()).collect();
    let mut transition = walk.clone();
    for i in 0..p {
        transition.row_mut(i).scale_mut(1.0 / d[i]);
    }
    let mut pt = transition.clone();
    for _ in 1..steps {
        pt = &pt * &transition;
    }

    let mut communities: Vec<Option<Community>> = (0..p)
        .map(|i| {
            Some(Community {
                size: 1,
                prob: pt.row(i).iter().copied().collect(),
                members: vec![i],
            })
        })
        .collect();

    let delta_sigma = |a: &Community, b: &Community| -> f64 {
        let dist: f64 = a
            .prob
            .iter()
            .zip(&b.prob)
            .zip(&d)
            .map(|((x, y), dk)| (x - y).powi(2) / dk)
            .sum();
        let (sa, sb) = (a.size as f64, b.size as f64);
        sa * sb / (sa + sb) * dist / p as f64
    };

    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(u, v) in net.edges() {
        if abs[(u, v)] > 0.0 {
            neighbours[u].insert(v);
            neighbours[v].insert(u);
            let ds = delta_sigma(
                communities[u].as_ref().unwrap(),
                communities[v].as_ref().unwrap(),
            );
            pairs.insert((u, v), ds);
        }
    }

    // modularity bookkeeping on the loop-free absolute graph
    let two_m: f64 = strength.iter().sum();
    let mut internal: Vec<f64> = vec![0.0; p];
    let mut total: Vec<f64> = strength.clone();
    let mut q: f64 = total.iter().map(|t| -(t / two_m).powi(2)).sum();
    let mut best_q = q;
    let mut best_level = 0;
    let mut merges: Vec<(usize, usize)> = Vec::with_capacity(p - 1);

    for level in 1..p {
        let Some((&(a, b), _)) = pairs
            .iter()
            .min_by(|x, y| x.1.total_cmp(y.1).then(x.0.cmp(y.0)))
        else {
            break;
        };
        let ca = communities[a].take().unwrap();
        let cb = communities[b].take().unwrap();
        let new_id = communities.len();
        let size = ca.size + cb.size;
        let prob: Vec<f64> = ca
            .prob
            .iter()
            .zip(&cb.prob)
            .map(|(x, y)| (ca.size as f64 * x + cb.size as f64 * y) / size as f64)
            .collect();
        let between: f64 = ca
            .members
            .iter()
            .flat_map(|&i| cb.members.iter().map(move |&j| (i, j)))
            .map(|(i, j)| abs[(i, j)])
            .sum();
        let new_internal = internal[a] + internal[b] + 2.0 * between;
        let new_total = total[a] + total[b];
        q += new_internal / two_m - (new_total / two_m).powi(2)
            - (internal[a] / two_m - (total[a] / two_m).powi(2))
            - (internal[b] / two_m - (total[b] / two_m).powi(2));
        internal.push(new_internal);
        total.push(new_total);

        let mut members = ca.members;
        members.extend(cb.members);
        members.sort_unstable();
        communities.push(Some(Community {
            size,
            prob,
            members,
        }));
        merges.push((a, b));

        let mut adjacent: BTreeSet<usize> = neighbours[a].union(&neighbours[b]).copied().collect();
        adjacent.remove(&a);
        adjacent.remove(&b);
        for &c in &neighbours[a] {
            pairs.remove(&(a.min(c), a.max(c)));
        }
        for &c in &neighbours[b] {
            pairs.remove(&(b.min(c), b.max(c)));
        }
        for &c in &adjacent {
            neighbours[c].remove(&a);
            neighbours[c].remove(&b);
            neighbours[c].insert(new_id);
            let ds = delta_sigma(
                communities[c].as_ref().unwrap(),
                communities[new_id].as_ref().unwrap(),
            );
            pairs.insert((c, new_id), ds);
        }
        neighbours.push(adjacent);
        neighbours[a].clear();
        neighbours[b].clear();

        if q >= best_q - 1e-12 * best_q.abs().max(1.0) {
            best_q = q.max(best_q);
            best_level = level;
        }
    }

    // replay merges up to the chosen level
    let mut owner: Vec<usize> = (0..p).collect();
    let mut groups: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
    for (step, &(a, b)) in merges.iter().take(best_level).enumerate() {
        let mut merged = std::mem::take(&mut groups[a]);
        merged.extend(std::mem::take(&mut groups[b]));
        for &i in &merged {
            owner[i] = p + step;
        }
        groups.push(merged);
    }
    Ok(Partition::from_labels(owner).canonical())
}
