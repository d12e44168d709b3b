#![allow(dead_code)]

use std::collections::BTreeSet;

use dynega_landscape::netfilter::{correlation_matrix, CorrMatrix, Network};
use dynega_landscape::walktrap::Partition;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustworkx_core::petgraph::graph::UnGraph;
use rustworkx_core::planar::is_planar;

pub fn random_corr(p: usize, seed: u64) -> CorrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 3 * p + 10;
    let shared: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let design = DMatrix::from_fn(m, p, |i, j| {
        shared[i] * (j % 3) as f64 * 0.3 + rng.gen_range(-1.0..1.0)
    });
    correlation_matrix(&design).unwrap()
}

/// Straightforward greedy construction: every step rescans all (vertex, face) pairs.
pub fn oracle(r: &DMatrix<f64>) -> (BTreeSet<(usize, usize)>, Vec<usize>) {
    let p = r.nrows();
    let w = |i: usize, j: usize| r[(i, j)].abs();
    let mut strength: Vec<(f64, usize)> = (0..p)
        .map(|i| ((0..p).filter(|&j| j != i).map(|j| w(i, j)).sum(), i))
        .collect();
    strength.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut clique: Vec<usize> = strength[..4].iter().map(|s| s.1).collect();
    clique.sort();

    let mut edges = BTreeSet::new();
    let add = |a: usize, b: usize, e: &mut BTreeSet<(usize, usize)>| {
        e.insert((a.min(b), a.max(b)));
    };
    for i in 0..4 {
        for j in i + 1..4 {
            add(clique[i], clique[j], &mut edges);
        }
    }
    let [a, b, c, d] = [clique[0], clique[1], clique[2], clique[3]];
    let mut faces = vec![(a, b, c), (a, b, d), (a, c, d), (b, c, d)];
    let mut order = clique.clone();
    let mut outside: Vec<usize> = (0..p).filter(|v| !clique.contains(v)).collect();

    while !outside.is_empty() {
        let mut best: Option<(f64, usize, usize)> = None;
        for &v in &outside {
            for (fi, &(x, y, z)) in faces.iter().enumerate() {
                let g = w(v, x) + w(v, y) + w(v, z);
                let better = match best {
                    None => true,
                    Some((bg, _, _)) => g > bg,
                };
                if better {
                    best = Some((g, v, fi));
                }
            }
        }
        let (_, v, fi) = best.unwrap();
        let (x, y, z) = faces[fi];
        add(v, x, &mut edges);
        add(v, y, &mut edges);
        add(v, z, &mut edges);
        faces[fi] = (x, y, v);
        faces.push((x, z, v));
        faces.push((y, z, v));
        order.push(v);
        outside.retain(|&u| u != v);
    }
    (edges, order)
}

pub fn edge_set(net: &Network) -> BTreeSet<(usize, usize)> {
    net.edges().iter().copied().collect()
}

pub fn planar(net: &Network) -> bool {
    let g: UnGraph<(), ()> =
        UnGraph::from_edges(net.edges().iter().map(|&(u, v)| (u as u32, v as u32)));
    is_planar(&g)
}

/// Newman modularity from its pairwise definition.
pub fn q_pairwise(w: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let p = w.nrows();
    let k: Vec<f64> = (0..p).map(|i| (0..p).map(|j| w[(i, j)].abs()).sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..p {
        for j in 0..p {
            if labels[i] == labels[j] {
                q += w[(i, j)].abs() - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

pub fn two_cliques() -> DMatrix<f64> {
    let mut w = DMatrix::zeros(10, 10);
    for i in 0..10 {
        for j in 0..10 {
            if i != j && (i < 5) == (j < 5) {
                w[(i, j)] = 1.0;
            }
        }
    }
    w[(4, 5)] = 0.01;
    w[(5, 4)] = 0.01;
    w
}

/// Best split over all 2^(p-1) - 1 bipartitions.
pub fn best_bipartition(w: &DMatrix<f64>) -> (Vec<usize>, f64) {
    let p = w.nrows();
    let mut best = (vec![], f64::NEG_INFINITY);
    for mask in 1u32..(1 << (p - 1)) {
        let labels: Vec<usize> = (0..p).map(|i| ((mask >> i) & 1) as usize).collect();
        let q = q_pairwise(w, &labels);
        if q > best.1 {
            best = (labels, q);
        }
    }
    best
}

pub fn planted(seed: u64) -> (DMatrix<f64>, Partition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..15).map(|i| i / 5).collect();
    let mut w = DMatrix::zeros(15, 15);
    for i in 0..15 {
        for j in 0..i {
            let base = if labels[i] == labels[j] { 0.9 } else { 0.05 };
            let v = base + rng.gen_range(-0.04..0.04);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    (w, Partition::from_labels(labels))
}

