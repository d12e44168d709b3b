//! Pearson correlation over a derivative design and TMFG network filtering.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("column {index} has zero variance")]
    ZeroVarianceColumn { index: usize },
    #[error("need at least 3 observations, got {0}")]
    TooFewObservations(usize),
    #[error("TMFG needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("matrix is not square and symmetric")]
    NotSymmetric,
    #[error("non-finite similarity at ({0}, {1})")]
    NonFinite(usize, usize),
}

type Result<T> = std::result::Result<T, NetError>;

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix(DMatrix<f64>);

impl CorrMatrix {
    /// Wraps an existing similarity matrix after checking symmetry and finiteness.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(NetError::NotSymmetric);
        }
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !m[(i, j)].is_finite() {
                    return Err(NetError::NonFinite(i, j));
                }
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return Err(NetError::NotSymmetric);
                }
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Element-wise absolute values.
    pub fn abs(&self) -> DMatrix<f64> {
        self.0.abs()
    }
}

/// Pearson correlations between the columns of an `M x p` design.
pub fn correlation_matrix(design: &DMatrix<f64>) -> Result<CorrMatrix> {
    let (m, p) = design.shape();
    if m < 3 {
        return Err(NetError::TooFewObservations(m));
    }
    let mut centred = design.clone();
    for j in 0..p {
        let mut col = centred.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        let scale = col.amax().max(mean.abs());
        if !(norm > 0.0) || norm <= scale * 1e-12 * (m as f64).sqrt() {
            return Err(NetError::ZeroVarianceColumn { index: j });
        }
    }
    let ss: Vec<f64> = (0..p)
        .map(|j| centred.column(j).dot(&centred.column(j)))
        .collect();
    let mut r = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..i {
            let c = centred.column(i).dot(&centred.column(j));
            let v = (c / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(CorrMatrix(r))
}

/// Weighted undirected graph over `p` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    weights: DMatrix<f64>,
    edges: Vec<(usize, usize)>,
}

impl Network {
    /// Builds a network from a weighted edge list (`u != v`). Later duplicates overwrite.
    pub fn from_edges(p: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut weights = DMatrix::zeros(p, p);
        let mut set = BTreeSet::new();
        for &(u, v, w) in edges {
            assert!(u != v && u < p && v < p, "invalid edge ({u}, {v})");
            weights[(u, v)] = w;
            weights[(v, u)] = w;
            set.insert((u.min(v), u.max(v)));
        }
        Self {
            weights,
            edges: set.into_iter().collect(),
        }
    }

    /// Every non-zero off-diagonal entry becomes an edge.
    pub fn from_dense(weights: &DMatrix<f64>) -> Self {
        let p = weights.nrows();
        let mut edges = Vec::new();
        for i in 0..p {
            for j in i + 1..p {
                if weights[(i, j)] != 0.0 {
                    edges.push((i, j, weights[(i, j)]));
                }
            }
        }
        Self::from_edges(p, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[(u, v)]
    }

    pub fn neighbours(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == u {
                Some(b)
            } else if b == u {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn is_connected(&self) -> bool {
        let p = self.n_nodes();
        if p == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); p];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; p];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Debug dump as CSV `u,v,weight`.
    pub fn write_edge_list(&self, path: &Path) -> std::io::Result<()> {
        let mut out = Vec::new();
        writeln!(out, "u,v,weight")?;
        for &(u, v) in &self.edges {
            writeln!(out, "{u},{v},{:?}", self.weights[(u, v)])?;
        }
        std::fs::write(path, out)
    }
}

/// TMFG output: the filtered network and the order vertices were added in.
#[derive(Debug, Clone, PartialEq)]
pub struct Tmfg {
    pub network: Network,
    /// Seed clique followed by inserted vertices.
    pub insertion_order: Vec<usize>,
}

/// Triangulated Maximally Filtered Graph.
///
/// Seeds with the four strongest vertices (row sums of `|R|`), then repeatedly inserts
/// the outside vertex with the largest gain into the face it gains most from. Gain is
/// the sum of absolute similarities to the face's three corners. Ties go to the lowest
/// vertex index, then the lowest face id. Retained edges carry the signed similarity.
pub fn tmfg(similarity: &CorrMatrix) -> Result<Tmfg> {
    let p = similarity.dim();
    if p < 3 {
        return Err(NetError::TooFewNodes(p));
    }
    let abs = similarity.abs();
    let signed = |u: usize, v: usize| (u, v, similarity.get(u, v));

    if p == 3 {
        return Ok(Tmfg {
            network: Network::from_edges(3, &[signed(0, 1), signed(0, 2), signed(1, 2)]),
            insertion_order: vec![0, 1, 2],
        });
    }

    let strength: Vec<f64> = (0..p)
        .map(|i| (0..p).filter(|&j| j != i).map(|j| abs[(i, j)]).sum())
        .collect();
    let mut by_strength: Vec<usize> = (0..p).collect();
    // stable sort keeps lower indices first among equal strengths
    by_strength.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]));
    let mut seed = by_strength[..4].to_vec();
    seed.sort_unstable();

    let mut edges = Vec::with_capacity(3 * (p - 2));
    for i in 0..4 {
        for j in i + 1..4 {
            edges.push(signed(seed[i], seed[j]));
        }
    }
    let (a, b, c, d) = (seed[0], seed[1], seed[2], seed[3]);
    let mut faces: Vec<[usize; 3]> = vec![[a, b, c], [a, b, d], [a, c, d], [b, c, d]];
    let mut inserted = vec![false; p];
    for &s in &seed {
        inserted[s] = true;
    }
    let mut insertion_order = seed.clone();

    let gain = |v: usize, f: &[usize; 3]| abs[(v, f[0])] + abs[(v, f[1])] + abs[(v, f[2])];

    // best (gain, face) per outside vertex, refreshed when its face is consumed
    let best_face = |v: usize, faces: &[[usize; 3]]| -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (fid, f) in faces.iter().enumerate() {
            let g = gain(v, f);
            if g > best.0 {
                best = (g, fid);
            }
        }
        best
    };
    let mut cache: Vec<Option<(f64, usize)>> = (0..p)
        .map(|v| (!inserted[v]).then(|| best_face(v, &faces)))
        .collect();

    for _ in 4..p {
        let mut choice: Option<(usize, f64, usize)> = None;
        for v in 0..p {
            if let Some((g, fid)) = cache[v] {
                if choice.is_none_or(|(_, best, _)| g > best) {
                    choice = Some((v, g, fid));
                }
            }
        }
        let (v, _, fid) = choice.expect("an outside vertex remains");
        let [x, y, z] = faces[fid];
        edges.push(signed(v, x));
        edges.push(signed(v, y));
        edges.push(signed(v, z));
        inserted[v] = true;
        cache[v] = None;
        insertion_order.push(v);

        faces[fid] = [x, y, v];
        let new_ids = [fid, faces.len(), faces.len() + 1];
        faces.push([x, z, v]);
        faces.push([y, z, v]);

        for u in 0..p {
            let Some((g, f)) = cache[u] else { continue };
            if f == fid {
                cache[u] = Some(best_face(u, &faces));
            } else {
                let mut best = (g, f);
                for &nid in &new_ids {
                    let ng = gain(u, &faces[nid]);
                    if ng > best.0 || (ng == best.0 && nid < best.1) {
                        best = (ng, nid);
                    }
                }
                cache[u] = Some(best);
            }
        }
    }

    Ok(Tmfg {
        network: Network::from_edges(p, &edges),
        insertion_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corr(p: usize, seed: u64) -> CorrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = DMatrix::from_fn(3 * p + 5, p, |_, _| rng.gen_range(-1.0..1.0));
        correlation_matrix(&design).unwrap()
    }

    #[test]
    fn identical_and_negated_columns() {
        let col: Vec<f64> = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let design = DMatrix::from_fn(5, 3, |i, j| match j {
            0 | 1 => col[i],
            _ => -col[i],
        });
        let r = correlation_matrix(&design).unwrap();
        assert_eq!(r.get(0, 1), 1.0);
        assert_eq!(r.get(0, 2), -1.0);
        assert_eq!(r.get(2, 2), 1.0);
    }

    #[test]
    fn zero_variance_column() {
        let design = DMatrix::from_fn(6, 3, |i, j| if j == 1 { 2.5 } else { (i * (j + 1)) as f64 });
        assert_eq!(
            correlation_matrix(&design),
            Err(NetError::ZeroVarianceColumn { index: 1 })
        );
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let design = DMatrix::from_fn(10_000, 4, |_, _| StandardNormal.sample(&mut rng));
        let r = correlation_matrix(&design).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(r.get(i, j).abs() < 0.05);
                }
            }
        }
    }

    #[test]
    fn correlation_is_symmetric_and_bounded() {
        let r = random_corr(12, 3);
        for i in 0..12 {
            assert_eq!(r.get(i, i), 1.0);
            for j in 0..12 {
                assert_eq!(r.get(i, j), r.get(j, i));
                assert!(r.get(i, j).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn four_nodes_is_k4() {
        let t = tmfg(&random_corr(4, 1)).unwrap();
        assert_eq!(t.network.edges().len(), 6);
    }

    #[test]
    fn three_nodes_is_triangle() {
        let t = tmfg(&random_corr(3, 1)).unwrap();
        assert_eq!(t.network.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(matches!(
            tmfg(&CorrMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap()),
            Err(NetError::TooFewNodes(2))
        ));
    }

    #[test]
    fn five_nodes_nine_edges_degree_three_insert() {
        let t = tmfg(&random_corr(5, 9)).unwrap();
        assert_eq!(t.network.edges().len(), 9);
        let last = t.insertion_order[4];
        assert_eq!(t.network.neighbours(last).count(), 3);
    }

    #[test]
    fn edges_keep_sign() {
        let r = random_corr(10, 5);
        let t = tmfg(&r).unwrap();
        for &(u, v) in t.network.edges() {
            assert_eq!(t.network.weight(u, v), r.get(u, v));
        }
    }

    #[test]
    fn seed_is_strongest_four() {
        // node 4 and 5 are only weakly tied to anything
        let p = 6;
        let m = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i >= 4 || j >= 4 {
                0.1
            } else {
                0.8
            }
        });
        let t = tmfg(&CorrMatrix::from_matrix(m).unwrap()).unwrap();
        assert_eq!(&t.insertion_order[..4], &[0, 1, 2, 3]);
    }

    #[test]
    fn edge_list_dump() {
        let dir = tempfile::tempdir().unwrap();
        let t = tmfg(&random_corr(5, 2)).unwrap();
        let path = dir.path().join("edges.csv");
        t.network.write_edge_list(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("u,v,weight\n"));
    }
}
