//! Von Neumann entropy, the Total Entropy Fit Index (TEFI), and normalized mutual
//! information (NMI).

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::walktrap::Partition;

/// Eigenvalues of a density matrix below this are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("matrix is not symmetric")]
    NonSymmetric,
    #[error("matrix trace is not positive")]
    NonPositiveTrace,
    #[error("partition covers {partition} items but the matrix has {matrix}")]
    SizeMismatch { partition: usize, matrix: usize },
    #[error("community {0} is empty")]
    EmptyCommunity(usize),
    #[error("partitions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

type Result<T> = std::result::Result<T, FitError>;

/// Entropy (nats) of `R / tr(R)` from its eigenvalues, with `0 ln 0 = 0`.
pub fn von_neumann_entropy(r: &DMatrix<f64>) -> Result<f64> {
    if !r.is_square() {
        return Err(FitError::NonSymmetric);
    }
    let n = r.nrows();
    let scale = r.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (r[(i, j)] - r[(j, i)]).abs() > 1e-10 * scale {
                return Err(FitError::NonSymmetric);
            }
        }
    }
    let trace = r.trace();
    if !(trace > 0.0) {
        return Err(FitError::NonPositiveTrace);
    }
    if n == 1 {
        return Ok(0.0);
    }
    let rho = r / trace;
    let eig = rho.symmetric_eigenvalues();
    Ok(eig
        .iter()
        .filter(|&&l| l > EIGEN_CLAMP)
        .map(|&l| -l * l.ln())
        .sum())
}

/// Entropies behind one TEFI value.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EntropyReport {
    pub total_entropy: f64,
    pub per_dimension_entropy: Vec<f64>,
    pub tefi: f64,
}

impl EntropyReport {
    pub fn from_entropies(total_entropy: f64, per_dimension_entropy: Vec<f64>) -> Self {
        let tefi = tefi_from_entropies(total_entropy, &per_dimension_entropy);
        Self {
            total_entropy,
            per_dimension_entropy,
            tefi,
        }
    }

    pub fn n_dimensions(&self) -> usize {
        self.per_dimension_entropy.len()
    }
}

/// `[mean(S_k) - S] + [(S - sum(S_k)) * sqrt(N_F)]`.
pub fn tefi_from_entropies(total: f64, per_dimension: &[f64]) -> f64 {
    let nf = per_dimension.len() as f64;
    let sum: f64 = per_dimension.iter().sum();
    (sum / nf - total) + (total - sum) * nf.sqrt()
}

/// TEFI of `partition` on the absolute values of `r`. Lower is better.
pub fn tefi_report(r: &DMatrix<f64>, partition: &Partition) -> Result<EntropyReport> {
    if partition.len() != r.nrows() {
        return Err(FitError::SizeMismatch {
            partition: partition.len(),
            matrix: r.nrows(),
        });
    }
    let abs = r.abs();
    let total = von_neumann_entropy(&abs)?;
    let mut per = Vec::with_capacity(partition.n_communities());
    for c in 0..partition.n_communities() {
        let members = partition.members(c);
        if members.is_empty() {
            return Err(FitError::EmptyCommunity(c));
        }
        let sub = abs.select_rows(&members).select_columns(&members);
        per.push(von_neumann_entropy(&sub)?);
    }
    Ok(EntropyReport::from_entropies(total, per))
}

pub fn tefi(r: &DMatrix<f64>, partition: &Partition) -> Result<f64> {
    tefi_report(r, partition).map(|rep| rep.tefi)
}

/// Normalized mutual information in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct NmiScore(f64);

impl NmiScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn label_entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of both label entropies.
///
/// Two single-cluster partitions score 1; a single-cluster partition against a
/// non-trivial one scores 0.
pub fn nmi(a: &Partition, b: &Partition) -> Result<NmiScore> {
    if a.len() != b.len() {
        return Err(FitError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let (ka, kb) = (a.n_communities(), b.n_communities());
    if ka <= 1 && kb <= 1 {
        return Ok(NmiScore(1.0));
    }
    if ka <= 1 || kb <= 1 {
        return Ok(NmiScore(0.0));
    }
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        *joint.entry((x, y)).or_default() += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let ha = label_entropy(ca.iter().copied(), n);
    let hb = label_entropy(cb.iter().copied(), n);
    // summed in value order so that swapping the arguments gives the same bits
    let mut terms: Vec<f64> = joint
        .into_iter()
        .map(|((x, y), c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .collect();
    terms.sort_unstable_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    let value = (2.0 * mi / (ha + hb)).clamp(0.0, 1.0);
    Ok(NmiScore(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_entropy() {
        let s = von_neumann_entropy(&DMatrix::identity(2, 2)).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-12);
        for p in [3, 5, 10] {
            let s = von_neumann_entropy(&DMatrix::identity(p, p)).unwrap();
            assert!((s - (p as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_is_pure() {
        let s = von_neumann_entropy(&DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn entropy_errors() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert_eq!(von_neumann_entropy(&m), Err(FitError::NonSymmetric));
        assert_eq!(
            von_neumann_entropy(&DMatrix::zeros(3, 3)),
            Err(FitError::NonPositiveTrace)
        );
    }

    /// `-tr(rho ln rho)` through the matrix logarithm built from an eigenbasis.
    fn entropy_via_matrix_log(r: &DMatrix<f64>) -> f64 {
        let rho = r / r.trace();
        let eig = rho.clone().symmetric_eigen();
        let logs = eig
            .eigenvalues
            .map(|l| if l > EIGEN_CLAMP { l.ln() } else { 0.0 });
        let log_rho = &eig.eigenvectors
            * DMatrix::from_diagonal(&logs)
            * eig.eigenvectors.transpose();
        -(rho * log_rho).trace()
    }

    #[test]
    fn eigen_sum_matches_matrix_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = rng.gen_range(2..12);
            let a = DMatrix::from_fn(p, p + 3, |_, _| rng.gen_range(-1.0..1.0));
            let psd = &a * a.transpose();
            let s1 = von_neumann_entropy(&psd).unwrap();
            let s2 = entropy_via_matrix_log(&psd);
            assert!((s1 - s2).abs() < 1e-10);
            assert!(s1 >= 0.0 && s1 <= (p as f64).ln() + 1e-12);
        }
    }

    fn block_corr(sizes: &[usize], within: f64, between: f64) -> (DMatrix<f64>, Partition) {
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
            .collect();
        let p = labels.len();
        let r = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if labels[i] == labels[j] {
                within
            } else {
                between
            }
        });
        (r, Partition::from_labels(labels))
    }

    #[test]
    fn one_community_tefi_is_zero() {
        let (r, _) = block_corr(&[5, 5], 0.8, 0.1);
        let t = tefi(&r, &Partition::single(10)).unwrap();
        assert!(t.abs() < 1e-12);
    }

    #[test]
    fn two_block_values_match_oracle() {
        // numpy eigvalsh reference
        let (r, truth) = block_corr(&[5, 5], 0.8, 0.0);
        let good = tefi(&r, &truth).unwrap();
        assert!((good - -0.6483587494176559).abs() < 1e-12, "{good}");
        let swapped = Partition::from_labels(vec![0, 0, 0, 0, 1, 0, 1, 1, 1, 1]);
        let bad = tefi(&r, &swapped).unwrap();
        assert!((bad - -1.2132077770302057).abs() < 1e-12, "{bad}");
    }

    #[test]
    fn fixed_count_tefi_falls_as_within_entropy_rises() {
        let (r, truth) = block_corr(&[5, 5], 0.8, 0.0);
        let base = tefi_report(&r, &truth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut labels = truth.labels().to_vec();
            for i in (1..labels.len()).rev() {
                labels.swap(i, rng.gen_range(0..=i));
            }
            let other = tefi_report(&r, &Partition::from_labels(labels)).unwrap();
            let d_sum: f64 = other.per_dimension_entropy.iter().sum::<f64>()
                - base.per_dimension_entropy.iter().sum::<f64>();
            let expected = (0.5 - 2f64.sqrt()) * d_sum;
            assert!((other.tefi - base.tefi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn report_is_recomputable() {
        let (r, truth) = block_corr(&[4, 3, 5], 0.6, 0.2);
        let rep = tefi_report(&r, &truth).unwrap();
        assert_eq!(rep.n_dimensions(), 3);
        let again = tefi_from_entropies(rep.total_entropy, &rep.per_dimension_entropy);
        assert!((again - rep.tefi).abs() < 1e-12);
        assert!(rep.per_dimension_entropy.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn singleton_contributes_zero() {
        let (r, _) = block_corr(&[3, 1], 0.5, 0.1);
        let rep = tefi_report(&r, &Partition::from_labels(vec![0, 0, 0, 1])).unwrap();
        assert_eq!(rep.per_dimension_entropy[1], 0.0);
    }

    #[test]
    fn tefi_size_mismatch() {
        let (r, _) = block_corr(&[3, 3], 0.5, 0.1);
        assert!(matches!(
            tefi(&r, &Partition::single(4)),
            Err(FitError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn nmi_examples() {
        let a = Partition::from_labels(vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(nmi(&a, &a).unwrap().value(), 1.0);
        let relabelled = Partition::from_labels(vec![2, 2, 0, 0, 1, 1]);
        assert!((nmi(&a, &relabelled).unwrap().value() - 1.0).abs() < 1e-15);
        let x = Partition::from_labels(vec![0, 0, 1, 1]);
        let y = Partition::from_labels(vec![0, 1, 0, 1]);
        assert_eq!(nmi(&x, &y).unwrap().value(), 0.0);
    }

    #[test]
    fn nmi_trivial_cases() {
        let one = Partition::single(4);
        let two = Partition::from_labels(vec![0, 0, 1, 1]);
        assert_eq!(nmi(&one, &one).unwrap().value(), 1.0);
        assert_eq!(nmi(&one, &two).unwrap().value(), 0.0);
        assert_eq!(nmi(&two, &one).unwrap().value(), 0.0);
        assert_eq!(
            nmi(&one, &Partition::single(5)),
            Err(FitError::LengthMismatch(4, 5))
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn partition(n: usize) -> impl Strategy<Value = Partition> {
            proptest::collection::vec(0usize..5, n).prop_map(Partition::from_labels)
        }

        proptest! {
            #[test]
            fn nmi_symmetric_and_bounded((a, b) in (2usize..30).prop_flat_map(|n| (partition(n), partition(n)))) {
                let ab = nmi(&a, &b).unwrap().value();
                let ba = nmi(&b, &a).unwrap().value();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((nmi(&a, &a).unwrap().value() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn tefi_relabel_and_reorder_invariant(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = 9;
                let a = DMatrix::from_fn(p, p + 4, |_, _| rng.gen_range(-1.0..1.0));
                let cov = &a * a.transpose();
                let d = cov.diagonal().map(|v: f64| 1.0 / v.sqrt());
                let r = DMatrix::from_diagonal(&d) * cov * DMatrix::from_diagonal(&d);
                let labels: Vec<usize> = (0..p).map(|_| rng.gen_range(0..3)).collect();
                let part = Partition::from_labels(labels.clone());
                let base = tefi(&r, &part).unwrap();
                let renamed = Partition::from_labels(labels.iter().map(|l| 10 - l).collect());
                prop_assert!((tefi(&r, &renamed).unwrap() - base).abs() < 1e-10);
                let mut perm: Vec<usize> = (0..p).collect();
                for i in (1..p).rev() { perm.swap(i, rng.gen_range(0..=i)); }
                let rp = DMatrix::from_fn(p, p, |i, j| r[(perm[i], perm[j])]);
                let pp = Partition::from_labels(perm.iter().map(|&i| labels[i]).collect());
                prop_assert!((tefi(&rp, &pp).unwrap() - base).abs() < 1e-10);
            }
        }
    }
}
