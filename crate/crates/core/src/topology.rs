//! From transference evidence to a communication topology.
//!
//! Pipeline: symmetrize and clamp the transference matrix into a similarity
//! graph, build the unnormalized Laplacian `L = D - S`, eigendecompose with
//! cyclic Jacobi rotations, pick the cluster count as the number of
//! eigenvalues below the threshold, k-means the spectral embedding, and emit
//! the block-uniform doubly-stochastic mixing matrix (weight `1/d_l` inside
//! each cluster of size `d_l`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::seeds::{rng_for, Stream};
use crate::transference::TransferenceMatrix;
use rand::Rng;

/// Convergence target for the Jacobi sweep: Frobenius norm of the
/// off-diagonal part.
const JACOBI_OFF_DIAG_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 50;

/// Tolerance for doubly-stochastic row/column sums.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Symmetric nonnegative similarity graph with a zero diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    s: DenseMatrix,
}

impl SimilarityMatrix {
    /// Validates symmetry (exact), nonnegativity, and zero diagonal.
    pub fn new(s: DenseMatrix) -> Result<Self> {
        let n = s.rows();
        if s.cols() != n {
            return Err(Error::Dimension("similarity matrix must be square".into()));
        }
        for i in 0..n {
            if s.get(i, i) != 0.0 {
                return Err(Error::Invariant("similarity diagonal must be zero".into()));
            }
            for j in 0..n {
                let v = s.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Invariant(format!(
                        "similarity entry ({i},{j}) = {v} is negative or non-finite"
                    )));
                }
                if s.get(i, j) != s.get(j, i) {
                    return Err(Error::Invariant("similarity matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { n, s })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s.get(i, j)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.s
    }
}

/// `s[i][j] = max(0, (z[i][j] + z[j][i]) / 2)` off the diagonal, zero on it.
///
/// The transference matrix is signed and asymmetric; unnormalized spectral
/// clustering needs symmetric nonnegative weights, and clamping negative
/// evidence to zero is what disconnects mutually harmful tasks.
pub fn symmetrize_clamp(z: &TransferenceMatrix) -> SimilarityMatrix {
    let n = z.n;
    let mut s = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = 0.5 * (z.z.get(i, j) + z.z.get(j, i));
                s.set(i, j, v.max(0.0));
            }
        }
    }
    SimilarityMatrix { n, s }
}

/// Unnormalized graph Laplacian `L = D - S` with `D[i][i] = sum_j s[i][j]`.
pub fn laplacian(s: &SimilarityMatrix) -> DenseMatrix {
    let n = s.n;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let degree: f64 = (0..n).map(|j| s.get(i, j)).sum();
        for j in 0..n {
            l.set(i, j, if i == j { degree } else { -s.get(i, j) });
        }
    }
    l
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues sorted ascending and the matching orthonormal
/// eigenvectors as columns.
pub fn eig_symmetric(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Dimension("eig: matrix must be square".into()));
    }
    if !m.is_symmetric(1e-9) {
        return Err(Error::Numerical("eig: matrix not symmetric".into()));
    }
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    if n > 1 {
        let mut converged = false;
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(&a) < JACOBI_OFF_DIAG_TOL {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
        converged = converged || off_diagonal_norm(&a) < JACOBI_OFF_DIAG_TOL;
        if !converged {
            return Err(Error::Numerical(format!(
                "jacobi failed to converge in {JACOBI_MAX_SWEEPS} sweeps (off-diag {})",
                off_diagonal_norm(&a)
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v.get(row, src));
        }
    }
    Ok((eigenvalues, vectors))
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a.get(i, j) * a.get(i, j);
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`.
fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = 0.5 * (aqq - app) / apq;
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        if k != p && k != q {
            let akp = a.get(k, p);
            let akq = a.get(k, q);
            let new_kp = c * akp - s * akq;
            let new_kq = s * akp + c * akq;
            a.set(k, p, new_kp);
            a.set(p, k, new_kp);
            a.set(k, q, new_kq);
            a.set(q, k, new_kq);
        }
    }
    let new_pp = c * c * app - 2.0 * s * c * apq + s * s * aqq;
    let new_qq = s * s * app + 2.0 * s * c * apq + c * c * aqq;
    a.set(p, p, new_pp);
    a.set(q, q, new_qq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Number of clusters: eigenvalues strictly below the threshold, floored at
/// one and capped at `n`.
pub fn choose_k(eigenvalues: &[f64], threshold: f64) -> usize {
    let below = eigenvalues.iter().filter(|&&e| e < threshold).count();
    below.clamp(1, eigenvalues.len().max(1))
}

/// Everything the spectral step computed, kept for inspection and the
/// topology history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub laplacian: DenseMatrix,
    pub eigenvalues: Vec<f64>,
    pub chosen_k: usize,
    /// `n x k` matrix of the first `k` eigenvector columns.
    pub embedding: DenseMatrix,
}

/// Unnormalized spectral clustering of a similarity graph.
///
/// Clusters are returned in canonical form: each sorted ascending, ordered
/// by their smallest member.
pub fn spectral_cluster(
    s: &SimilarityMatrix,
    threshold: f64,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, SpectralReport)> {
    let n = s.n;
    if n == 0 {
        return Err(Error::Config("empty similarity matrix".into()));
    }
    let l = laplacian(s);
    let (eigenvalues, vectors) = eig_symmetric(&l)?;
    if eigenvalues[0] < -STOCHASTIC_TOL {
        return Err(Error::Numerical(format!(
            "laplacian has negative eigenvalue {}",
            eigenvalues[0]
        )));
    }
    let k = choose_k(&eigenvalues, threshold);
    let mut embedding = DenseMatrix::zeros(n, k);
    for row in 0..n {
        for col in 0..k {
            embedding.set(row, col, vectors.get(row, col));
        }
    }
    let labels = kmeans(&embedding, k, seed);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (node, &label) in labels.iter().enumerate() {
        clusters[label].push(node);
    }
    clusters.retain(|c| !c.is_empty());
    clusters.sort_by_key(|c| c[0]);
    let report = SpectralReport {
        laplacian: l,
        eigenvalues,
        chosen_k: k,
        embedding,
    };
    Ok((clusters, report))
}

/// Deterministic k-means on the rows of `points`.
///
/// Restart 0 seeds farthest-first from the max-norm row; later restarts
/// seed from a row drawn by the seeded generator. Ten restarts, up to 50
/// Lloyd iterations each, best inertia wins. Empty clusters are repaired by
/// splitting the largest cluster at its farthest member.
fn kmeans(points: &DenseMatrix, k: usize, seed: u64) -> Vec<usize> {
    let n = points.rows();
    if k >= n {
        return (0..n).collect();
    }
    if k <= 1 {
        return vec![0; n];
    }
    let mut rng = rng_for(seed, Stream::KMeans(k as u64));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..10 {
        let first = if restart == 0 {
            argmax_by(n, |i| row_norm2(points, i))
        } else {
            rng.random_range(0..n)
        };
        let centers = farthest_first(points, k, first);
        let (labels, inertia) = lloyd(points, centers);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn row_norm2(points: &DenseMatrix, i: usize) -> f64 {
    points.row(i).iter().map(|v| v * v).sum()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax_by(n: usize, f: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = f(0);
    for i in 1..n {
        let v = f(i);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Greedy farthest-first center selection (deterministic k-means++ variant).
fn farthest_first(points: &DenseMatrix, k: usize, first: usize) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centers = vec![points.row(first).to_vec()];
    let mut min_d2: Vec<f64> = (0..n).map(|i| dist2(points.row(i), &centers[0])).collect();
    while centers.len() < k {
        let next = argmax_by(n, |i| min_d2[i]);
        centers.push(points.row(next).to_vec());
        for i in 0..n {
            min_d2[i] = min_d2[i].min(dist2(points.row(i), centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &DenseMatrix, mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let n = points.rows();
    let dim = points.cols();
    let k = centers.len();
    let mut labels = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(points.row(i), center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        // recompute centers, repairing empties from the largest cluster
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for d in 0..dim {
                sums[labels[i]][d] += points.get(i, d);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let largest = argmax_by(k, |a| counts[a] as f64);
                let far = argmax_by(n, |i| {
                    if labels[i] == largest {
                        dist2(points.row(i), &centers[largest])
                    } else {
                        -1.0
                    }
                });
                labels[far] = c;
                counts[c] = 1;
                counts[largest] -= 1;
                for d in 0..dim {
                    sums[c][d] = points.get(far, d);
                    sums[largest][d] -= points.get(far, d);
                }
                changed = true;
            }
        }
        for c in 0..k {
            for d in 0..dim {
                centers[c][d] = sums[c][d] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| dist2(points.row(i), &centers[labels[i]])).sum();
    (labels, inertia)
}

/// Doubly-stochastic nonnegative topology matrix with its cluster partition
/// (empty for averaged matrices, which are convex mixtures of block forms).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingMatrix {
    pub n: usize,
    pub w: DenseMatrix,
    pub clusters: Vec<Vec<usize>>,
}

impl MixingMatrix {
    /// Fully-connected uniform baseline `w[i][j] = 1/n`.
    pub fn uniform(n: usize) -> Self {
        let w = DenseMatrix::from_fn(n, n, |_, _| 1.0 / n as f64);
        Self {
            n,
            w,
            clusters: vec![(0..n).collect()],
        }
    }

    /// No-communication identity topology.
    pub fn isolated(n: usize) -> Self {
        Self {
            n,
            w: DenseMatrix::identity(n),
            clusters: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Verifies nonnegativity and row/column sums within [`STOCHASTIC_TOL`].
    pub fn check_doubly_stochastic(&self) -> Result<()> {
        for i in 0..self.n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..self.n {
                let v = self.w.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Invariant(format!(
                        "mixing entry ({i},{j}) = {v} negative or non-finite"
                    )));
                }
                row += v;
                col += self.w.get(j, i);
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Invariant(format!(
                    "mixing matrix row/col {i} sums {row}/{col} not within {STOCHASTIC_TOL} of 1"
                )));
            }
        }
        Ok(())
    }
}

/// Block-uniform mixing matrix from a partition: `w[i][j] = 1/d_l` when `i`
/// and `j` share cluster `l` of size `d_l`, zero otherwise.
pub fn mixing_from_clusters(clusters: &[Vec<usize>], n: usize) -> Result<MixingMatrix> {
    let mut seen = vec![false; n];
    for cluster in clusters {
        for &node in cluster {
            if node >= n {
                return Err(Error::Config(format!("cluster node {node} out of range {n}")));
            }
            if seen[node] {
                return Err(Error::Config(format!("node {node} appears in two clusters")));
            }
            seen[node] = true;
        }
    }
    if !seen.iter().all(|&b| b) {
        return Err(Error::Config("clusters do not cover every node".into()));
    }
    let mut w = DenseMatrix::zeros(n, n);
    for cluster in clusters {
        let weight = 1.0 / cluster.len() as f64;
        for &i in cluster {
            for &j in cluster {
                w.set(i, j, weight);
            }
        }
    }
    let mut canonical: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort_unstable();
            c
        })
        .collect();
    canonical.sort_by_key(|c| c[0]);
    let m = MixingMatrix {
        n,
        w,
        clusters: canonical,
    };
    m.check_doubly_stochastic()?;
    Ok(m)
}

/// Entrywise mean of a window of mixing matrices. The result stays doubly
/// stochastic (convex combination) but is generally not block-uniform, so
/// its cluster list is empty.
pub fn average_mixing(history: &[MixingMatrix]) -> Result<MixingMatrix> {
    let first = history
        .first()
        .ok_or_else(|| Error::Config("average_mixing: empty history".into()))?;
    let n = first.n;
    let mut w = DenseMatrix::zeros(n, n);
    for m in history {
        if m.n != n {
            return Err(Error::Dimension("average_mixing: size mismatch".into()));
        }
        w.add_assign(&m.w)?;
    }
    w.scale(1.0 / history.len() as f64);
    let avg = MixingMatrix {
        n,
        w,
        clusters: Vec::new(),
    };
    avg.check_doubly_stochastic()?;
    Ok(avg)
}
