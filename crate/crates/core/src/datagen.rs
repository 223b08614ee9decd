//! Synthetic Gaussian multi-attribute dataset.
//!
//! Samples are drawn from a zero-mean Gaussian whose covariance is designed
//! so that the ground-truth task clusters are known: attributes 0 and 3 are
//! positively correlated with each other and negatively with attributes 1
//! and 2 (and vice versa). Attribute labels are 1 exactly when the tracked
//! coordinate exceeds its mean. A six-attribute variant with three
//! positively-correlated blocks is included for the scaled run.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, DenseMatrix};
use crate::seeds::{rng_for, Stream};

/// Mean and covariance of the sampling distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub cov: DenseMatrix,
}

impl CovarianceSpec {
    /// Validates symmetry and strict positive definiteness (via Cholesky).
    pub fn new(mean: Vec<f64>, cov: DenseMatrix) -> Result<Self> {
        let dim = mean.len();
        if cov.rows() != dim || cov.cols() != dim {
            return Err(Error::Config(format!(
                "covariance {}x{} vs mean dim {dim}",
                cov.rows(),
                cov.cols()
            )));
        }
        if !cov.is_symmetric(1e-12) {
            return Err(Error::Config("covariance not symmetric".into()));
        }
        // PSD gate: factorization must succeed before any sampling.
        cholesky(&cov, 0.0)?;
        Ok(Self { dim, mean, cov })
    }

    /// The four-attribute design: coordinates 0 and 3 reinforce each other,
    /// coordinates 1 and 2 reinforce each other, and the two pairs oppose.
    /// Coordinates 4-9 are independent unit-variance noise.
    pub fn four_task() -> Self {
        let dim = 10;
        let mut cov = DenseMatrix::identity(dim);
        let pairs: &[(usize, usize, f64)] = &[
            (0, 3, 0.8),
            (1, 2, 0.8),
            (0, 1, -0.4),
            (0, 2, -0.4),
            (3, 1, -0.4),
            (3, 2, -0.4),
        ];
        for &(i, j, v) in pairs {
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
        Self::new(vec![0.0; dim], cov).expect("designed covariance is positive definite")
    }

    /// Six tracked attributes in three positively-correlated blocks
    /// {0,1}, {2,3}, {4,5}, mildly opposed across blocks.
    pub fn six_task() -> Self {
        let dim = 10;
        let mut cov = DenseMatrix::identity(dim);
        for &(i, j) in &[(0usize, 1usize), (2, 3), (4, 5)] {
            cov.set(i, j, 0.8);
            cov.set(j, i, 0.8);
        }
        for i in 0..6 {
            for j in 0..6 {
                if i != j && i / 2 != j / 2 {
                    cov.set(i, j, -0.2);
                }
            }
        }
        Self::new(vec![0.0; dim], cov).expect("designed covariance is positive definite")
    }

    pub fn cholesky_factor(&self) -> Result<DenseMatrix> {
        cholesky(&self.cov, 0.0)
    }
}

/// Sizes of the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: usize,
    pub test: usize,
    pub shared: usize,
}

impl Default for DatasetSplits {
    fn default() -> Self {
        Self {
            train: 30_000,
            test: 10_000,
            shared: 10_000,
        }
    }
}

/// Binary labels for one split, one row per sample and one column per
/// tracked attribute.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelBlock {
    n: usize,
    attrs: usize,
    data: Vec<u8>,
}

impl LabelBlock {
    fn new(n: usize, attrs: usize) -> Self {
        Self {
            n,
            attrs,
            data: vec![0; n * attrs],
        }
    }

    #[inline]
    pub fn get(&self, sample: usize, attr: usize) -> u8 {
        self.data[sample * self.attrs + attr]
    }

    /// Labels of one attribute for a list of sample indices.
    pub fn column_for(&self, attr: usize, samples: &[u32]) -> Vec<u8> {
        samples
            .iter()
            .map(|&s| self.get(s as usize, attr))
            .collect()
    }

    pub fn column(&self, attr: usize) -> Vec<u8> {
        (0..self.n).map(|s| self.get(s, attr)).collect()
    }
}

/// The generated dataset: features and labels for all three splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub spec: CovarianceSpec,
    pub tracked_coords: Vec<usize>,
    pub splits: DatasetSplits,
    pub seed: u64,
    pub train_x: DenseMatrix,
    pub train_labels: LabelBlock,
    pub test_x: DenseMatrix,
    pub test_labels: LabelBlock,
    pub shared_x: DenseMatrix,
    pub shared_labels: LabelBlock,
}

/// Draws `n` samples `x = mean + L z` with `L` the Cholesky factor of the
/// covariance and `z` i.i.d. standard normal from the given generator.
pub fn sample_gaussian(spec: &CovarianceSpec, n: usize, rng: &mut impl Rng) -> Result<DenseMatrix> {
    let factor = spec.cholesky_factor()?;
    let dim = spec.dim;
    let mut x = DenseMatrix::zeros(n, dim);
    let mut z = vec![0.0; dim];
    for r in 0..n {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let row = x.row_mut(r);
        for i in 0..dim {
            let mut v = spec.mean[i];
            // lower-triangular factor
            for (k, &zk) in z.iter().enumerate().take(i + 1) {
                v += factor.get(i, k) * zk;
            }
            row[i] = v;
        }
    }
    Ok(x)
}

/// Threshold labeling: 1 iff the coordinate strictly exceeds its mean.
pub fn label_attributes(
    x: &DenseMatrix,
    spec: &CovarianceSpec,
    tracked: &[usize],
) -> Result<LabelBlock> {
    for &c in tracked {
        if c >= spec.dim {
            return Err(Error::Config(format!(
                "tracked coordinate {c} out of range for dim {}",
                spec.dim
            )));
        }
    }
    let mut labels = LabelBlock::new(x.rows(), tracked.len());
    for s in 0..x.rows() {
        let row = x.row(s);
        for (a, &c) in tracked.iter().enumerate() {
            labels.data[s * tracked.len() + a] = u8::from(row[c] > spec.mean[c]);
        }
    }
    Ok(labels)
}

impl SyntheticDataset {
    /// Generates all three splits from one seed. Pure function of
    /// `(spec, tracked, splits, seed)`.
    pub fn generate(
        spec: CovarianceSpec,
        tracked: Vec<usize>,
        splits: DatasetSplits,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_for(seed, Stream::DatasetSample);
        let total = splits.train + splits.test + splits.shared;
        let all = sample_gaussian(&spec, total, &mut rng)?;
        let slice = |from: usize, n: usize| -> Result<DenseMatrix> {
            let mut m = DenseMatrix::zeros(n, spec.dim);
            for r in 0..n {
                m.row_mut(r).copy_from_slice(all.row(from + r));
            }
            Ok(m)
        };
        let train_x = slice(0, splits.train)?;
        let test_x = slice(splits.train, splits.test)?;
        let shared_x = slice(splits.train + splits.test, splits.shared)?;
        let train_labels = label_attributes(&train_x, &spec, &tracked)?;
        let test_labels = label_attributes(&test_x, &spec, &tracked)?;
        let shared_labels = label_attributes(&shared_x, &spec, &tracked)?;
        Ok(Self {
            spec,
            tracked_coords: tracked,
            splits,
            seed,
            train_x,
            train_labels,
            test_x,
            test_labels,
            shared_x,
            shared_labels,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.tracked_coords.len()
    }

    /// Writes the dataset as a small JSON header plus raw little-endian
    /// feature/label payloads.
    pub fn export(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(b"DMTLDS1\n")?;
        let header = Header {
            spec: self.spec.clone(),
            tracked_coords: self.tracked_coords.clone(),
            splits: self.splits,
            seed: self.seed,
        };
        let header =
            serde_json::to_vec(&header).map_err(|e| Error::Config(format!("header: {e}")))?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        for m in [&self.train_x, &self.test_x, &self.shared_x] {
            for v in m.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        for l in [&self.train_labels, &self.test_labels, &self.shared_labels] {
            f.write_all(&l.data)?;
        }
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"DMTLDS1\n" {
            return Err(Error::Config("not a dataset file".into()));
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        f.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::Config(format!("dataset header: {e}")))?;
        let dim = header.spec.dim;
        let attrs = header.tracked_coords.len();
        let mut read_matrix = |n: usize| -> Result<DenseMatrix> {
            let mut buf = vec![0u8; n * dim * 8];
            f.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            DenseMatrix::from_vec(n, dim, data)
        };
        let train_x = read_matrix(header.splits.train)?;
        let test_x = read_matrix(header.splits.test)?;
        let shared_x = read_matrix(header.splits.shared)?;
        let mut read_labels = |n: usize| -> Result<LabelBlock> {
            let mut block = LabelBlock::new(n, attrs);
            f.read_exact(&mut block.data)?;
            Ok(block)
        };
        let train_labels = read_labels(header.splits.train)?;
        let test_labels = read_labels(header.splits.test)?;
        let shared_labels = read_labels(header.splits.shared)?;
        Ok(Self {
            spec: header.spec,
            tracked_coords: header.tracked_coords,
            splits: header.splits,
            seed: header.seed,
            train_x,
            train_labels,
            test_x,
            test_labels,
            shared_x,
            shared_labels,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: CovarianceSpec,
    tracked_coords: Vec<usize>,
    splits: DatasetSplits,
    seed: u64,
}

/// One client's restricted view: the full feature vectors of its train
/// shard, labels for its own attribute only.
#[derive(Debug, Clone)]
pub struct ClientView {
    pub client_id: usize,
    /// Index into `tracked_coords`; also the label column this client sees.
    pub attribute: usize,
    pub shard: Vec<u32>,
    pub dataset: Arc<SyntheticDataset>,
}

impl ClientView {
    /// Feature rows and own-attribute labels for a batch of shard-relative
    /// indices.
    pub fn train_batch(&self, shard_positions: &[u32]) -> (DenseMatrix, Vec<u8>) {
        let ds = &self.dataset;
        let mut x = DenseMatrix::zeros(shard_positions.len(), ds.spec.dim);
        let mut labels = Vec::with_capacity(shard_positions.len());
        for (r, &p) in shard_positions.iter().enumerate() {
            let sample = self.shard[p as usize] as usize;
            x.row_mut(r).copy_from_slice(ds.train_x.row(sample));
            labels.push(ds.train_labels.get(sample, self.attribute));
        }
        (x, labels)
    }

    pub fn shard_len(&self) -> usize {
        self.shard.len()
    }
}

/// Splits the shuffled train set into contiguous per-client shards. The
/// number of clients must equal the number of tracked attributes; client
/// `k` observes attribute `k`.
pub fn partition_for_clients(
    dataset: &Arc<SyntheticDataset>,
    n_clients: usize,
) -> Result<Vec<ClientView>> {
    if n_clients != dataset.n_tasks() {
        return Err(Error::Config(format!(
            "{n_clients} clients vs {} tracked attributes",
            dataset.n_tasks()
        )));
    }
    let n = dataset.splits.train;
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = rng_for(dataset.seed, Stream::ShardShuffle(u64::MAX));
    order.shuffle(&mut rng);
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut views = Vec::with_capacity(n_clients);
    let mut off = 0;
    for client_id in 0..n_clients {
        let len = base + usize::from(client_id < extra);
        views.push(ClientView {
            client_id,
            attribute: client_id,
            shard: order[off..off + len].to_vec(),
            dataset: Arc::clone(dataset),
        });
        off += len;
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spec(dim: usize) -> CovarianceSpec {
        CovarianceSpec::new(vec![0.0; dim], DenseMatrix::identity(dim)).unwrap()
    }

    #[test]
    fn designed_covariance_has_documented_signs() {
        let spec = CovarianceSpec::four_task();
        let c = &spec.cov;
        assert!(c.get(0, 3) > 0.0);
        assert!(c.get(1, 2) > 0.0);
        assert!(c.get(0, 1) < 0.0);
        assert!(c.get(0, 2) < 0.0);
        assert!(c.get(3, 1) < 0.0);
        assert!(c.get(3, 2) < 0.0);
        for i in 0..10 {
            assert_eq!(c.get(i, i), 1.0);
        }
    }

    #[test]
    fn six_task_covariance_is_positive_definite() {
        // Constructor already runs the Cholesky gate; this is the explicit check.
        assert!(CovarianceSpec::six_task().cholesky_factor().is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = unit_spec(4);
        let mut r1 = rng_for(9, Stream::DatasetSample);
        let mut r2 = rng_for(9, Stream::DatasetSample);
        let a = sample_gaussian(&spec, 50, &mut r1).unwrap();
        let b = sample_gaussian(&spec, 50, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn empirical_moments_match_identity_covariance() {
        // 3σ/√n statistical oracle at n = 100k: tolerance ±0.02.
        let spec = unit_spec(4);
        let mut rng = rng_for(1, Stream::DatasetSample);
        let n = 100_000;
        let x = sample_gaussian(&spec, n, &mut rng).unwrap();
        for j in 0..4 {
            let mean: f64 = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.02, "coord {j} mean {mean}");
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let cov: f64 =
                    (0..n).map(|i| x.get(i, a) * x.get(i, b)).sum::<f64>() / n as f64;
                assert!(cov.abs() < 0.02, "cov[{a}][{b}] = {cov}");
            }
        }
    }

    #[test]
    fn labels_follow_strict_threshold() {
        let spec = unit_spec(2);
        let x = DenseMatrix::from_rows(&[vec![0.5, -0.1], vec![0.0, 0.0]]).unwrap();
        let labels = label_attributes(&x, &spec, &[0, 1]).unwrap();
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(0, 1), 0);
        // exactly at the mean: strict inequality gives 0
        assert_eq!(labels.get(1, 0), 0);
    }

    #[test]
    fn label_attributes_rejects_bad_coordinate() {
        let spec = unit_spec(2);
        let x = DenseMatrix::zeros(1, 2);
        assert!(label_attributes(&x, &spec, &[2]).is_err());
    }

    #[test]
    fn label_agreement_matches_designed_correlations() {
        // Monte-Carlo oracle for the sign structure the pipeline must recover.
        let spec = CovarianceSpec::four_task();
        let mut rng = rng_for(2, Stream::DatasetSample);
        let n = 100_000;
        let x = sample_gaussian(&spec, n, &mut rng).unwrap();
        let labels = label_attributes(&x, &spec, &[0, 1, 2, 3]).unwrap();
        let agree = |a: usize, b: usize| -> f64 {
            (0..n)
                .filter(|&s| labels.get(s, a) == labels.get(s, b))
                .count() as f64
                / n as f64
        };
        assert!(agree(0, 3) > 0.5, "P(l0 = l3) = {}", agree(0, 3));
        assert!(agree(1, 2) > 0.5);
        assert!(agree(0, 1) < 0.5, "P(l0 = l1) = {}", agree(0, 1));
        assert!(agree(0, 2) < 0.5);
        assert!(agree(3, 1) < 0.5);
        assert!(agree(3, 2) < 0.5);
    }

    #[test]
    fn label_marginals_are_balanced() {
        let spec = CovarianceSpec::four_task();
        let ds = SyntheticDataset::generate(
            spec,
            vec![0, 1, 2, 3],
            DatasetSplits {
                train: 30_000,
                test: 100,
                shared: 100,
            },
            3,
        )
        .unwrap();
        for a in 0..4 {
            let ones: usize = ds
                .train_labels
                .column(a)
                .iter()
                .map(|&v| v as usize)
                .sum();
            let frac = ones as f64 / 30_000.0;
            assert!((frac - 0.5).abs() < 0.02, "attr {a}: {frac}");
        }
    }

    #[test]
    fn partition_is_even_and_disjoint() {
        let ds = Arc::new(
            SyntheticDataset::generate(
                CovarianceSpec::four_task(),
                vec![0, 1, 2, 3],
                DatasetSplits {
                    train: 30_000,
                    test: 10,
                    shared: 10,
                },
                0,
            )
            .unwrap(),
        );
        let views = partition_for_clients(&ds, 4).unwrap();
        assert!(views.iter().all(|v| v.shard.len() == 7_500));
        let mut seen = vec![false; 30_000];
        for v in &views {
            for &s in &v.shard {
                assert!(!seen[s as usize], "duplicate sample {s}");
                seen[s as usize] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
        // client 2 exposes only attribute 2's labels
        assert_eq!(views[2].attribute, 2);
    }

    #[test]
    fn partition_rejects_client_count_mismatch() {
        let ds = Arc::new(
            SyntheticDataset::generate(
                CovarianceSpec::four_task(),
                vec![0, 1, 2, 3],
                DatasetSplits {
                    train: 100,
                    test: 10,
                    shared: 10,
                },
                0,
            )
            .unwrap(),
        );
        assert!(partition_for_clients(&ds, 3).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = std::env::temp_dir().join("dmtl-datagen-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.bin");
        let ds = SyntheticDataset::generate(
            CovarianceSpec::four_task(),
            vec![0, 1, 2, 3],
            DatasetSplits {
                train: 64,
                test: 16,
                shared: 16,
            },
            5,
        )
        .unwrap();
        ds.export(&path).unwrap();
        let back = SyntheticDataset::import(&path).unwrap();
        assert_eq!(ds.train_x.data(), back.train_x.data());
        assert_eq!(ds.shared_labels.data, back.shared_labels.data);
        assert_eq!(ds.seed, back.seed);
        std::fs::remove_file(&path).ok();
    }
}
