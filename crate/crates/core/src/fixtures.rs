//! Deterministic datasets bundled with the crate.
//!
//! `data/tiny.svm` and `data/synthetic.svm` at the repository root are the
//! libsvm renderings of [`tiny`] and [`synthetic_fixture`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{parse_libsvm_str, Dataset, Example, SparseVector};

pub const TINY_LIBSVM: &str = "\
+1 1:1 2:0.5
-1 1:-0.5 3:1
+1 2:1 3:0.25
-1 1:-1 2:-0.75
+1 1:0.5 3:-0.5
-1 2:-0.5 3:1.5
";

/// Seed of the bundled synthetic dataset.
pub const SYNTHETIC_SEED: u64 = 20_140_101;

/// Six hand-written examples in three features.
pub fn tiny() -> Dataset {
    parse_libsvm_str(TINY_LIBSVM).expect("bundled fixture parses")
}

/// Linearly separable sparse data: every feature is present independently
/// with probability `density`, values are standard normal, and labels are the
/// sign of a dense standard-normal teacher vector applied to the row. Rows
/// never come out empty.
pub fn synthetic(n: usize, dim: usize, density: f64, seed: u64) -> Dataset {
    assert!(n > 0 && dim > 0 && density > 0.0 && density <= 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let examples = (0..n)
        .map(|_| {
            let mut indices = Vec::new();
            let mut values = Vec::new();
            for j in 0..dim {
                if rng.random_bool(density) {
                    indices.push(j as u32);
                    values.push(rng.sample::<f64, _>(StandardNormal));
                }
            }
            if indices.is_empty() {
                indices.push(rng.random_range(0..dim) as u32);
                values.push(rng.sample(StandardNormal));
            }
            let score: f64 = indices
                .iter()
                .zip(&values)
                .map(|(&j, v)| teacher[j as usize] * v)
                .sum();
            Example {
                features: SparseVector::new(indices, values).expect("indices are increasing"),
                label: if score >= 0.0 { 1 } else { -1 },
            }
        })
        .collect();
    Dataset::from_examples(examples, Some(dim)).expect("non-empty")
}

/// The bundled synthetic dataset: 2000 examples, 200 features, 5% density.
pub fn synthetic_fixture() -> Dataset {
    synthetic(2000, 200, 0.05, SYNTHETIC_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_libsvm, write_libsvm};
    use std::path::PathBuf;

    fn data_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
    }

    #[test]
    fn synthetic_is_deterministic_and_nonempty() {
        let a = synthetic(50, 20, 0.1, 4);
        assert_eq!(a, synthetic(50, 20, 0.1, 4));
        assert_ne!(a, synthetic(50, 20, 0.1, 5));
        assert!((0..a.len()).all(|i| a.row(i).nnz() > 0));
        assert_eq!(a.dim(), 20);
    }

    #[test]
    fn fixture_shape() {
        let ds = synthetic_fixture();
        assert_eq!((ds.len(), ds.dim()), (2000, 200));
        let density = ds.nnz() as f64 / (2000.0 * 200.0);
        assert!((density - 0.05).abs() < 0.005, "{density}");
        let pos = ds.positives();
        assert!(pos > 600 && pos < 1400, "{pos}");
        assert_eq!(tiny().len(), 6);
        assert_eq!(tiny().dim(), 3);
    }

    #[test]
    fn bundled_files_match_generators() {
        let dir = data_dir();
        assert_eq!(read_libsvm(&dir.join("tiny.svm")).unwrap(), tiny());
        let on_disk = read_libsvm(&dir.join("synthetic.svm")).unwrap();
        assert_eq!(on_disk.with_dim(200).unwrap(), synthetic_fixture());
    }

    #[test]
    #[ignore = "regenerates the files under data/"]
    fn write_bundled_files() {
        let dir = data_dir();
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("tiny.svm"), TINY_LIBSVM).unwrap();
        let mut out = std::fs::File::create(dir.join("synthetic.svm")).unwrap();
        write_libsvm(&synthetic_fixture(), &mut out).unwrap();
    }
}
