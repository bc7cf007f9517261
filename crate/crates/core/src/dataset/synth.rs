use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

use super::Dataset;

/// Draws `n_rows` rows where every feature (a whole onehot group, or a single
/// numeric column) and the label are resampled independently from their
/// empirical marginals in `ds`.
pub fn synthesize_marginals(ds: &Dataset, n_rows: usize, seed: u64) -> Result<Dataset> {
    if n_rows == 0 {
        return Err(Error::Argument("n_rows must be at least 1".into()));
    }
    let n = ds.n_rows();
    if n == 0 {
        return Err(Error::Argument("cannot synthesize from an empty dataset".into()));
    }
    let dict = ds.dictionary();
    let mut rng = seed::rng(seed);
    let mut out = Matrix::zeros(n_rows, ds.width());
    let mut labels = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        for f in &dict.features {
            let donor = rng.gen_range(0..n);
            for &j in &f.indices {
                out.set(i, j, ds.matrix().get(donor, j));
            }
        }
        labels.push(ds.labels()[rng.gen_range(0..n)]);
    }
    let groups = (0..n_rows).map(|i| format!("synth-{i}")).collect();
    Dataset::new(out, labels, groups, dict.clone())
}
