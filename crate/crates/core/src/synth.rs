//! Synthetic "rectangles" benchmark: 28×28 binary images holding the outline
//! of one axis-aligned rectangle, labelled 1 when it is taller than wide.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::LabeledDataset;
use crate::error::Result;

pub const SIDE: usize = 28;
/// Minimum `|height − width|`, so no instance is close to a square.
pub const MIN_ASPECT_GAP: usize = 3;

/// `n` rectangle images; height and width are uniform in `1..=28` (rejecting
/// near-squares), the position uniform among placements that fit.
pub fn rectangles(n: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, SIDE * SIDE));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (h, w) = loop {
            let h = rng.random_range(1..=SIDE);
            let w = rng.random_range(1..=SIDE);
            if h.abs_diff(w) >= MIN_ASPECT_GAP {
                break (h, w);
            }
        };
        let top = rng.random_range(0..=SIDE - h);
        let left = rng.random_range(0..=SIDE - w);
        let mut row = x.row_mut(i);
        for c in left..left + w {
            row[top * SIDE + c] = 1.0;
            row[(top + h - 1) * SIDE + c] = 1.0;
        }
        for r in top..top + h {
            row[r * SIDE + left] = 1.0;
            row[r * SIDE + left + w - 1] = 1.0;
        }
        labels.push(usize::from(h > w));
    }
    LabeledDataset::with_classes(x, labels, 2)
}
