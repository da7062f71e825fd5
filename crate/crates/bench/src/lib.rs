//! Shared fixtures for the benchmarks and the `sweep` binary.

use densemetric::{Matrix, SynthConfig};

/// Default benchmark dataset with the given seed.
pub fn benchmark_data(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..SynthConfig::default()
    }
}

/// Deterministic pseudo-random unit rows, cheap enough for setup code.
pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Matrix::from_vec(rows, cols, data).expect("shape matches")
}

/// `classes` labels with `per` rows each.
pub fn grouped_labels(classes: usize, per: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
}
