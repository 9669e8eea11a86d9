//! Sinusoidal positional encoding (sin on even dims, cos on odd dims,
//! base 10000).

use ndarray::Array2;

/// PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(t / 10000^(2i/d)).
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Array2<f64> {
    assert!(d_model % 2 == 0, "d_model must be even");
    let mut pe = Array2::zeros((seq_len, d_model));
    for t in 0..seq_len {
        for i in 0..d_model / 2 {
            let rate = 10_000f64.powf(2.0 * i as f64 / d_model as f64);
            let arg = t as f64 / rate;
            pe[[t, 2 * i]] = arg.sin();
            pe[[t, 2 * i + 1]] = arg.cos();
        }
    }
    pe
}
