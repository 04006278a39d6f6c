//! Sinusoidal embedding of the diffusion step.

/// Interleaved `(sin, cos)` pairs at geometrically spaced frequencies:
/// entry `2i` is `sin(t / 10000^(2i/dim))` and entry `2i+1` the matching cosine.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim.is_multiple_of(2), "embedding width must be even");
    let t = t as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        out.push((t * freq).sin());
        out.push((t * freq).cos());
    }
    out
}
