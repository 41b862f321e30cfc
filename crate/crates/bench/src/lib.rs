//! Fixtures shared by the criterion benches.

use mmx_core::numerics::Tensor;
use mmx_core::presets::Mode;
use mmx_core::synthetic::{self, toy, SyntheticSpec};
use mmx_core::tagger::TaggerModel;

/// Untrained toy taggers for every pipeline, built over the default
/// synthetic corpus. Timing does not depend on trained weights.
pub fn toy_models(seed: u64) -> Vec<(Mode, TaggerModel)> {
    let corpus = synthetic::generate(&SyntheticSpec::default()).expect("synthetic corpus");
    let tables = synthetic::tables(&corpus, toy::TABLE_DIM, seed).expect("synthetic tables");
    Mode::ALL
        .into_iter()
        .map(|m| (m, toy::model(m, &corpus, &tables, seed).expect("toy model")))
        .collect()
}

/// Deterministic values in [-1, 1) from a multiplicative hash; no RNG needed.
pub fn filled(shape: &[usize], salt: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n as u64)
        .map(|i| {
            let h = (i ^ salt.rotate_left(17)).wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 11;
            h as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filled_is_bounded_and_deterministic() {
        let a = filled(&[7, 5], 3);
        assert_eq!(a, filled(&[7, 5], 3));
        assert_ne!(a, filled(&[7, 5], 4));
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
