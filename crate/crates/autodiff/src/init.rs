use rand::Rng;

use crate::tensor::Tensor;

/// Kaiming-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn respects_bound_and_seed() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ta = kaiming_uniform(&[4, 2, 3], 6, &mut a);
        let tb = kaiming_uniform(&[4, 2, 3], 6, &mut b);
        assert_eq!(ta, tb);
        assert!(ta.max_abs() <= 1.0);
    }
}
