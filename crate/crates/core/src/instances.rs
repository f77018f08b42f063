//! Seeded random objective instances for tests and the verify command.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::Result;
use crate::objective::{CostVector, ObjectiveInstance, PrimitiveMatrix};
use crate::simplex::SimplexVector;

/// Uniform draw from the simplex via normalized exponentials.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> SimplexVector {
    let e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = e.iter().sum();
    SimplexVector::new(e.into_iter().map(|x| x / s).collect()).expect("normalized draw")
}

/// Primitives with uniform-simplex columns floored at `pi_floor`, costs
/// uniform in `[-1, 1]`, and the given temperature.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    d_u: usize,
    n_pi: usize,
    epsilon: f64,
    pi_floor: f64,
) -> Result<ObjectiveInstance> {
    let columns: Vec<Vec<f64>> = (0..n_pi)
        .map(|_| {
            let raw: Vec<f64> = random_simplex(rng, d_u).iter().map(|v| v.max(pi_floor)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let pm = PrimitiveMatrix::from_columns(&columns)?;
    let cost = CostVector::new((0..d_u).map(|_| rng.random_range(-1.0..=1.0)).collect())?;
    ObjectiveInstance::new(pm, cost, epsilon)
}

/// Two primitives over two actions, `Π = [[p, 1−q], [1−p, q]]` with
/// `p, q ∈ [0.55, 0.95]`.
pub fn random_two_primitive<R: Rng + ?Sized>(rng: &mut R, epsilon: f64) -> Result<ObjectiveInstance> {
    let p = rng.random_range(0.55..=0.95);
    let q = rng.random_range(0.55..=0.95);
    let pm = PrimitiveMatrix::from_rows(&[vec![p, 1.0 - q], vec![1.0 - p, q]])?;
    let cost = CostVector::new(vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])?;
    ObjectiveInstance::new(pm, cost, epsilon)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the counter pair `(a, b)` under `seed`, so
/// parallel consumers draw the same numbers in any order.
pub fn stream_rng(seed: u64, a: u64, b: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(mix64(mix64(mix64(seed) ^ a) ^ b))
}
