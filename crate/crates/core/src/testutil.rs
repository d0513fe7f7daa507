//! Helpers shared by unit tests across modules.

use rand_chacha::ChaCha8Rng;

use crate::measures::Embedding;

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..d).map(|_| crate::rng::standard_normal(rng)).collect();
        let e = Embedding::new(v).unwrap();
        if e.norm() > 1e-6 {
            return e.normalized().unwrap();
        }
    }
}
