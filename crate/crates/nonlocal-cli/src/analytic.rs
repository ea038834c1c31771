//! Random analytic truth fields for convergence and baseline studies.

use nonlocal_core::poly_basis::{dense_multi_indices, Polynomial};
use rand::Rng;

/// A dense polynomial of total degree at most `max_order` with one
/// uniform coefficient in `[-1, 1]` per monomial, drawn in enumeration
/// order so the result depends only on the generator state.
pub fn random_polynomial(p: usize, max_order: usize, rng: &mut impl Rng) -> Polynomial {
    let terms = dense_multi_indices(p, max_order)
        .into_iter()
        .map(|index| (index, rng.gen_range(-1.0..=1.0)))
        .collect();
    Polynomial::from_terms(p, terms)
}
