//! Accumulate exact readings and averages, then project the prior mean.

use absnav::constraints::ConstraintStore;
use absnav::decoder::{saa_check, Decoder, PriorModel};
use absnav::sparse::SparseRow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> absnav::Result<()> {
    // a 2x3 strip: cells 0..6
    let mut store = ConstraintStore::new(6);
    store.add_exact(&[(0, 0.1), (3, 0.8)])?;
    store.add_row(SparseRow::new(vec![(0, 0.25), (1, 0.25), (3, 0.25), (4, 0.25)]), 0.6);
    store.add_row(SparseRow::new(vec![(2, 0.5), (5, 0.5)]), 0.95);
    store.reduce_independent()?;
    println!("{} independent rows, {} cells known", store.len(), store.known_count());

    let prior = PriorModel::uniform(6);
    let mut decoder = Decoder::default();
    let est = decoder.estimate(&store, &prior)?;
    for (i, v) in est.values.iter().enumerate() {
        let tag = if est.known[i] { "known" } else { "" };
        println!("x[{i}] = {v:.4} {tag}");
    }
    println!("objective {:.6}, residual {:.1e}", est.objective, est.stats.equality_residual);

    let again = decoder.estimate(&store, &prior)?;
    println!("second call: {} cache hits", again.stats.cache_hits);

    let gap = saa_check(&store, &prior, 10_000, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("sample-average estimate within {gap:.4} of the projection");
    Ok(())
}
