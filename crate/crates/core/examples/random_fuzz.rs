//! Folds a batch of random DAGs with both passes and checks each result.
//!
//! `cargo run --example random_fuzz -- 200` runs 200 graphs.

use bnfold::models::{generate, Archetype, Dims};
use bnfold::transform::{banoff_pass, naive_pass};
use bnfold::verify::{check_equivalence, DEFAULT_TOLERANCE};

fn main() {
    let count: u64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(100);
    let (mut total, mut naive_folds, mut full_folds, mut worst) = (0, 0, 0, 0.0f64);
    for seed in 0..count {
        let arch = Archetype::RandomDag {
            nodes: 2 + (seed % 14) as usize,
            seed,
        };
        let (g, _) = generate(arch, &Dims::default(), seed).unwrap();
        let (ng, nr) = naive_pass(&g);
        let (fg, fr) = banoff_pass(&g);
        for h in [&ng, &fg] {
            let eq = check_equivalence(&g, h, 10, seed, DEFAULT_TOLERANCE).unwrap();
            assert!(eq.pass, "{arch}: deviation {}", eq.max_l1);
            worst = worst.max(eq.max_l1);
        }
        total += g.batch_norm_count();
        naive_folds += nr.folded_count();
        full_folds += fr.folded_count();
    }
    println!("{count} graphs, {total} batch norms");
    println!("naive folded {naive_folds}, banoff folded {full_folds}, worst L1 {worst:.2e}");
}
