//! Runs the fixed-point pass with different scan orders on one graph.
//! Which batch norms go first changes the path, not the final count.

use bnfold::models::{generate, Archetype, Dims};
use bnfold::transform::{banoff_pass_with, BanOffOptions, ScanOrder};

fn main() {
    let (g, _) = generate(
        Archetype::RandomDag {
            nodes: 13,
            seed: 235,
        },
        &Dims::default(),
        235,
    )
    .unwrap();
    let mut ids = g.batch_norm_ids();
    let forward = ScanOrder::Topological;
    ids.reverse();
    let backward = ScanOrder::Priority(ids);
    for (name, order) in [("topological", forward), ("reversed", backward)] {
        let (folded, report) = banoff_pass_with(
            &g,
            &BanOffOptions {
                order,
                ..Default::default()
            },
        );
        println!("{name:12} folded {:?}", report.folded);
        println!(
            "{:12} left {}: {:?}",
            "",
            folded.batch_norm_count(),
            report.skipped
        );
    }
}
