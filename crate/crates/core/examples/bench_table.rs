//! Prints the comparison table for a few archetypes.

use bnfold::bench::{bench_graph, emit_table, BenchConfig, TableFormat};
use bnfold::models::{generate, Archetype, Dims};

fn main() {
    let config = BenchConfig {
        reps: 10,
        ..Default::default()
    };
    let rows: Vec<_> = [
        Archetype::Fig2a,
        Archetype::Fig2c,
        Archetype::ResNetToy { blocks: 3 },
    ]
    .into_iter()
    .map(|arch| {
        let (g, _) = generate(arch, &Dims::default(), 1).unwrap();
        bench_graph(&g, &config).unwrap()
    })
    .collect();
    print!("{}", emit_table(&rows, TableFormat::Markdown));
}
