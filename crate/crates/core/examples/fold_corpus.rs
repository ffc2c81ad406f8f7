//! Runs both passes over the archetype corpus and prints what happened.

use bnfold::models::{generate, Archetype, Dims};
use bnfold::transform::{banoff_pass, naive_pass};
use bnfold::verify::{check_equivalence, DEFAULT_SEED, DEFAULT_TOLERANCE};

fn main() {
    for arch in Archetype::corpus() {
        let (g, labels) = generate(arch, &Dims::default(), 1).expect("corpus dims are valid");
        let (naive_g, naive) = naive_pass(&g);
        let (full_g, full) = banoff_pass(&g);
        let eq_n = check_equivalence(&g, &naive_g, 100, DEFAULT_SEED, DEFAULT_TOLERANCE).unwrap();
        let eq_f = check_equivalence(&g, &full_g, 100, DEFAULT_SEED, DEFAULT_TOLERANCE).unwrap();
        println!(
            "{:8} bn={} naive={} banoff={} removed={:.4}% l1(naive)={:.2e} l1(banoff)={:.2e}",
            arch.name(),
            g.batch_norm_count(),
            naive.folded_count(),
            full.folded_count(),
            full.removed_percent,
            eq_n.max_l1,
            eq_f.max_l1,
        );
        for (id, reason) in &full.skipped {
            println!("         kept {id}: {reason}");
        }
        let want: Vec<&String> = labels.banoff.iter().collect();
        let got: Vec<&String> = full.folded.iter().map(|(id, _)| id).collect();
        let mut got_sorted = got.clone();
        got_sorted.sort();
        if want != got_sorted {
            println!("         labels expected {want:?}");
        }
    }
}
