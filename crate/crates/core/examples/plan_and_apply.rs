//! Plans one fold on the fig2c junction, shows the per-edge transforms and
//! rewritten leaves, applies it and checks the result.

use bnfold::analysis::{check_foldable, plan_fold};
use bnfold::models::{generate, Archetype, Dims};
use bnfold::transform::apply_fold;
use bnfold::verify::{check_equivalence, param_stats};

fn main() {
    let (g, _) = generate(Archetype::Fig2c, &Dims::default(), 1).unwrap();
    let decision = check_foldable(&g, "bn").unwrap();
    println!("decision: {decision:?}");
    let plan = plan_fold(&g, "bn", &decision).unwrap();
    for (value, affine) in &plan.edge_affines {
        let show: Vec<String> = affine
            .scale
            .iter()
            .take(3)
            .map(|s| format!("{s:.3}"))
            .collect();
        println!("  edge {value:5} scale [{} ..]", show.join(", "));
    }
    println!(
        "  rewritten: {:?}",
        plan.leaf_updates.keys().collect::<Vec<_>>()
    );
    println!(
        "  I {:?} O {:?}",
        plan.partition.inner, plan.partition.outer
    );

    let folded = apply_fold(&g, &plan).unwrap();
    let eq = check_equivalence(&g, &folded, 100, 42, 1e-9).unwrap();
    let stats = param_stats(&g, &folded);
    println!("max L1 {:.3e}, pass {}", eq.max_l1, eq.pass);
    println!(
        "removed {} parameters ({:.4}%)",
        stats.removed, stats.percent
    );
    assert!(
        apply_fold(&folded, &plan).is_err(),
        "a plan only applies to its own graph"
    );
}
