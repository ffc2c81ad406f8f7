//! Prints the affine component, leaves and I/O partition of the central
//! batch norm in the fig5a and fig5b archetypes.

use bnfold::analysis::{affine_component, check_foldable, Side};
use bnfold::models::{generate, Archetype, Dims};

fn main() {
    for arch in [Archetype::Fig5a, Archetype::Fig5b] {
        let (g, _) = generate(arch, &Dims::default(), 1).unwrap();
        let comp = affine_component(&g, "bn").unwrap();
        let decision = check_foldable(&g, "bn").unwrap();
        println!("{arch}: {decision:?}");
        println!("  C = {:?}", comp.members);
        for side in [Side::In, Side::Out] {
            let part = comp.part(side);
            println!("  {side:?}: members {:?}", part.members);
            println!("    leaves {:?}", part.leaves.leaves);
            println!(
                "    I {:?} O {:?}",
                part.partition.inner, part.partition.outer
            );
        }
        for halt in comp.halted_at() {
            println!("  halted: {} at {}", halt.member, halt.at);
        }
    }
}
