//! Writes a graph to JSON, reads it back and checks that nothing changed.

use bnfold::models::{generate, parse_graph, write_graph, Archetype, Dims};

fn main() {
    let (g, _) = generate(
        Archetype::Fig2b,
        &Dims {
            channels: 2,
            image: 4,
            depth: 1,
        },
        7,
    )
    .unwrap();
    let text = write_graph(&g);
    println!("{}", text.lines().take(24).collect::<Vec<_>>().join("\n"));
    println!("... {} lines", text.lines().count());
    let back = parse_graph(&text).expect("own output parses");
    assert_eq!(back, g);
    assert_eq!(write_graph(&back), text);
    println!("round trip is exact");

    let broken = text.replacen("\"ReLU\"", "\"Swish\"", 1);
    match parse_graph(&broken) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}
