//! Generates a small corpus and round-trips one trace through the text format.
//!
//! Run: cargo run --example trace_corpus [ops_per_trace]

use pcmwrite::trace::{generate_corpus, parse_trace, write_trace, CorpusConfig};

fn main() -> pcmwrite::Result<()> {
    let n_ops = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2_000);
    let cfg = CorpusConfig {
        traces_per_scenario: 4,
        n_ops,
        seed: 42,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg, 64)?;
    println!("{:>3}  {:<4} {:>5} {:>7} {:>7}", "id", "scen", "ratio", "reads", "writes");
    for (id, e) in corpus.iter().enumerate() {
        let ratio = format!("{}:{}", e.spec.ratio.reads, e.spec.ratio.writes);
        println!("{id:>3}  {:<4} {ratio:>5} {:>7} {:>7}", e.scenario.label(), e.trace.n_reads(), e.trace.n_writes());
    }

    let mut text = Vec::new();
    write_trace(&corpus[0].trace, &mut text).expect("in-memory write");
    let back = parse_trace(text.as_slice(), 64)?;
    assert_eq!(back, corpus[0].trace);
    let first = String::from_utf8_lossy(&text);
    println!("\nfirst records of trace 0:");
    for line in first.lines().take(3) {
        println!("  {}", &line[..line.len().min(72)]);
    }
    Ok(())
}
