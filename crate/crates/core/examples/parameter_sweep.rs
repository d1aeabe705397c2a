//! Simulates the full parameter grid over a few traces and writes the dataset.
//!
//! Run: cargo run --release --example parameter_sweep [out.csv]

use pcmwrite::device::DeviceConfig;
use pcmwrite::sweep::{build_grid, run_sweep, write_dataset_csv, SweepConfig};
use pcmwrite::trace::{generate_corpus, CorpusConfig, Trace};

fn main() -> pcmwrite::Result<()> {
    let device = DeviceConfig::default();
    let corpus = generate_corpus(
        &CorpusConfig {
            traces_per_scenario: 1,
            n_ops: 5_000,
            seed: 3,
            ..CorpusConfig::default()
        },
        device.line_bytes,
    )?;
    let traces: Vec<&Trace> = corpus.iter().map(|e| &e.trace).collect();
    let grid = build_grid(&device, traces.len());
    let rows = run_sweep(&grid, &traces, &device, &SweepConfig::default(), 2)?;
    println!("{} grid points x {} traces = {} rows", grid.len() / traces.len(), traces.len(), rows.len());

    let by_energy = |a: &&pcmwrite::sweep::DatasetRow, b: &&pcmwrite::sweep::DatasetRow| {
        a.total_write_energy.total_cmp(&b.total_write_energy)
    };
    let cheapest = rows.iter().min_by(by_energy).expect("non-empty sweep");
    let dearest = rows.iter().max_by(by_energy).expect("non-empty sweep");
    println!("cheapest: {cheapest:?}");
    println!("dearest:  {dearest:?}");

    if let Some(path) = std::env::args().nth(1) {
        let file = std::fs::File::create(&path).map_err(|e| pcmwrite::Error::io(&path, e))?;
        write_dataset_csv(&rows, file)?;
        println!("wrote {path}");
    }
    Ok(())
}
