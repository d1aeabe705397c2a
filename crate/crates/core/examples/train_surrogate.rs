//! Fits the three surrogate heads on a small sweep and reports held-out MAPE.
//!
//! Run: cargo run --release --example train_surrogate [surrogate.json]

use pcmwrite::device::DeviceConfig;
use pcmwrite::surrogate::{evaluate_mape, train, HeadKind, MlpSurrogate, TrainConfig};
use pcmwrite::sweep::{build_grid, encode, run_sweep, split, FeatureEncoder, SweepConfig, TargetTransform, DEFAULT_SPLIT};
use pcmwrite::trace::{generate_corpus, CorpusConfig, Trace};

fn main() -> pcmwrite::Result<()> {
    let device = DeviceConfig::default();
    let corpus = generate_corpus(
        &CorpusConfig {
            traces_per_scenario: 4,
            n_ops: 10_000,
            seed: 5,
            ..CorpusConfig::default()
        },
        device.line_bytes,
    )?;
    let traces: Vec<&Trace> = corpus.iter().map(|e| &e.trace).collect();
    let rows = run_sweep(&build_grid(&device, traces.len()), &traces, &device, &SweepConfig::default(), 1)?;

    let sp = split(rows.len(), DEFAULT_SPLIT, 9)?;
    let transforms = [TargetTransform::Log, TargetTransform::Log, TargetTransform::Identity];
    let data = encode(&rows, &FeatureEncoder::new(&device), sp, transforms)?;
    println!("{} rows: {} train / {} validation / {} test", rows.len(), data.split.train.len(), data.split.validation.len(), data.split.test.len());

    let mut model = MlpSurrogate::init(data.encoder.clone(), data.scalers, 17)?;
    let report = train(&mut model, &data, &TrainConfig { seed: 17, ..TrainConfig::default() })?;
    for kind in HeadKind::ALL {
        let epochs = report.for_head(kind).count();
        println!("{:<10} stopped after {epochs} epochs, best at {}", kind.name(), report.best_epoch[kind.index()]);
    }

    let mape = evaluate_mape(&model, &rows, &data.split.test)?;
    println!("held-out MAPE: energy {:.3}%  latency {:.3}%  endurance {:.2e}%", mape[0], mape[1], mape[2]);

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, model.to_json()?).map_err(|e| pcmwrite::Error::io(&path, e))?;
        println!("saved {path}");
    }
    Ok(())
}
