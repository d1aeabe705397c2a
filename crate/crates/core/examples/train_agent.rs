//! Runs the test-profile pipeline up to PPO training, reusing any stage
//! outputs already present in the output directory.
//!
//! Run: cargo run --release --example train_agent [out_dir]

use pcmwrite::config::{MasterConfig, Profile};
use pcmwrite::pipeline::{files, Pipeline, Stage};

fn main() -> pcmwrite::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example".into());
    let mut cfg = MasterConfig::profile(Profile::Test, 1);
    cfg.out_dir = out.into();
    let p = Pipeline::new(cfg, 1)?;

    let needed = [
        (files::TRACE_INDEX, Stage::GenTraces),
        (files::DATASET, Stage::Sweep),
        (files::SURROGATE, Stage::TrainSurrogate),
    ];
    for (file, stage) in needed {
        if !p.out(file).exists() {
            eprintln!("running {}", stage.name());
            p.run(stage)?;
        }
    }

    let outcome = p.train_agent()?;
    for point in outcome.curve.iter().step_by(10) {
        println!("{:>7}  {:>9.1}", point.step, point.mean_episode_reward);
    }
    println!("policy saved to {}", p.out(files::POLICY).display());
    Ok(())
}
