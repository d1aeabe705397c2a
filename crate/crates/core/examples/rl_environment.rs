//! Steps the write-parameter environment by hand.
//!
//! Needs a trained surrogate, e.g. from `train_surrogate` or a pipeline run:
//!   cargo run --release --example rl_environment -- out/surrogate.json

use std::sync::Arc;

use pcmwrite::device::{DeviceConfig, WriteParams};
use pcmwrite::env::{EnvConfig, Environment, WriteEnv};
use pcmwrite::surrogate::MlpSurrogate;
use pcmwrite::trace::Scenario;

fn main() -> pcmwrite::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: rl_environment <surrogate.json>");
        std::process::exit(2);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| pcmwrite::Error::io(&path, e))?;
    let surrogate = Arc::new(MlpSurrogate::from_json(&text)?);

    let cfg = EnvConfig {
        episode_len: 1_000,
        scenario: Some(Scenario::WriteHeavy),
        temperature: Some(75.0),
        ..EnvConfig::default()
    };
    let mut env = WriteEnv::new(DeviceConfig::default(), cfg, surrogate)?;

    // The same seed gives the same op stream, so the two runs are comparable.
    for (name, action) in [("baseline", WriteParams::mid()), ("lowest", WriteParams::new(0, 0, 0, 0))] {
        let mut obs = env.reset(7)?;
        println!("{name:<8} reset obs {obs:?}");
        let mut reward = 0.0;
        let mut steps = 0;
        loop {
            let s = env.step(action.as_array())?;
            reward += s.reward;
            steps += 1;
            obs = s.observation;
            if s.done {
                break;
            }
        }
        let t = env.totals()?;
        let pred = env.predict(action)?;
        println!("{name:<8} steps {steps}  reward {reward:>8.2}  final obs tail {:?}", &obs[12..]);
        println!(
            "         device model: {:.3e} pJ write energy, {:.0} ns write latency; surrogate (corpus-length horizon): {:.3e} pJ",
            t.write_energy, t.write_latency, pred.energy
        );
    }
    Ok(())
}
