//! Paired comparison of the trained agent, the mid-grid baseline and the
//! best fixed action, after `train_agent` has populated the output directory.
//!
//! Run: cargo run --release --example evaluate [out_dir]

use pcmwrite::config::{MasterConfig, Profile};
use pcmwrite::pipeline::{files, Pipeline};
use pcmwrite::report::Metric;

fn main() -> pcmwrite::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example".into());
    let mut cfg = MasterConfig::profile(Profile::Test, 1);
    cfg.out_dir = out.into();
    let p = Pipeline::new(cfg, 1)?;
    let report = p.evaluate()?;

    println!("temp  metric          agent   oracle   (% reduction vs baseline)");
    for r in &report.reductions {
        println!("{:>4}  {:<14} {:>6.1}   {:>6.1}", r.temperature, r.metric.name(), r.agent, r.oracle);
    }
    println!();
    for s in &report.reward_stats {
        println!("{}  reward {:>8.1} ± {:<7.1} (n={})", s.scenario, s.mean, s.sd, s.n);
    }
    println!();
    for c in &report.oracle_checks {
        println!(
            "{:>4} {}  agent {:?} vs oracle {:?}: predicted gap {:.4}, ground-truth gap {:.4}",
            c.temperature,
            c.scenario,
            c.greedy_action.as_array(),
            c.oracle_action.as_array(),
            c.predicted_gap(),
            c.ground_truth_gap()
        );
    }
    let we = report.reduction(75.0, Metric::WriteEnergy).map(|r| r.agent);
    println!("\nwrite-energy reduction at 75 °C: {we:?}");
    println!("tables in {}", p.out(files::REPORT).display());
    Ok(())
}
