//! Temperature-adjusted pulse energies and a single differential write.
//!
//! Run: cargo run --example device_model

use pcmwrite::device::{adjusted_voltage, pulse_energy, DeviceConfig, PulseKind, WriteCost, WriteParams};

fn main() -> pcmwrite::Result<()> {
    let cfg = DeviceConfig::default();

    println!("RESET at 3.5 V, alpha {}:", cfg.alpha_reset);
    for &t in &cfg.temperature_grid {
        println!("  {t:>4} °C -> {:.3} V", adjusted_voltage(3.5, cfg.alpha_reset, t, &cfg)?);
    }

    let corners = [("lowest", WriteParams::new(0, 0, 0, 0)), ("mid", WriteParams::mid()), ("highest", WriteParams::new(2, 2, 2, 2))];
    println!("\nper-bit energy (pJ)   SET        RESET");
    for (name, p) in corners {
        for &t in &cfg.temperature_grid {
            let set = pulse_energy(PulseKind::Set, p, t, &cfg)?;
            let reset = pulse_energy(PulseKind::Reset, p, t, &cfg)?;
            println!("  {name:<8} {t:>4} °C  {set:>9.1}  {reset:>9.1}");
        }
    }

    // Only bits that change are programmed.
    let old = vec![0b1010_1010u8; cfg.line_bytes];
    let mut new = old.clone();
    new[0] = 0b0101_0101;
    new[1] = 0xff;
    let cost = WriteCost::new(WriteParams::mid(), 50.0, &cfg)?;
    let out = cost.apply(&old, &new)?;
    println!(
        "\nwrite at 50 °C: {} SET, {} RESET, {:.1} pJ, {:.2} ns",
        out.bits_set, out.bits_reset, out.energy, out.latency
    );
    Ok(())
}
