//! Finite-difference check of the dense kernel and the HPN-NC composite.

fn main() -> hpn_servo::Result<()> {
    let report = hpn_servo::gradcheck::run(0)?;
    for c in &report.checks {
        println!("{:<28} {:>6} entries  {:.2e}", c.label, c.entries, c.max_rel_error);
    }
    println!("max {:.2e} -> {}", report.max_rel_error, if report.passed() { "ok" } else { "FAILED" });
    Ok(())
}
