//! Sweep the match threshold R over a small device population and print the
//! rate table as CSV.
//!
//! ```text
//! cargo run --release --example tuning
//! ```

use puftrack::experiments::{run_tuning, TuningConfig};
use puftrack::puf::PufParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_tuning(&TuningConfig::default())?;
    print!("{}", report.to_csv());

    // Two-bit responses collide often enough to show a nonzero FAR below R=9.
    let narrow = TuningConfig {
        r_min: 1,
        r_max: 10,
        puf: PufParams::new(2, 0.002)?,
        ..TuningConfig::default()
    };
    for row in run_tuning(&narrow)?.rows.iter().filter(|r| r.puf_index == 5) {
        println!("W=2 device {} R={:2} FAR={:.4}", row.puf_index, row.r, row.far);
    }
    Ok(())
}
