//! A diffusion sweep over a log-spaced schedule on several threads.
use spatial_r0::grid::Grid;
use spatial_r0::limits::{log_schedule, sweep, SweepOptions};
use spatial_r0::models::{random_builtin, BuiltinKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let b = random_builtin(BuiltinKind::Staged, 3, 3)?;
    let grid = Grid::unit(513)?;
    let schedule = log_schedule(b.model.n(), -5.0, 3.0, 9);
    let opts = SweepOptions {
        jobs: 4,
        ..SweepOptions::default()
    };
    let report = sweep(&b.model, &grid, &schedule, &opts)?;
    for row in &report.rows {
        match (row.r0, row.envelope) {
            (Some(r0), Some((lo, hi))) => println!("d = {:>7.0e}  R0 = {r0:.8}  bracket [{lo:.4}, {hi:.4}]", row.diffusion[0]),
            _ => println!("d = {:>7.0e}  failed: {}", row.diffusion[0], row.error.as_deref().unwrap_or("?")),
        }
    }
    println!("limits: {:?} (d -> 0), {:?} (d -> inf)", report.small_limit, report.large_limit);
    println!("sign disagreements: {}", report.sign_violations(1e-10));
    Ok(())
}
