//! Staged progression: closed-form R0 limits and the explicit inverse of
//! the averaged transfer matrix.
use spatial_r0::grid::Grid;
use spatial_r0::limits::averaged_limit;
use spatial_r0::models::{random_builtin, BuiltinKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::unit(257)?;
    for m in 1..=4 {
        let b = random_builtin(BuiltinKind::Staged, m as u64, m)?;
        let avg = averaged_limit(&b.model, &grid)?;
        let explicit = b.staged_v_inverse(&grid).expect("staged model")?;
        let numeric = avg.v_check.clone().try_inverse().expect("invertible");
        println!(
            "m = {m}: small {:.6}, large {:.6} (numeric {:.6}), |V^-1 - explicit| = {:.1e}",
            b.small_oracle(&grid)?,
            b.large_oracle(&grid)?,
            avg.value,
            (numeric - explicit).abs().max()
        );
    }
    Ok(())
}
