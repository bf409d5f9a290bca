//! R0 of the heterogeneous SIS model across diffusion rates, with the sign
//! relation between R0 - 1 and s(B + F).
use spatial_r0::dfe::solve_dfe;
use spatial_r0::grid::Grid;
use spatial_r0::models::{make_sis, SisParams};
use spatial_r0::r0::{sign_check, compute_r0};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sis = make_sis(SisParams::default(), (0.0, 1.0))?;
    let grid = Grid::unit(1025)?;
    println!("beta = 2 + cos(pi x), gamma = 1: limits {} (d -> 0) and {} (d -> inf)",
        sis.small_oracle(&grid)?, sis.large_oracle(&grid)?);
    println!("{:>10} {:>14} {:>14} {:>6}", "d", "R0", "s(B+F)", "agree");
    for p in -6..=4 {
        let d = 10f64.powi(p);
        let model = sis.model.with_diffusion(&[d, d])?;
        let dfe = solve_dfe(&model, &grid)?;
        let r0 = compute_r0(&model, &grid, &dfe, 1e-10)?;
        let sign = sign_check(&model, &grid, &dfe, 1e-10)?;
        println!("{d:>10.0e} {:>14.10} {:>14.10} {:>6}", r0.value, sign.bound, sign.agree);
    }
    Ok(())
}
