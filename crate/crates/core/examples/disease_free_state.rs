//! Solve for the disease-free state of the Zika model and compare it with the
//! small- and large-diffusion profiles.
use spatial_r0::dfe::{dfe_large_limit, dfe_small_limit, solve_dfe};
use spatial_r0::expr::parse_expression;
use spatial_r0::grid::Grid;
use spatial_r0::models::{make_zika, ZikaParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let zika = make_zika(
        ZikaParams {
            beta: parse_expression("1 + 0.5*cos(pi*x)", &["x"])?,
            ..ZikaParams::default()
        },
        (0.0, 1.0),
    )?;
    let grid = Grid::unit(513)?;
    let c = dfe_small_limit(&zika.model, &grid)?;
    let u = dfe_large_limit(&zika.model, &grid)?;
    for d in [1e-5, 1e-2, 1.0, 1e4] {
        let model = zika.model.with_diffusion(&[1.0, 1.0, d])?;
        let dfe = solve_dfe(&model, &grid)?;
        let to_large = dfe.fields[0].iter().map(|v| (v - u[0]).abs()).fold(0.0, f64::max);
        println!(
            "d_Vu = {d:>7.0e}: {:?} in {} iterations, residual {:.1e}, |u0 - c| = {:.2e}, |u0 - u~| = {:.2e}",
            dfe.method,
            dfe.iterations,
            dfe.residual,
            dfe.distance(&c),
            to_large
        );
    }
    Ok(())
}
