//! Small- and large-diffusion limits of R0 for a heterogeneous Zika model,
//! computed from the model and from the closed forms.
use spatial_r0::dfe::solve_dfe;
use spatial_r0::expr::parse_expression;
use spatial_r0::grid::Grid;
use spatial_r0::limits::{averaged_limit, local_r0_profile};
use spatial_r0::models::{make_zika, ZikaParams};
use spatial_r0::r0::compute_r0;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let e = |s| parse_expression(s, &["x"]);
    let zika = make_zika(
        ZikaParams {
            h_u: e("2 + cos(pi*x)")?,
            beta: e("1 + 0.5*x")?,
            ..ZikaParams::default()
        },
        (0.0, 1.0),
    )?;
    let grid = Grid::unit(2049)?;
    let local = local_r0_profile(&zika.model, &grid)?;
    let avg = averaged_limit(&zika.model, &grid)?;
    println!("small limit {:.10} at x = {} (closed form {:.10})", local.max, local.x_max, zika.small_oracle(&grid)?);
    println!("large limit {:.10} (closed form {:.10}), hypothesis {:?}", avg.value, zika.large_oracle(&grid)?, avg.hypothesis);
    for d in [1e-6, 1e4] {
        let model = zika.model.with_diffusion(&[d, d, d])?;
        let dfe = solve_dfe(&model, &grid)?;
        println!("R0 at d = {d:e}: {:.10}", compute_r0(&model, &grid, &dfe, 1e-10)?.value);
    }
    Ok(())
}
