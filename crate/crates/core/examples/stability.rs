//! Perturb the disease-free state of SIS and watch the infection die out
//! (R0 < 1) or grow (R0 > 1).
use spatial_r0::dfe::solve_dfe;
use spatial_r0::expr::parse_expression;
use spatial_r0::grid::Grid;
use spatial_r0::models::{make_sis, SisParams};
use spatial_r0::r0::compute_r0;
use spatial_r0::sim::{dfe_stability_test, StabilityMode, DEFAULT_AMPLITUDE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::unit(129)?;
    for (beta, mode) in [("0.5 + 0.25*x", StabilityMode::Decay), ("2", StabilityMode::Growth)] {
        let sis = make_sis(
            SisParams {
                beta: parse_expression(beta, &["x"])?,
                ..SisParams::default()
            },
            (0.0, 1.0),
        )?;
        let model = sis.model.with_diffusion(&[0.1, 0.1])?;
        let dfe = solve_dfe(&model, &grid)?;
        let r0 = compute_r0(&model, &grid, &dfe, 1e-10)?.value;
        let rep = dfe_stability_test(&model, &grid, &dfe, DEFAULT_AMPLITUDE, 10.0, 0.01, mode)?;
        println!(
            "beta = {beta}: R0 = {r0:.4}, infected {:.3e} -> {:.3e}, distance ratio {:.3e}, passed {}",
            rep.infected[0],
            rep.infected.last().unwrap(),
            rep.decay_ratio(),
            rep.passed
        );
    }
    Ok(())
}
