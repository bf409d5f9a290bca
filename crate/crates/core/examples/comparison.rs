//! Comparison principle: a larger cooperative reaction matrix gives a larger
//! solution from the same nonnegative data.
use nalgebra::dmatrix;
use spatial_r0::grid::Grid;
use spatial_r0::sim::comparison_test;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::unit(65)?;
    let p2: Vec<_> = grid.nodes().map(|x| dmatrix![-1.0 - x, 0.2; 0.5, -1.0]).collect();
    let p1: Vec<_> = p2.iter().map(|p| p + dmatrix![0.3, 0.0; 0.1, 0.0]).collect();
    let phi0 = vec![1.0; 2 * grid.len()];
    let rep = comparison_test(&p1, &p2, &grid, &[0.1, 1.0], &phi0, 5.0, 0.005)?;
    println!("passed {} over {} stored times, min slack {:.3e}", rep.passed, rep.times, rep.min_slack);
    Ok(())
}
