//! Load a model from a TOML file and compute R0 at a few diffusion rates.
use spatial_r0::cli::load_model_str;
use spatial_r0::dfe::solve_dfe;
use spatial_r0::grid::Grid;
use spatial_r0::limits::{averaged_limit, local_r0_profile};
use spatial_r0::r0::compute_r0;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/models/logistic.toml");
    let loaded = load_model_str(&std::fs::read_to_string(path)?, path)?;
    let (a, b) = loaded.model.domain();
    let grid = Grid::new(a, b, 513)?;
    println!("{}: compartments {:?}", loaded.model.name(), loaded.model.names());
    println!("small limit {:.6}, large limit {:.6}",
        local_r0_profile(&loaded.model, &grid)?.max, averaged_limit(&loaded.model, &grid)?.value);
    for d in [1e-4, 1e-1, 1e2] {
        let model = loaded.with_d(&[d])?;
        let dfe = solve_dfe(&model, &grid)?;
        println!("d = {d:e}: R0 = {:.6}", compute_r0(&model, &grid, &dfe, 1e-10)?.value);
    }
    Ok(())
}
