//! Check the structural and pointwise assumptions for every built-in model.
use spatial_r0::dfe::solve_dfe;
use spatial_r0::grid::Grid;
use spatial_r0::model::check_assumptions;
use spatial_r0::models::{random_builtin, BuiltinKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::unit(129)?;
    for kind in BuiltinKind::ALL {
        let b = random_builtin(kind, 1, 3)?;
        let dfe = solve_dfe(&b.model, &grid)?;
        let report = check_assumptions(&b.model, &grid, &dfe, 32);
        println!("{}: {}", b.model.name(), if report.passed() { "pass" } else { "FAIL" });
        for item in &report.items {
            println!("  {:<18} {:?}", item.id, item.status);
        }
    }
    Ok(())
}
