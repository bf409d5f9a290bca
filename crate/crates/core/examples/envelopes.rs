//! Envelope matrices around the small-diffusion profile, the R0 bracket they
//! give, and the auxiliary eigenvalue λ(a).
use spatial_r0::grid::Grid;
use spatial_r0::limits::{
    auxiliary_lambda, auxiliary_lambda_pointwise, envelope_bounds, envelopes, Reference,
};
use spatial_r0::models::{random_builtin, BuiltinKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let b = random_builtin(BuiltinKind::VectorHost, 7, 3)?;
    let grid = Grid::unit(257)?;
    for eps in [0.0, 0.01, 0.05] {
        let env = envelopes(&b.model, &grid, &Reference::SmallLimit, eps)?;
        let (low, high) = envelope_bounds(&env)?;
        println!("eps = {eps}: R0 in [{low:.6}, {high:.6}]");
    }
    let model = b.model.with_diffusion(&[1e-6; 4])?;
    let env = envelopes(&model, &grid, &Reference::SmallLimit, 0.01)?;
    for a in [0.5, 1.0, 1.5, 2.0] {
        let l = auxiliary_lambda(&model, &grid, &env, a, 1e-10)?;
        println!("lambda({a}) = {:.6}   pointwise max {:.6}", l.value, auxiliary_lambda_pointwise(&env, a));
    }
    Ok(())
}
