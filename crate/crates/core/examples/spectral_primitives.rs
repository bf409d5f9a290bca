//! Spectral radius, spectral bound and irreducibility on small matrices.
use nalgebra::dmatrix;
use spatial_r0::banded::BandMatrix;
use spatial_r0::spectral::{
    is_irreducible, spectral_bound_cooperative, spectral_bound_is_negative, spectral_radius_nonneg,
    BoundOptions, PowerOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = dmatrix![2.0, 0.0; 1.0, 0.0];
    let r = spectral_radius_nonneg(&k, &PowerOptions::default())?;
    println!("r({k}) = {} with eigenvector {:?}", r.value, r.vector);

    let a = BandMatrix::from_dense(&dmatrix![-2.0, 1.0; 1.0, -2.0]);
    let s = spectral_bound_cooperative(&a, &BoundOptions::default())?;
    println!("s = {} ({} iterations), negative: {}", s.value, s.iterations, spectral_bound_is_negative(&a)?);

    let cycle = [vec![false, true], vec![true, false]];
    let chain = [vec![false, false], vec![true, false]];
    println!("2-cycle irreducible: {}, one-way chain irreducible: {}", is_irreducible(&cycle), is_irreducible(&chain));
    Ok(())
}
