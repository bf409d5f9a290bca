//! Parse a rate expression, differentiate it symbolically and evaluate.
use spatial_r0::expr::parse_expression;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names = ["x", "I", "S"];
    let incidence = parse_expression("(2 + cos(pi*x)) * S * I / (S + I)", &names)?;
    let states: Vec<String> = names[1..].iter().map(|s| s.to_string()).collect();
    println!("f        = {}", incidence.display_with(&states));
    for (i, name) in states.iter().enumerate() {
        let d = incidence.d_state(i);
        println!("df/d{name:<4} = {}", d.display_with(&states));
        // at the disease-free state (I = 0, S = 1)
        println!("  at x=0.25, I=0, S=1: {}", d.eval(0.25, &[0.0, 1.0])?);
    }
    match parse_expression("beta * S", &names) {
        Err(e) => println!("error: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
