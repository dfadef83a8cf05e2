//! Compare campaign costs of clickstream-based quality control with the
//! usual alternatives and find where they break even.
//!
//! Run: `cargo run --example campaign_costs [params.toml]`

use clickqc::cost::{break_even_methods, CostMethod, CostParams};

const PARAMS: &str = include_str!("../configs/cost_params.toml");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => PARAMS.to_string(),
    };
    let params = CostParams::from_toml(&text)?;
    for m in CostMethod::ALL {
        let f = params.affine(m);
        println!("{m:<15} cost(a) = {:.4} a + {:.1}", f.slope, f.intercept);
    }
    for (a, b) in [(CostMethod::Proposed, CostMethod::Baseline), (CostMethod::Proposed, CostMethod::ManualGrading)] {
        match break_even_methods(&params, a, b)? {
            Some(n) => println!("{a} becomes cheaper than {b} from {n} annotated images"),
            None => println!("{a} never becomes cheaper than {b}"),
        }
    }
    print!("\n{}", params.cost_table(20_000, 2_500, 1.0));
    Ok(())
}
