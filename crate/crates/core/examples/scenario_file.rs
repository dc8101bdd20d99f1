//! Load a scenario from TOML text and run it for a few seeds.
//!
//! ```text
//! cargo run --example scenario_file
//! ```

use puftrack::experiments::run_attack_matrix;
use puftrack::scenario::Scenario;

const SCENARIO: &str = r#"
name = "blame-on-a-short-chain"
seed = 9
parties = 5
edges = [[0, 1], [1, 2], [2, 3], [0, 4]]

[puf]
width = 8
noise_rate = 0.002

[[items]]
path = [0, 4]

[attack]
controlled_party = 2
path = [0, 1, 2, 3]
attack = { kind = "blame-supplier" }
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::parse(SCENARIO, "inline.toml")?;
    println!("{}", scenario.run(scenario.seed)?.to_json());

    let matrix = run_attack_matrix(&[scenario], None, Some(10))?;
    print!("{}", matrix.to_csv());

    let err = Scenario::parse("seed = \"nine\"\n", "broken.toml").unwrap_err();
    println!("{err}");
    Ok(())
}
