//! Scenario replay: the bundled two-user scenario is fully deterministic —
//! running it twice yields byte-identical reports and the same final chain
//! head, which is what the test suite relies on.
//!
//! ```bash
//! cargo run -p distexchange --example scenario_replay
//! ```

use distexchange::harness::{parse_scenario, run_scenario};

const SCENARIO: &str = include_str!("../scenarios/alice_bob.scn");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = parse_scenario(SCENARIO, "alice_bob")?;
    println!(
        "scenario: {} steps, seed {}",
        scenario.steps.len(),
        scenario.seed
    );

    let first = run_scenario(&scenario)?;
    let second = run_scenario(&scenario)?;

    println!("run 1 head: {}", first.final_head_hash);
    println!("run 2 head: {}", second.final_head_hash);
    println!(
        "reports byte-identical: {}",
        first.render() == second.render()
    );

    println!("\nstep outcomes:");
    for line in &first.steps {
        println!("  {line}");
    }

    println!("\nend-of-run checks:");
    for assertion in &first.assertions {
        match &assertion.failure {
            None => println!("  {} ok", assertion.name),
            Some(f) => println!("  {} FAIL {f}", assertion.name),
        }
    }
    Ok(())
}
