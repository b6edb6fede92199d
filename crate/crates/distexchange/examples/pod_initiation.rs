//! Pod initiation: a user links a fresh pod to the market by pushing its
//! web reference and default policy into the contract.
//!
//! ```bash
//! cargo run -p distexchange --example pod_initiation
//! ```

use distexchange::policy::{Obligation, PurposeTaxonomy};
use distexchange::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(1, PurposeTaxonomy::default_market());

    let address = sim.create_actor("alice")?;
    println!("alice joined the market as {address}");

    // Pods carry a default policy applied to resources published without
    // their own one; here: delete copies 30 days after acquisition.
    sim.init_pod(
        "alice",
        "pod://alice.example/store",
        vec![Obligation::retention(30 * 86_400)],
    )?;
    sim.drain();

    let record = &sim.ledger().contract().state().pods["pod://alice.example/store"];
    println!("pod registered on chain:");
    println!("  ref:    {}", record.pod_ref);
    println!("  owner:  {}", record.owner);
    println!(
        "  policy: v{} retention={:?}s",
        record.default_policy.version(),
        record.default_policy.retention()
    );

    println!("\noracle trace (one push-in, as the process prescribes):");
    for line in sim.trace_lines_from(0) {
        println!("  {line}");
    }
    println!("\nchain height: {}", sim.ledger().head().height);
    Ok(())
}
