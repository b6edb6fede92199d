//! Resource indexing: a consumer's trusted application reads a resource's
//! web link and usage policy directly from the contract via the pull-out
//! oracle. No transaction is created and the chain state is untouched.
//!
//! ```bash
//! cargo run -p distexchange --example resource_indexing
//! ```

use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(6, PurposeTaxonomy::default_market());
    sim.create_actor("bob")?;
    sim.init_pod("bob", "pod://bob.example/store", vec![])?;
    sim.put_resource("bob", "records", b"clinical-records-export".to_vec())?;
    sim.publish(
        "bob",
        "records",
        Some(vec![Obligation::purposes(vec![Purpose::new("medical")?])]),
    )?;
    sim.create_actor("alice")?;
    sim.drain();

    let head_before = sim.ledger().head().block_hash;
    let state_before = sim.ledger().state_hash();
    let mark = sim.trace_len();

    // Alice does not know where the resource lives; her trusted app asks
    // the contract and caches the locator for the later physical fetch.
    let pod_ref = sim.lookup_resource("alice", "records")?;
    let rid = sim.resource_id("records").unwrap();

    println!("locator pulled from the contract: {pod_ref}");
    println!(
        "cached in alice's sandbox: {:?}",
        sim.tee("alice").unwrap().locator(&rid)
    );

    println!("\noracle trace (a single pull-out, no transactions):");
    for line in sim.trace_lines_from(mark) {
        println!("  {line}");
    }

    println!(
        "\nchain head unchanged: {}",
        sim.ledger().head().block_hash == head_before
    );
    println!(
        "contract state unchanged: {}",
        sim.ledger().state_hash() == state_before
    );
    Ok(())
}
