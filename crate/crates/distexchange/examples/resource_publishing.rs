//! Resource initiation: an owner uploads content into their pod (content
//! addressed, local only) and then publishes it to the market index with a
//! purpose-restricted usage policy.
//!
//! ```bash
//! cargo run -p distexchange --example resource_publishing
//! ```

use distexchange::de_app::{Query, QueryResult};
use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(2, PurposeTaxonomy::default_market());
    sim.create_actor("bob")?;
    sim.init_pod("bob", "pod://bob.example/store", vec![])?;

    // Upload first: the resource exists only in the pod, not on the market.
    let rid = sim.put_resource("bob", "records", b"clinical-records-export".to_vec())?;
    println!("stored locally, id = content hash = {rid}");
    assert!(sim
        .ledger()
        .read_state(&Query::GetResourceInfo { resource_id: rid })
        .is_err());

    // Publish with a medical-only policy; the pod manager pushes the
    // metadata into the contract's index.
    sim.publish(
        "bob",
        "records",
        Some(vec![Obligation::purposes(vec![Purpose::new("medical")?])]),
    )?;
    sim.drain();

    match sim
        .ledger()
        .read_state(&Query::GetResourceInfo { resource_id: rid })?
    {
        QueryResult::ResourceInfo {
            pod_ref,
            policy,
            version,
        } => {
            println!("indexed on chain:");
            println!("  location: {pod_ref}");
            println!("  policy:   {policy:?}");
            println!("  version:  {version}");
        }
        other => println!("unexpected query result: {other:?}"),
    }

    println!("\noracle trace:");
    for line in sim.trace_lines_from(0) {
        println!("  {line}");
    }
    Ok(())
}
