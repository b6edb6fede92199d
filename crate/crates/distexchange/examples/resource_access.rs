//! Resource indexing and access: a consumer pulls the resource link and
//! policy from the contract, pays the market fee for a certificate, and
//! fetches the bytes from the owner's pod manager into trusted storage.
//! The pod manager reports the new copy holder on chain.
//!
//! ```bash
//! cargo run -p distexchange --example resource_access
//! ```

use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(3, PurposeTaxonomy::default_market());
    sim.create_actor("bob")?;
    sim.init_pod("bob", "pod://bob.example/store", vec![])?;
    sim.put_resource("bob", "records", b"clinical-records-export".to_vec())?;
    sim.publish(
        "bob",
        "records",
        Some(vec![Obligation::purposes(vec![Purpose::new("medical")?])]),
    )?;

    // Alice is a healthcare researcher interested in Bob's records.
    sim.create_actor("alice")?;
    sim.drain();

    // Indexing: read the link and policy straight from the contract.
    let pod_ref = sim.lookup_resource("alice", "records")?;
    println!("resource lives at {pod_ref}");

    // Paying the fee yields a certificate the pod manager will verify.
    sim.pay_fee("alice", "records")?;
    let rid = sim.resource_id("records").unwrap();
    let cert = sim.tee("alice").unwrap().certificate(&rid).unwrap().clone();
    println!(
        "fee certificate: consumer={} issued-at-block={}",
        cert.consumer, cert.issued_at
    );

    // Access: fetch the resource into trusted storage under its policy.
    let purpose = Purpose::new("medical-research-university-hospital")?;
    sim.acquire("alice", "records", purpose.clone())?;
    sim.drain();

    let entry = sim.tee("alice").unwrap().entry(&rid).unwrap();
    println!(
        "copy in trusted storage: {} bytes, policy v{}",
        entry.content.len(),
        entry.policy.version()
    );

    // Local use is gated by the policy: medical research passes, web
    // analytics does not.
    let ok = sim.use_resource("alice", "records", &purpose, false)?;
    println!(
        "use for {purpose}: {}",
        if ok.is_allowed() { "allowed" } else { "denied" }
    );
    let analytics = Purpose::new("web-analytics")?;
    let denied = sim.use_resource("alice", "records", &analytics, false)?;
    println!(
        "use for {analytics}: {}",
        if denied.is_allowed() {
            "allowed"
        } else {
            "denied"
        }
    );

    // The contract now knows alice holds a copy.
    let holders = &sim.ledger().contract().state().resources[&rid].copy_holders;
    println!("on-chain copy holders: {holders:?}");

    println!("\nusage log:");
    print!("{}", sim.tee("alice").unwrap().export_log());
    Ok(())
}
