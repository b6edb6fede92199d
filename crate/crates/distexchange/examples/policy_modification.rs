//! Policy modification: the owner tightens a retention obligation after a
//! consumer already holds a copy. The contract notifies every copy holder
//! via push-out; the holder's sandbox reschedules the deadline and deletes
//! the copy the moment it passes.
//!
//! ```bash
//! cargo run -p distexchange --example policy_modification
//! ```

use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::tee::UseOutcome;
use distexchange::Simulation;

const DAY: u64 = 86_400;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(4, PurposeTaxonomy::default_market());
    sim.create_actor("alice")?;
    sim.init_pod("alice", "pod://alice.example/store", vec![])?;
    sim.put_resource("alice", "browsing", b"web-browsing-history".to_vec())?;
    // Initial policy: delete copies 30 days after acquisition.
    sim.publish(
        "alice",
        "browsing",
        Some(vec![Obligation::retention(30 * DAY)]),
    )?;

    sim.create_actor("bob")?;
    sim.pay_fee("bob", "browsing")?;
    let analytics = Purpose::new("web-analytics")?;
    sim.acquire("bob", "browsing", analytics.clone())?;
    sim.drain();

    let rid = sim.resource_id("browsing").unwrap();
    println!(
        "day 0: bob acquired a copy, deadline at t={:?}",
        sim.tee("bob").unwrap().entry(&rid).unwrap().expiry()
    );

    // Day 2: alice shortens retention to one week. The push-out notice
    // reaches bob's sandbox during the drain.
    sim.advance_to(2 * DAY)?;
    let mark = sim.trace_len();
    sim.update_policy("alice", "browsing", vec![Obligation::retention(7 * DAY)])?;
    sim.drain();
    println!("\nday 2: retention tightened to one week; oracle trace:");
    for line in sim.trace_lines_from(mark) {
        println!("  {line}");
    }
    println!(
        "bob's local snapshot is now v{}, deadline moved to t={:?}",
        sim.tee("bob")
            .unwrap()
            .entry(&rid)
            .unwrap()
            .policy
            .version(),
        sim.tee("bob").unwrap().entry(&rid).unwrap().expiry()
    );

    // Day 3: still usable.
    sim.advance_to(3 * DAY)?;
    let outcome = sim.use_resource("bob", "browsing", &analytics, false)?;
    println!("\nday 3 use: {}", render(&outcome));

    // Day 7: the clock tick deletes the copy exactly on the deadline.
    let deletions = sim.advance_to(7 * DAY)?;
    println!("day 7 tick deletions: {deletions:?}");
    let entry = sim.tee("bob").unwrap().entry(&rid).unwrap();
    println!(
        "entry deleted={} reason={:?} content-bytes={}",
        entry.deleted,
        entry.deletion_reason,
        entry.content.len()
    );

    // Day 10: any further use is denied.
    sim.advance_to(10 * DAY)?;
    let outcome = sim.use_resource("bob", "browsing", &analytics, false)?;
    println!("day 10 use: {}", render(&outcome));
    Ok(())
}

fn render(outcome: &UseOutcome) -> String {
    match outcome {
        UseOutcome::Content(bytes) => format!("allowed ({} bytes)", bytes.len()),
        UseOutcome::Denied(reason) => format!("denied ({reason})"),
    }
}
