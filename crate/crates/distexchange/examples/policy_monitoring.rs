//! Policy monitoring: the owner audits compliance. The contract pulls
//! signed evidence from every copy holder and pushes the bundle back; a
//! device that ignored a policy update reports a stale version and is
//! flagged as a violation.
//!
//! ```bash
//! cargo run -p distexchange --example policy_monitoring
//! ```

use distexchange::de_app::{Query, QueryResult};
use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::tee::TeeMode;
use distexchange::Simulation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(5, PurposeTaxonomy::default_market());
    sim.create_actor("owner")?;
    sim.init_pod("owner", "pod://owner.example/store", vec![])?;
    sim.put_resource("owner", "dataset", b"sensor-readings".to_vec())?;
    sim.publish(
        "owner",
        "dataset",
        Some(vec![Obligation::purposes(vec![Purpose::new("academic")?])]),
    )?;

    for name in ["carol", "dave"] {
        sim.create_actor(name)?;
        sim.pay_fee(name, "dataset")?;
        sim.acquire(name, "dataset", Purpose::new("academic-research")?)?;
    }
    sim.drain();

    // First audit: everyone is honest and the bundle comes back complete.
    let mark = sim.trace_len();
    let first = sim.start_monitoring("owner", "dataset")?;
    sim.drain();
    println!("honest audit, oracle trace:");
    for line in sim.trace_lines_from(mark) {
        println!("  {line}");
    }
    print_monitor(&sim, first);

    // Dave's device stops applying updates; the owner changes the policy
    // and audits again after the update has aged past the grace window.
    sim.set_dishonest("dave", TeeMode::IgnoreUpdates)?;
    sim.update_policy(
        "owner",
        "dataset",
        vec![
            Obligation::purposes(vec![Purpose::new("academic")?]),
            Obligation::retention(14 * 86_400),
        ],
    )?;
    sim.drain();
    sim.seal_block();
    sim.seal_block();

    let second = sim.start_monitoring("owner", "dataset")?;
    sim.drain();
    println!("\nsecond audit with a dishonest device:");
    print_monitor(&sim, second);

    println!("\nowner's local view:");
    for (id, outcome) in sim.pod("owner").unwrap().monitors() {
        match outcome {
            distexchange::pod::MonitorOutcome::Complete { bundle } => {
                println!(
                    "  monitor {id}: complete, {} evidences in bundle",
                    bundle.len()
                );
            }
            other => println!("  monitor {id}: {other:?}"),
        }
    }
    Ok(())
}

fn print_monitor(sim: &Simulation, monitor_id: u64) {
    let QueryResult::Monitor { record } = sim
        .ledger()
        .read_state(&Query::GetMonitor { monitor_id })
        .expect("monitor exists")
    else {
        unreachable!()
    };
    println!("monitor {monitor_id}: status={:?}", record.status);
    for (holder, evidence) in &record.evidence {
        println!(
            "  evidence from {holder}: policy-version={} violations={} log-digest={}",
            evidence.reported_policy_version, evidence.violation_count, evidence.log_digest
        );
    }
}
