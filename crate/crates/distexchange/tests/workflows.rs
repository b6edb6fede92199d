//! Cross-component workflow tests: acquisition failure paths, the pull-in
//! timeout with a silent device, revocation through the reserved purpose,
//! and the bundled violation scenario.

use distexchange::de_app::{MonitorStatus, Query, QueryResult};
use distexchange::harness::{parse_scenario, run_scenario, Simulation};
use distexchange::identity::content_hash;
use distexchange::pod::{AccessDenied, MonitorOutcome};
use distexchange::policy::{Obligation, Purpose, PurposeTaxonomy};
use distexchange::tee::{DeletionReason, DenyReason, LogAction, TeeError};

fn purpose(token: &str) -> Purpose {
    Purpose::new(token).unwrap()
}

fn market_with_dataset() -> Simulation {
    let mut sim = Simulation::new(11, PurposeTaxonomy::default_market());
    sim.create_actor("owner").unwrap();
    sim.init_pod("owner", "pod://owner.example/store", vec![])
        .unwrap();
    sim.put_resource("owner", "data", b"payload".to_vec())
        .unwrap();
    sim.publish(
        "owner",
        "data",
        Some(vec![Obligation::purposes(vec![purpose("academic")])]),
    )
    .unwrap();
    sim.create_actor("holder").unwrap();
    sim.drain();
    sim
}

#[test]
fn acquiring_an_unindexed_resource_is_not_found() {
    let mut sim = market_with_dataset();
    // Stored in the pod but never published: the pull-out finds nothing.
    sim.put_resource("owner", "private", b"secret".to_vec())
        .unwrap();
    let err = sim.acquire("holder", "private", purpose("academic-research"));
    match err {
        Err(distexchange::harness::SimError::Tee(TeeError::NotFound)) => {}
        other => panic!("expected NotFound, got {other:?}"),
    }
}

#[test]
fn acquisition_without_certificate_leaves_no_entry() {
    let mut sim = market_with_dataset();
    // No PAY_FEE: the pod manager refuses and the sandbox records only a
    // denied line.
    let err = sim.acquire("holder", "data", purpose("academic-research"));
    match err {
        Err(distexchange::harness::SimError::Tee(TeeError::PodDenied(
            AccessDenied::NoCertificate,
        ))) => {}
        other => panic!("expected pod denial, got {other:?}"),
    }
    let rid = sim.resource_id("data").unwrap();
    let tee = sim.tee("holder").unwrap();
    assert!(tee.entry(&rid).is_none());
    let lines: Vec<_> = tee.log().iter().filter(|e| e.resource_id == rid).collect();
    assert_eq!(lines.len(), 1);
    assert!(matches!(
        &lines[0].action,
        LogAction::Denied {
            reason: DenyReason::AccessRefused,
            ..
        }
    ));
}

#[test]
fn silent_device_times_out_and_surfaces_to_the_requester() {
    let mut text = String::from(
        "seed 3\ntaxonomy default\n\
         0 owner CREATE_ACTOR\n\
         0 holder CREATE_ACTOR\n\
         0 owner INIT_POD pod://owner.example/store\n\
         0 owner PUT_RESOURCE data payload\n\
         0 owner PUBLISH data purpose=academic\n\
         0 holder PAY_FEE data\n\
         0 holder ACQUIRE data academic-research\n\
         0 holder SET_DISHONEST silent\n\
         0 owner MONITOR data\n",
    );
    // Let more than the pull-in timeout's worth of steps elapse.
    for i in 1..=12u64 {
        text.push_str(&format!("{} - TICK\n", i * 3600));
    }
    let scenario = parse_scenario(&text, "silent").unwrap();
    let taxonomy = PurposeTaxonomy::default_market();
    let mut sim = Simulation::new(scenario.seed, taxonomy);
    sim.run_steps(&scenario).unwrap();

    let holder = sim.actor_address("holder").unwrap();
    // The chain record stays open: no evidence ever arrived.
    let QueryResult::Monitor { record } = sim
        .ledger()
        .read_state(&Query::GetMonitor { monitor_id: 1 })
        .unwrap()
    else {
        panic!("monitor query shape");
    };
    assert_eq!(record.status, MonitorStatus::Open);
    assert_eq!(record.pending.len(), 1);
    assert!(record.evidence.is_empty());

    // The requesting pod manager saw the timeout as a non-response.
    assert_eq!(
        sim.pod("owner").unwrap().monitor_outcome(1),
        Some(&MonitorOutcome::TimedOut { holder })
    );
    let report = sim.report("silent");
    assert!(report.trace.iter().any(|l| l.contains("evidence_timeout")));
    assert!(report.all_assertions_pass(), "{}", report.render());
}

#[test]
fn revocation_purpose_wipes_remote_copies() {
    let mut sim = market_with_dataset();
    sim.pay_fee("holder", "data").unwrap();
    sim.acquire("holder", "data", purpose("academic-research"))
        .unwrap();
    sim.drain();

    let rid = sim.resource_id("data").unwrap();
    assert!(!sim.tee("holder").unwrap().entry(&rid).unwrap().deleted);

    // Granting exactly the reserved `revoked` purpose withdraws the copy.
    sim.update_policy(
        "owner",
        "data",
        vec![Obligation::purposes(vec![purpose("revoked")])],
    )
    .unwrap();
    sim.drain();

    let entry = sim.tee("holder").unwrap().entry(&rid).unwrap();
    assert!(entry.deleted);
    assert_eq!(entry.deletion_reason, Some(DeletionReason::Revoked));
    assert!(entry.content.is_empty());

    // Any further use is denied.
    let outcome = sim
        .use_resource("holder", "data", &purpose("academic-research"), false)
        .unwrap();
    assert!(!outcome.is_allowed());
}

#[test]
fn bundled_violation_scenario_flags_the_dishonest_device() {
    let scenario = parse_scenario(include_str!("../scenarios/violation.scn"), "violation").unwrap();
    let report = run_scenario(&scenario).unwrap();
    assert!(report.all_assertions_pass(), "{}", report.render());
    assert!(
        report
            .monitors
            .iter()
            .any(|m| m.contains("violation holder=")),
        "{:?}",
        report.monitors
    );
}

#[test]
fn content_addressing_holds_for_every_stored_resource() {
    let sim = market_with_dataset();
    let pod = sim.pod("owner").unwrap();
    for rid in pod.store().resource_ids() {
        assert_eq!(content_hash(pod.store().content(rid).unwrap()), *rid);
    }
}

#[test]
fn deleted_copies_still_answer_audits_compliantly() {
    // The copy expires and is erased, but its metadata keeps reporting the
    // current policy version, so a later audit finds the holder compliant.
    let mut sim = Simulation::new(13, PurposeTaxonomy::default_market());
    sim.create_actor("owner").unwrap();
    sim.init_pod("owner", "pod://owner.example/store", vec![])
        .unwrap();
    sim.put_resource("owner", "data", b"payload".to_vec())
        .unwrap();
    sim.publish(
        "owner",
        "data",
        Some(vec![Obligation::retention(30 * 86_400)]),
    )
    .unwrap();
    sim.create_actor("holder").unwrap();
    sim.pay_fee("holder", "data").unwrap();
    sim.acquire("holder", "data", purpose("academic-research"))
        .unwrap();
    sim.drain();

    // Day 2: retention tightened to one week; day 7: the copy expires.
    sim.advance_to(2 * 86_400).unwrap();
    sim.update_policy("owner", "data", vec![Obligation::retention(7 * 86_400)])
        .unwrap();
    sim.drain();
    sim.advance_to(7 * 86_400).unwrap();

    let rid = sim.resource_id("data").unwrap();
    let entry = sim.tee("holder").unwrap().entry(&rid).unwrap();
    assert!(entry.deleted);
    assert_eq!(entry.deletion_reason, Some(DeletionReason::Expired));

    // Some blocks pass; the audit still completes with the deleted copy's
    // evidence reporting the current version.
    sim.seal_block();
    sim.seal_block();
    let monitor_id = sim.start_monitoring("owner", "data").unwrap();
    sim.drain();

    let QueryResult::Monitor { record } = sim
        .ledger()
        .read_state(&Query::GetMonitor { monitor_id })
        .unwrap()
    else {
        panic!("monitor query shape");
    };
    assert_eq!(record.status, MonitorStatus::Complete);
    let holder = sim.actor_address("holder").unwrap();
    assert_eq!(record.evidence[&holder].reported_policy_version, 2);
    assert_eq!(record.evidence[&holder].violation_count, 0);
}
