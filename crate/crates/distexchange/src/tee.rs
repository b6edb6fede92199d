//! Software simulation of the consumer-side trusted execution environment.
//! The trusted application keeps resource copies in trusted storage, gates
//! every local access through the usage policy, reacts to policy updates
//! pushed from the chain, appends to a tamper-evident usage log, and signs
//! compliance evidence during monitoring.
//!
//! Isolation is modeled, not hardware-enforced: honesty is the default, and
//! the dishonest modes exist so that monitoring's violation paths can be
//! exercised at all.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::de_app::{AccessCertificate, Event, Query, QueryResult};
use crate::identity::{Address, Hash32, HexBytes, KeyPair, PublicKey, Signature};
use crate::ledger::LedgerState;
use crate::oracle::{ComponentId, DeliveryBody, OracleBus};
use crate::pod::{AccessDenied, AccessRequest, PodManager};
use crate::policy::{
    check_purpose, expiry_at, Decision, Purpose, PurposeTaxonomy, UsagePolicy, REVOKED_PURPOSE,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TeeError {
    #[error("no trusted-storage entry for resource")]
    NoEntry,
    #[error("resource was never held by this device")]
    UnknownResourceAtTee,
    #[error("resource not found on chain")]
    NotFound,
    #[error("no locator cached; resource info must be pulled first")]
    NoLocator,
    #[error("entry was deleted and cannot be re-acquired")]
    EntryDeleted,
    #[error("pod manager denied access: {0}")]
    PodDenied(AccessDenied),
    #[error("clock went backwards: last tick {last}, now {now}")]
    ClockRegression { last: u64, now: u64 },
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeletionReason {
    Expired,
    PolicyTightened,
    Revoked,
}

impl fmt::Display for DeletionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeletionReason::Expired => f.write_str("expired"),
            DeletionReason::PolicyTightened => f.write_str("policy-tightened"),
            DeletionReason::Revoked => f.write_str("revoked"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenyReason {
    Expired,
    PurposeMismatch,
    Deleted,
    /// The pod manager refused the acquisition request.
    AccessRefused,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::Expired => f.write_str("expired"),
            DenyReason::PurposeMismatch => f.write_str("purpose-mismatch"),
            DenyReason::Deleted => f.write_str("deleted"),
            DenyReason::AccessRefused => f.write_str("access-refused"),
        }
    }
}

/// Outcome of a local access attempt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UseOutcome {
    Content(Vec<u8>),
    Denied(DenyReason),
}

impl UseOutcome {
    pub fn is_allowed(&self) -> bool {
        matches!(self, UseOutcome::Content(_))
    }
}

/// A consumer-side resource copy under policy control.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustedStorageEntry {
    pub resource_id: Hash32,
    pub content: Vec<u8>,
    pub policy: UsagePolicy,
    pub acquired_at: u64,
    pub deleted: bool,
    pub deletion_reason: Option<DeletionReason>,
}

impl TrustedStorageEntry {
    /// Current deletion deadline under the live policy snapshot.
    pub fn expiry(&self) -> Option<u64> {
        expiry_at(&self.policy, self.acquired_at)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogAction {
    Acquired,
    Accessed {
        purpose: Purpose,
    },
    Denied {
        purpose: Purpose,
        reason: DenyReason,
    },
    PolicyUpdated {
        old_version: u64,
        new_version: u64,
    },
    Deleted {
        reason: DeletionReason,
    },
    EvidenceProduced {
        nonce: HexBytes,
    },
}

/// Append-only usage log entry; timestamps never decrease.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageLogEntry {
    pub at: u64,
    pub resource_id: Hash32,
    pub action: LogAction,
}

impl UsageLogEntry {
    /// Canonical one-line rendering, the unit hashed into evidence digests
    /// and exported for golden tests.
    pub fn render(&self) -> String {
        let action = match &self.action {
            LogAction::Acquired => "acquired".to_string(),
            LogAction::Accessed { purpose } => format!("accessed purpose={purpose}"),
            LogAction::Denied { purpose, reason } => {
                format!("denied purpose={purpose} reason={reason}")
            }
            LogAction::PolicyUpdated {
                old_version,
                new_version,
            } => format!("policy-updated {old_version}->{new_version}"),
            LogAction::Deleted { reason } => format!("deleted reason={reason}"),
            LogAction::EvidenceProduced { nonce } => {
                format!("evidence-produced nonce={}", nonce.to_hex())
            }
        };
        format!("{} {} {}", self.at, self.resource_id, action)
    }
}

/// Signed attestation that a device is honoring the policy for one
/// resource copy: current policy version, bypass-violation count, and a
/// digest over the usage-log slice since the previous evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub tee: Address,
    pub resource_id: Hash32,
    pub nonce: HexBytes,
    pub reported_policy_version: u64,
    pub violation_count: u64,
    pub log_digest: Hash32,
    pub signature: Signature,
}

#[derive(Serialize)]
struct EvidenceBody<'a> {
    tee: &'a Address,
    resource_id: &'a Hash32,
    nonce: &'a HexBytes,
    reported_policy_version: u64,
    violation_count: u64,
    log_digest: &'a Hash32,
}

impl Evidence {
    pub fn signing_bytes(
        tee: &Address,
        resource_id: &Hash32,
        nonce: &HexBytes,
        reported_policy_version: u64,
        violation_count: u64,
        log_digest: &Hash32,
    ) -> Vec<u8> {
        serde_json::to_vec(&EvidenceBody {
            tee,
            resource_id,
            nonce,
            reported_policy_version,
            violation_count,
            log_digest,
        })
        .expect("evidence body encodes")
    }

    /// Assembles and signs evidence in one step.
    pub fn build(
        key: &KeyPair,
        resource_id: Hash32,
        nonce: HexBytes,
        reported_policy_version: u64,
        violation_count: u64,
        log_digest: Hash32,
    ) -> Self {
        let tee = key.address();
        let msg = Self::signing_bytes(
            &tee,
            &resource_id,
            &nonce,
            reported_policy_version,
            violation_count,
            &log_digest,
        );
        Evidence {
            tee,
            resource_id,
            nonce,
            reported_policy_version,
            violation_count,
            log_digest,
            signature: key.sign(&msg),
        }
    }

    pub fn verify(&self, public: &PublicKey) -> bool {
        let msg = Self::signing_bytes(
            &self.tee,
            &self.resource_id,
            &self.nonce,
            self.reported_policy_version,
            self.violation_count,
            &self.log_digest,
        );
        crate::identity::verify(&self.signature, public, &msg)
    }
}

/// Behavior switch for adversarial scenarios. An honest simulated device
/// can never violate, which would leave the monitoring violation paths
/// untestable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TeeMode {
    #[default]
    Honest,
    /// Drop policy-update notices; evidence keeps reporting the stale
    /// version.
    IgnoreUpdates,
    /// Never answer evidence requests.
    Silent,
}

/// Reaction a message handler hands back to the harness loop; the loop
/// performs the bus work so handlers never re-enter the bus.
#[derive(Debug)]
pub enum TeeReaction {
    None,
    EvidenceResponse {
        correlation_id: u64,
        monitor_id: u64,
        evidence: Evidence,
    },
}

/// One device's trusted execution environment.
pub struct Tee {
    key: KeyPair,
    component: ComponentId,
    taxonomy: Arc<PurposeTaxonomy>,
    entries: BTreeMap<Hash32, TrustedStorageEntry>,
    registered_purposes: BTreeMap<Hash32, BTreeSet<Purpose>>,
    locators: BTreeMap<Hash32, String>,
    certificates: BTreeMap<Hash32, AccessCertificate>,
    log: Vec<UsageLogEntry>,
    last_evidence_index: BTreeMap<Hash32, usize>,
    bypass_violations: BTreeMap<Hash32, u64>,
    last_tick: u64,
    mode: TeeMode,
}

impl Tee {
    /// Creates the device sandbox and subscribes it to evidence requests
    /// addressed to its account.
    pub fn new(
        key: KeyPair,
        actor: &str,
        taxonomy: Arc<PurposeTaxonomy>,
        bus: &mut OracleBus,
    ) -> Self {
        let component = ComponentId::tee(actor);
        bus.subscribe_events(
            component.clone(),
            "evidence_requested",
            None,
            Some(key.address()),
        );
        Tee {
            key,
            component,
            taxonomy,
            entries: BTreeMap::new(),
            registered_purposes: BTreeMap::new(),
            locators: BTreeMap::new(),
            certificates: BTreeMap::new(),
            log: Vec::new(),
            last_evidence_index: BTreeMap::new(),
            bypass_violations: BTreeMap::new(),
            last_tick: 0,
            mode: TeeMode::Honest,
        }
    }

    pub fn address(&self) -> Address {
        self.key.address()
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn component(&self) -> &ComponentId {
        &self.component
    }

    pub fn set_mode(&mut self, mode: TeeMode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> TeeMode {
        self.mode
    }

    pub fn entry(&self, resource_id: &Hash32) -> Option<&TrustedStorageEntry> {
        self.entries.get(resource_id)
    }

    pub fn log(&self) -> &[UsageLogEntry] {
        &self.log
    }

    /// Line-oriented export of the whole usage log.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&entry.render());
            out.push('\n');
        }
        out
    }

    /// Stores the fee certificate obtained from the market receipt.
    pub fn store_certificate(&mut self, certificate: AccessCertificate) {
        self.certificates
            .insert(certificate.resource_id, certificate);
    }

    pub fn certificate(&self, resource_id: &Hash32) -> Option<&AccessCertificate> {
        self.certificates.get(resource_id)
    }

    fn append_log(&mut self, at: u64, resource_id: Hash32, action: LogAction) {
        debug_assert!(self.log.last().is_none_or(|e| e.at <= at));
        self.log.push(UsageLogEntry {
            at,
            resource_id,
            action,
        });
    }

    /// Reads the resource locator and current policy from the contract via
    /// pull-out and caches the locator for the physical retrieval step.
    pub fn lookup_resource(
        &mut self,
        bus: &mut OracleBus,
        ledger: &LedgerState,
        resource_id: Hash32,
    ) -> Result<(String, UsagePolicy, u64), TeeError> {
        let result = bus
            .pull_out(
                ledger,
                &self.component,
                Query::GetResourceInfo { resource_id },
            )
            .map_err(|_| TeeError::NotFound)?;
        match result {
            QueryResult::ResourceInfo {
                pod_ref,
                policy,
                version,
            } => {
                self.locators.insert(resource_id, pod_ref.clone());
                Ok((pod_ref, policy, version))
            }
            _ => Err(TeeError::NotFound),
        }
    }

    pub fn locator(&self, resource_id: &Hash32) -> Option<&str> {
        self.locators.get(resource_id).map(String::as_str)
    }

    /// Requests the resource from its pod manager with the held certificate
    /// and places the returned copy under policy control. The application's
    /// purposes registered here are checked on every later access.
    pub fn acquire_from(
        &mut self,
        pod: &mut PodManager,
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        resource_id: Hash32,
        registered: BTreeSet<Purpose>,
        now: u64,
    ) -> Result<(), TeeError> {
        if !self.locators.contains_key(&resource_id) {
            return Err(TeeError::NoLocator);
        }
        if self.entries.contains_key(&resource_id) {
            return self
                .admit_copy(resource_id, vec![], None, registered, now)
                .map(|_| ());
        }
        let declared_purpose = registered.iter().next().cloned().ok_or(TeeError::Policy(
            crate::policy::PolicyError::EmptyAllowedSet,
        ))?;
        let request = AccessRequest {
            requester: self.key.address(),
            resource_id,
            certificate: self.certificates.get(&resource_id).cloned(),
            declared_purpose: declared_purpose.clone(),
        };
        let response = match pod.handle_access(bus, ledger, &request) {
            Ok(response) => response,
            Err(denied) => {
                self.append_log(
                    now,
                    resource_id,
                    LogAction::Denied {
                        purpose: declared_purpose,
                        reason: DenyReason::AccessRefused,
                    },
                );
                return Err(TeeError::PodDenied(denied));
            }
        };
        self.admit_copy(
            resource_id,
            response.content.0,
            Some(response.policy),
            registered,
            now,
        )?;
        // Track future policy changes for this copy.
        bus.subscribe_events(
            self.component.clone(),
            "policy_update_notice",
            Some(resource_id),
            Some(self.key.address()),
        );
        Ok(())
    }

    /// Places a retrieved copy under policy control in trusted storage.
    /// Re-admission of a live copy is idempotent; a deleted copy can never
    /// be re-admitted.
    pub fn admit_copy(
        &mut self,
        resource_id: Hash32,
        content: Vec<u8>,
        policy: Option<UsagePolicy>,
        registered: BTreeSet<Purpose>,
        now: u64,
    ) -> Result<bool, TeeError> {
        if let Some(entry) = self.entries.get(&resource_id) {
            if entry.deleted {
                return Err(TeeError::EntryDeleted);
            }
            return Ok(false);
        }
        let policy = policy.ok_or(TeeError::NoEntry)?;
        self.entries.insert(
            resource_id,
            TrustedStorageEntry {
                resource_id,
                content,
                policy,
                acquired_at: now,
                deleted: false,
                deletion_reason: None,
            },
        );
        self.registered_purposes.insert(resource_id, registered);
        self.append_log(now, resource_id, LogAction::Acquired);
        Ok(true)
    }

    /// Local access under the live policy: denied when the entry is gone,
    /// past its deadline, or the declared purpose is not subsumed.
    pub fn use_resource(
        &mut self,
        resource_id: Hash32,
        purpose: &Purpose,
        now: u64,
    ) -> Result<UseOutcome, TeeError> {
        self.use_inner(resource_id, purpose, now, false)
    }

    /// Same checks, but a denial is counted as a policy violation: the
    /// caller declared it would ignore the decision. Content is still
    /// withheld; the counter surfaces in the next evidence.
    pub fn use_resource_bypassing(
        &mut self,
        resource_id: Hash32,
        purpose: &Purpose,
        now: u64,
    ) -> Result<UseOutcome, TeeError> {
        self.use_inner(resource_id, purpose, now, true)
    }

    fn use_inner(
        &mut self,
        resource_id: Hash32,
        purpose: &Purpose,
        now: u64,
        bypass: bool,
    ) -> Result<UseOutcome, TeeError> {
        let entry = self.entries.get(&resource_id).ok_or(TeeError::NoEntry)?;
        if entry.deleted {
            return Ok(self.deny(
                resource_id,
                purpose.clone(),
                DenyReason::Deleted,
                now,
                bypass,
            ));
        }
        if let Some(deadline) = entry.expiry() {
            if now >= deadline {
                let outcome = self.deny(
                    resource_id,
                    purpose.clone(),
                    DenyReason::Expired,
                    now,
                    bypass,
                );
                self.delete_entry(resource_id, DeletionReason::Expired, now);
                return Ok(outcome);
            }
        }
        let decision = check_purpose(&entry.policy, &self.taxonomy, purpose)?;
        if decision == Decision::Deny {
            return Ok(self.deny(
                resource_id,
                purpose.clone(),
                DenyReason::PurposeMismatch,
                now,
                bypass,
            ));
        }
        let content = entry.content.clone();
        self.append_log(
            now,
            resource_id,
            LogAction::Accessed {
                purpose: purpose.clone(),
            },
        );
        Ok(UseOutcome::Content(content))
    }

    fn deny(
        &mut self,
        resource_id: Hash32,
        purpose: Purpose,
        reason: DenyReason,
        now: u64,
        bypass: bool,
    ) -> UseOutcome {
        self.append_log(
            now,
            resource_id,
            LogAction::Denied {
                purpose,
                reason: reason.clone(),
            },
        );
        if bypass {
            *self.bypass_violations.entry(resource_id).or_insert(0) += 1;
        }
        UseOutcome::Denied(reason)
    }

    fn delete_entry(&mut self, resource_id: Hash32, reason: DeletionReason, now: u64) {
        let entry = self.entries.get_mut(&resource_id).expect("entry exists");
        entry.deleted = true;
        entry.deletion_reason = Some(reason);
        entry.content.clear();
        self.append_log(now, resource_id, LogAction::Deleted { reason });
    }

    /// Applies a pushed policy update: stale versions are ignored, a
    /// now-impossible retention deadline deletes immediately, and a grant
    /// of the reserved revocation purpose wipes the copy.
    pub fn on_policy_update(&mut self, resource_id: Hash32, new_policy: UsagePolicy, now: u64) {
        let Some(entry) = self.entries.get_mut(&resource_id) else {
            return;
        };
        if new_policy.version() <= entry.policy.version() {
            return;
        }
        let old_version = entry.policy.version();
        let new_version = new_policy.version();
        entry.policy = new_policy;
        let was_deleted = entry.deleted;
        let expired_now = entry.expiry().is_some_and(|deadline| deadline <= now);
        let revoked = is_revocation(&self.entries[&resource_id].policy);
        self.append_log(
            now,
            resource_id,
            LogAction::PolicyUpdated {
                old_version,
                new_version,
            },
        );
        if was_deleted {
            return;
        }
        if revoked {
            self.delete_entry(resource_id, DeletionReason::Revoked, now);
        } else if expired_now {
            self.delete_entry(resource_id, DeletionReason::PolicyTightened, now);
        }
    }

    /// Purposes the application registered when it acquired the copy.
    pub fn registered_purposes(&self, resource_id: &Hash32) -> Option<&BTreeSet<Purpose>> {
        self.registered_purposes.get(resource_id)
    }

    /// Advances the device clock, deleting every live entry whose deadline
    /// has arrived. Two ticks at the same timestamp are a no-op.
    pub fn tick(&mut self, now: u64) -> Result<Vec<Hash32>, TeeError> {
        if now < self.last_tick {
            return Err(TeeError::ClockRegression {
                last: self.last_tick,
                now,
            });
        }
        self.last_tick = now;
        let due: Vec<Hash32> = self
            .entries
            .values()
            .filter(|e| !e.deleted && e.expiry().is_some_and(|deadline| deadline <= now))
            .map(|e| e.resource_id)
            .collect();
        for resource_id in &due {
            self.delete_entry(*resource_id, DeletionReason::Expired, now);
        }
        Ok(due)
    }

    /// Builds signed evidence for a monitoring request: current policy
    /// version, bypass violations since the last evidence, and a digest of
    /// this resource's log slice since the last evidence.
    pub fn produce_evidence(
        &mut self,
        resource_id: Hash32,
        nonce: HexBytes,
        now: u64,
    ) -> Result<Evidence, TeeError> {
        let reported_version = self
            .entries
            .get(&resource_id)
            .ok_or(TeeError::UnknownResourceAtTee)?
            .policy
            .version();
        let since = self
            .last_evidence_index
            .get(&resource_id)
            .copied()
            .unwrap_or(0);
        // The production entry is part of its own slice, so consecutive
        // evidence digests tile the log with no gaps.
        self.append_log(
            now,
            resource_id,
            LogAction::EvidenceProduced {
                nonce: nonce.clone(),
            },
        );
        let log_digest = self.log_slice_digest(resource_id, since);
        let violation_count = self
            .bypass_violations
            .get(&resource_id)
            .copied()
            .unwrap_or(0);
        let evidence = Evidence::build(
            &self.key,
            resource_id,
            nonce,
            reported_version,
            violation_count,
            log_digest,
        );
        self.last_evidence_index.insert(resource_id, self.log.len());
        self.bypass_violations.insert(resource_id, 0);
        Ok(evidence)
    }

    /// Digest over the canonical rendering of one resource's log entries
    /// starting at `since`; re-computable by auditors holding the log.
    pub fn log_slice_digest(&self, resource_id: Hash32, since: usize) -> Hash32 {
        let lines: Vec<String> = self.log[since.min(self.log.len())..]
            .iter()
            .filter(|e| e.resource_id == resource_id)
            .map(UsageLogEntry::render)
            .collect();
        crate::identity::content_hash(lines.join("\n").as_bytes())
    }

    pub fn last_evidence_index(&self, resource_id: &Hash32) -> usize {
        self.last_evidence_index
            .get(resource_id)
            .copied()
            .unwrap_or(0)
    }

    /// Handles one oracle delivery. Returns the response the harness loop
    /// must submit on the device's behalf, if any.
    pub fn handle_delivery(
        &mut self,
        body: &DeliveryBody,
        correlation_id: u64,
        now: u64,
    ) -> TeeReaction {
        match body {
            DeliveryBody::Event(Event::PolicyUpdateNotice {
                resource_id,
                policy,
                ..
            }) => {
                if self.mode != TeeMode::IgnoreUpdates {
                    self.on_policy_update(*resource_id, policy.clone(), now);
                }
                TeeReaction::None
            }
            DeliveryBody::Event(Event::EvidenceRequested {
                monitor_id,
                resource_id,
                nonce,
                ..
            }) => {
                if self.mode == TeeMode::Silent {
                    return TeeReaction::None;
                }
                match self.produce_evidence(*resource_id, nonce.clone(), now) {
                    Ok(evidence) => TeeReaction::EvidenceResponse {
                        correlation_id,
                        monitor_id: *monitor_id,
                        evidence,
                    },
                    Err(_) => TeeReaction::None,
                }
            }
            _ => TeeReaction::None,
        }
    }
}

/// True when the policy's only effective grant is the reserved revocation
/// token.
pub fn is_revocation(policy: &UsagePolicy) -> bool {
    let revoked = Purpose::new(REVOKED_PURPOSE).expect("reserved token is valid");
    let mut saw_restriction = false;
    for allowed in policy.purpose_restrictions() {
        saw_restriction = true;
        if allowed.len() != 1 || !allowed.contains(&revoked) {
            return false;
        }
    }
    saw_restriction
}
