//! The DistExchange application: the on-chain market contract holding the
//! pod registry, resource index, versioned usage policies, fee certificates,
//! copy-holder sets, and monitoring records. State changes only through
//! transaction dispatch from the ledger; queries are pure reads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{content_hash, Address, Hash32, HexBytes, KeyPair, PublicKey, Signature};
use crate::policy::UsagePolicy;
use crate::tee::Evidence;

pub const METHOD_REGISTER_POD: &str = "register_pod";
pub const METHOD_REGISTER_RESOURCE: &str = "register_resource";
pub const METHOD_PAY_FEE: &str = "pay_fee";
pub const METHOD_RECORD_COPY_HOLDER: &str = "record_copy_holder";
pub const METHOD_UPDATE_POLICY: &str = "update_policy";
pub const METHOD_START_MONITORING: &str = "start_monitoring";
pub const METHOD_SUBMIT_EVIDENCE: &str = "submit_evidence";

/// Every transaction method the contract dispatches.
pub const METHODS: &[&str] = &[
    METHOD_REGISTER_POD,
    METHOD_REGISTER_RESOURCE,
    METHOD_PAY_FEE,
    METHOD_RECORD_COPY_HOLDER,
    METHOD_UPDATE_POLICY,
    METHOD_START_MONITORING,
    METHOD_SUBMIT_EVIDENCE,
];

/// Evidence reporting a policy version older than current is still
/// compliant when the update landed within this many blocks.
pub const VERSION_GRACE_BLOCKS: u64 = 1;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ContractError {
    #[error("pod already registered: {0}")]
    DuplicatePod(String),
    #[error("unknown pod: {0}")]
    UnknownPod(String),
    #[error("sender does not own the pod")]
    NotPodOwner,
    #[error("resource already indexed: {0}")]
    DuplicateResource(Hash32),
    #[error("unknown resource: {0}")]
    UnknownResource(Hash32),
    #[error("owners cannot buy their own resource")]
    SelfPurchase,
    #[error("sender does not own the resource")]
    NotOwner,
    #[error("expected policy version {expected}, got {got}")]
    BadVersion { expected: u64, got: u64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("no certificate for consumer and resource")]
    NoCertificate,
    #[error("unknown monitor: {0}")]
    UnknownMonitor(u64),
    #[error("sender is not pending in this monitor")]
    NotPending,
    #[error("evidence nonce does not match the monitor's nonce")]
    StaleNonce,
    #[error("evidence signature does not verify")]
    BadEvidenceSignature,
    #[error("malformed payload: {0}")]
    BadPayload(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("not found")]
    NotFound,
    #[error("malformed query: {0}")]
    BadQuery(String),
}

/// Looks up the registered public key for an address. Implemented by the
/// ledger's account table; the contract uses it to verify evidence
/// signatures.
pub trait KeyDirectory {
    fn public_key_of(&self, address: &Address) -> Option<PublicKey>;
}

/// Per-transaction execution context.
pub struct ExecContext<'a> {
    /// Height of the block the transaction will be sealed into.
    pub height: u64,
    pub keys: &'a dyn KeyDirectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodRecord {
    pub pod_ref: String,
    pub owner: Address,
    pub default_policy: UsagePolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub resource_id: Hash32,
    pub pod_ref: String,
    pub owner: Address,
    pub policy: UsagePolicy,
    pub copy_holders: BTreeSet<Address>,
    /// Height of the block that last changed the policy.
    pub last_update_height: u64,
}

/// Proof of market-fee payment, signed by the contract's market key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessCertificate {
    pub consumer: Address,
    pub resource_id: Hash32,
    pub issued_at: u64,
    pub cert_sig: Signature,
}

impl AccessCertificate {
    pub fn signing_bytes(consumer: &Address, resource_id: &Hash32, issued_at: u64) -> Vec<u8> {
        #[derive(Serialize)]
        struct View<'a> {
            consumer: &'a Address,
            resource_id: &'a Hash32,
            issued_at: u64,
        }
        serde_json::to_vec(&View {
            consumer,
            resource_id,
            issued_at,
        })
        .expect("certificate view encodes")
    }

    pub fn verify(&self, market_public: &PublicKey) -> bool {
        let msg = Self::signing_bytes(&self.consumer, &self.resource_id, self.issued_at);
        crate::identity::verify(&self.cert_sig, market_public, &msg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MonitorStatus {
    Open,
    Complete,
    Violation { holder: Address },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub monitor_id: u64,
    pub resource_id: Hash32,
    pub requester: Address,
    pub pending: BTreeSet<Address>,
    /// Freshness nonce each holder must echo in its evidence.
    pub nonces: BTreeMap<Address, HexBytes>,
    pub evidence: BTreeMap<Address, Evidence>,
    pub status: MonitorStatus,
}

/// Full contract state. Canonically serialized and hashed for the block
/// state root, so every container must iterate deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeAppState {
    pub market_public: PublicKey,
    pub pods: BTreeMap<String, PodRecord>,
    pub resources: BTreeMap<Hash32, ResourceRecord>,
    pub certificates: BTreeMap<Address, BTreeMap<Hash32, AccessCertificate>>,
    pub monitors: BTreeMap<u64, MonitoringRecord>,
    pub next_monitor_id: u64,
}

/// Events emitted by contract execution. Push-out and pull-in oracle
/// deliveries are driven entirely by this stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PodRegistered {
        pod_ref: String,
        owner: Address,
    },
    ResourceRegistered {
        resource_id: Hash32,
        pod_ref: String,
        owner: Address,
    },
    CertificateIssued {
        resource_id: Hash32,
        consumer: Address,
        certificate: AccessCertificate,
    },
    CopyRecorded {
        resource_id: Hash32,
        consumer: Address,
    },
    PolicyUpdated {
        resource_id: Hash32,
        old_version: u64,
        new_version: u64,
    },
    /// Fan-out notification to one copy holder after a policy update.
    PolicyUpdateNotice {
        resource_id: Hash32,
        holder: Address,
        policy: UsagePolicy,
    },
    /// Evidence request to one copy holder; answered via pull-in.
    EvidenceRequested {
        monitor_id: u64,
        resource_id: Hash32,
        holder: Address,
        nonce: HexBytes,
    },
    EvidenceRecorded {
        monitor_id: u64,
        resource_id: Hash32,
        requester: Address,
        holder: Address,
    },
    ViolationDetected {
        monitor_id: u64,
        resource_id: Hash32,
        requester: Address,
        holder: Address,
    },
    MonitorComplete {
        monitor_id: u64,
        resource_id: Hash32,
        requester: Address,
        bundle: Vec<Evidence>,
    },
}

impl Event {
    pub fn type_name(&self) -> &'static str {
        match self {
            Event::PodRegistered { .. } => "pod_registered",
            Event::ResourceRegistered { .. } => "resource_registered",
            Event::CertificateIssued { .. } => "certificate_issued",
            Event::CopyRecorded { .. } => "copy_recorded",
            Event::PolicyUpdated { .. } => "policy_updated",
            Event::PolicyUpdateNotice { .. } => "policy_update_notice",
            Event::EvidenceRequested { .. } => "evidence_requested",
            Event::EvidenceRecorded { .. } => "evidence_recorded",
            Event::ViolationDetected { .. } => "violation_detected",
            Event::MonitorComplete { .. } => "monitor_complete",
        }
    }

    pub fn resource_id(&self) -> Option<Hash32> {
        match self {
            Event::PodRegistered { .. } => None,
            Event::ResourceRegistered { resource_id, .. }
            | Event::CertificateIssued { resource_id, .. }
            | Event::CopyRecorded { resource_id, .. }
            | Event::PolicyUpdated { resource_id, .. }
            | Event::PolicyUpdateNotice { resource_id, .. }
            | Event::EvidenceRequested { resource_id, .. }
            | Event::EvidenceRecorded { resource_id, .. }
            | Event::ViolationDetected { resource_id, .. }
            | Event::MonitorComplete { resource_id, .. } => Some(*resource_id),
        }
    }

    /// The off-chain party this event concerns, used for subscription
    /// matching.
    pub fn addressed_to(&self) -> Option<Address> {
        match self {
            Event::PodRegistered { .. } | Event::ResourceRegistered { .. } => None,
            Event::CertificateIssued { consumer, .. } | Event::CopyRecorded { consumer, .. } => {
                Some(*consumer)
            }
            Event::PolicyUpdated { .. } => None,
            Event::PolicyUpdateNotice { holder, .. } => Some(*holder),
            Event::EvidenceRequested { holder, .. } => Some(*holder),
            Event::EvidenceRecorded { requester, .. }
            | Event::ViolationDetected { requester, .. }
            | Event::MonitorComplete { requester, .. } => Some(*requester),
        }
    }

    /// Evidence requests expect a response; they ride the pull-in flow
    /// instead of push-out.
    pub fn is_pull_request(&self) -> bool {
        matches!(self, Event::EvidenceRequested { .. })
    }
}

// Transaction payloads, canonically encoded with serde_json.

#[derive(Serialize, Deserialize)]
pub struct RegisterPodArgs {
    pub pod_ref: String,
    pub default_policy: UsagePolicy,
}

#[derive(Serialize, Deserialize)]
pub struct RegisterResourceArgs {
    pub pod_ref: String,
    pub resource_id: Hash32,
    /// Omitted: the pod's default policy is snapshotted for the resource.
    pub policy: Option<UsagePolicy>,
}

#[derive(Serialize, Deserialize)]
pub struct PayFeeArgs {
    pub resource_id: Hash32,
}

#[derive(Serialize, Deserialize)]
pub struct RecordCopyHolderArgs {
    pub resource_id: Hash32,
    pub consumer: Address,
}

#[derive(Serialize, Deserialize)]
pub struct UpdatePolicyArgs {
    pub resource_id: Hash32,
    pub new_policy: UsagePolicy,
}

#[derive(Serialize, Deserialize)]
pub struct StartMonitoringArgs {
    pub resource_id: Hash32,
    /// Seed for the per-holder freshness nonces, drawn by the requesting
    /// side from the scenario's deterministic generator.
    pub nonce_seed: HexBytes,
}

#[derive(Serialize, Deserialize)]
pub struct SubmitEvidenceArgs {
    pub monitor_id: u64,
    pub evidence: Evidence,
}

/// Canonical payload bytes for any serializable argument struct.
pub fn encode_args<T: Serialize>(args: &T) -> Vec<u8> {
    serde_json::to_vec(args).expect("args encode")
}

fn decode_args<'a, T: Deserialize<'a>>(payload: &'a [u8]) -> Result<T, ContractError> {
    serde_json::from_slice(payload).map_err(|e| ContractError::BadPayload(e.to_string()))
}

/// Read-only queries served directly from contract state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum Query {
    GetResourceInfo { resource_id: Hash32 },
    GetMonitor { monitor_id: u64 },
}

impl Query {
    pub fn name(&self) -> &'static str {
        match self {
            Query::GetResourceInfo { .. } => "get_resource_info",
            Query::GetMonitor { .. } => "get_monitor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum QueryResult {
    ResourceInfo {
        pod_ref: String,
        policy: UsagePolicy,
        version: u64,
    },
    Monitor {
        record: MonitoringRecord,
    },
}

/// The deployed contract: hashable state plus the market signing key used
/// to issue fee certificates.
#[derive(Clone)]
pub struct DeApp {
    state: DeAppState,
    market_key: KeyPair,
}

impl DeApp {
    pub fn new(market_key: KeyPair) -> Self {
        DeApp {
            state: DeAppState {
                market_public: market_key.public(),
                pods: BTreeMap::new(),
                resources: BTreeMap::new(),
                certificates: BTreeMap::new(),
                monitors: BTreeMap::new(),
                next_monitor_id: 1,
            },
            market_key,
        }
    }

    pub fn state(&self) -> &DeAppState {
        &self.state
    }

    pub fn market_public(&self) -> PublicKey {
        self.state.market_public
    }

    /// Canonical bytes of the contract state, the preimage of the block
    /// state root.
    pub fn state_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.state).expect("state encodes")
    }

    pub fn state_root(&self) -> Hash32 {
        content_hash(&self.state_bytes())
    }

    pub fn execute(
        &mut self,
        sender: Address,
        method: &str,
        payload: &[u8],
        ctx: &ExecContext<'_>,
    ) -> Result<Vec<Event>, ContractError> {
        match method {
            METHOD_REGISTER_POD => self.register_pod(sender, decode_args(payload)?),
            METHOD_REGISTER_RESOURCE => self.register_resource(sender, decode_args(payload)?, ctx),
            METHOD_PAY_FEE => self.pay_fee(sender, decode_args(payload)?, ctx),
            METHOD_RECORD_COPY_HOLDER => self.record_copy_holder(sender, decode_args(payload)?),
            METHOD_UPDATE_POLICY => self.update_policy(sender, decode_args(payload)?, ctx),
            METHOD_START_MONITORING => self.start_monitoring(sender, decode_args(payload)?),
            METHOD_SUBMIT_EVIDENCE => self.submit_evidence(sender, decode_args(payload)?, ctx),
            other => Err(ContractError::BadPayload(format!(
                "method not dispatchable: {other}"
            ))),
        }
    }

    pub fn query(&self, query: &Query) -> Result<QueryResult, QueryError> {
        match query {
            Query::GetResourceInfo { resource_id } => {
                let record = self
                    .state
                    .resources
                    .get(resource_id)
                    .ok_or(QueryError::NotFound)?;
                Ok(QueryResult::ResourceInfo {
                    pod_ref: record.pod_ref.clone(),
                    policy: record.policy.clone(),
                    version: record.policy.version(),
                })
            }
            Query::GetMonitor { monitor_id } => {
                let record = self
                    .state
                    .monitors
                    .get(monitor_id)
                    .ok_or(QueryError::NotFound)?;
                Ok(QueryResult::Monitor {
                    record: record.clone(),
                })
            }
        }
    }

    fn register_pod(
        &mut self,
        sender: Address,
        args: RegisterPodArgs,
    ) -> Result<Vec<Event>, ContractError> {
        validate_policy_bytes(&args.default_policy)?;
        if self.state.pods.contains_key(&args.pod_ref) {
            return Err(ContractError::DuplicatePod(args.pod_ref));
        }
        let event = Event::PodRegistered {
            pod_ref: args.pod_ref.clone(),
            owner: sender,
        };
        self.state.pods.insert(
            args.pod_ref.clone(),
            PodRecord {
                pod_ref: args.pod_ref,
                owner: sender,
                default_policy: args.default_policy,
            },
        );
        Ok(vec![event])
    }

    fn register_resource(
        &mut self,
        sender: Address,
        args: RegisterResourceArgs,
        ctx: &ExecContext<'_>,
    ) -> Result<Vec<Event>, ContractError> {
        let pod = self
            .state
            .pods
            .get(&args.pod_ref)
            .ok_or_else(|| ContractError::UnknownPod(args.pod_ref.clone()))?;
        if pod.owner != sender {
            return Err(ContractError::NotPodOwner);
        }
        if self.state.resources.contains_key(&args.resource_id) {
            return Err(ContractError::DuplicateResource(args.resource_id));
        }
        let policy = match args.policy {
            Some(policy) => policy,
            None => snapshot_default_policy(&pod.default_policy, &args.resource_id)?,
        };
        validate_policy_bytes(&policy)?;
        if policy.version() != 1 {
            return Err(ContractError::InvalidPolicy(
                "initial policy version must be 1".into(),
            ));
        }
        let event = Event::ResourceRegistered {
            resource_id: args.resource_id,
            pod_ref: args.pod_ref.clone(),
            owner: sender,
        };
        self.state.resources.insert(
            args.resource_id,
            ResourceRecord {
                resource_id: args.resource_id,
                pod_ref: args.pod_ref,
                owner: sender,
                policy,
                copy_holders: BTreeSet::new(),
                last_update_height: ctx.height,
            },
        );
        Ok(vec![event])
    }

    fn pay_fee(
        &mut self,
        sender: Address,
        args: PayFeeArgs,
        ctx: &ExecContext<'_>,
    ) -> Result<Vec<Event>, ContractError> {
        let record = self
            .state
            .resources
            .get(&args.resource_id)
            .ok_or(ContractError::UnknownResource(args.resource_id))?;
        if record.owner == sender {
            return Err(ContractError::SelfPurchase);
        }
        // Paying twice returns the stored certificate without new state.
        if let Some(existing) = self
            .state
            .certificates
            .get(&sender)
            .and_then(|m| m.get(&args.resource_id))
        {
            return Ok(vec![Event::CertificateIssued {
                resource_id: args.resource_id,
                consumer: sender,
                certificate: existing.clone(),
            }]);
        }
        let msg = AccessCertificate::signing_bytes(&sender, &args.resource_id, ctx.height);
        let certificate = AccessCertificate {
            consumer: sender,
            resource_id: args.resource_id,
            issued_at: ctx.height,
            cert_sig: self.market_key.sign(&msg),
        };
        self.state
            .certificates
            .entry(sender)
            .or_default()
            .insert(args.resource_id, certificate.clone());
        Ok(vec![Event::CertificateIssued {
            resource_id: args.resource_id,
            consumer: sender,
            certificate,
        }])
    }

    fn record_copy_holder(
        &mut self,
        sender: Address,
        args: RecordCopyHolderArgs,
    ) -> Result<Vec<Event>, ContractError> {
        let has_certificate = self
            .state
            .certificates
            .get(&args.consumer)
            .is_some_and(|m| m.contains_key(&args.resource_id));
        let record = self
            .state
            .resources
            .get_mut(&args.resource_id)
            .ok_or(ContractError::UnknownResource(args.resource_id))?;
        if record.owner != sender {
            return Err(ContractError::NotPodOwner);
        }
        if !has_certificate {
            return Err(ContractError::NoCertificate);
        }
        if !record.copy_holders.insert(args.consumer) {
            return Ok(vec![]);
        }
        Ok(vec![Event::CopyRecorded {
            resource_id: args.resource_id,
            consumer: args.consumer,
        }])
    }

    fn update_policy(
        &mut self,
        sender: Address,
        args: UpdatePolicyArgs,
        ctx: &ExecContext<'_>,
    ) -> Result<Vec<Event>, ContractError> {
        let record = self
            .state
            .resources
            .get_mut(&args.resource_id)
            .ok_or(ContractError::UnknownResource(args.resource_id))?;
        if record.owner != sender {
            return Err(ContractError::NotOwner);
        }
        if args.new_policy.policy_id() != record.policy.policy_id() {
            return Err(ContractError::InvalidPolicy(format!(
                "policy id must stay {}",
                record.policy.policy_id()
            )));
        }
        let expected = record.policy.version() + 1;
        if args.new_policy.version() != expected {
            return Err(ContractError::BadVersion {
                expected,
                got: args.new_policy.version(),
            });
        }
        validate_policy_bytes(&args.new_policy)?;
        let old_version = record.policy.version();
        record.policy = args.new_policy;
        record.last_update_height = ctx.height;
        let mut events = vec![Event::PolicyUpdated {
            resource_id: args.resource_id,
            old_version,
            new_version: record.policy.version(),
        }];
        for holder in &record.copy_holders {
            events.push(Event::PolicyUpdateNotice {
                resource_id: args.resource_id,
                holder: *holder,
                policy: record.policy.clone(),
            });
        }
        Ok(events)
    }

    fn start_monitoring(
        &mut self,
        sender: Address,
        args: StartMonitoringArgs,
    ) -> Result<Vec<Event>, ContractError> {
        let record = self
            .state
            .resources
            .get(&args.resource_id)
            .ok_or(ContractError::UnknownResource(args.resource_id))?;
        if record.owner != sender {
            return Err(ContractError::NotOwner);
        }
        let monitor_id = self.state.next_monitor_id;
        self.state.next_monitor_id += 1;

        let pending = record.copy_holders.clone();
        let mut nonces = BTreeMap::new();
        let mut events = Vec::new();
        for holder in &pending {
            let nonce = monitor_nonce(&args.nonce_seed, holder, monitor_id);
            nonces.insert(*holder, nonce.clone());
            events.push(Event::EvidenceRequested {
                monitor_id,
                resource_id: args.resource_id,
                holder: *holder,
                nonce,
            });
        }
        let status = if pending.is_empty() {
            events.push(Event::MonitorComplete {
                monitor_id,
                resource_id: args.resource_id,
                requester: sender,
                bundle: vec![],
            });
            MonitorStatus::Complete
        } else {
            MonitorStatus::Open
        };
        self.state.monitors.insert(
            monitor_id,
            MonitoringRecord {
                monitor_id,
                resource_id: args.resource_id,
                requester: sender,
                pending,
                nonces,
                evidence: BTreeMap::new(),
                status,
            },
        );
        Ok(events)
    }

    fn submit_evidence(
        &mut self,
        sender: Address,
        args: SubmitEvidenceArgs,
        ctx: &ExecContext<'_>,
    ) -> Result<Vec<Event>, ContractError> {
        let resource_version_info = |state: &DeAppState, rid: &Hash32| {
            state
                .resources
                .get(rid)
                .map(|r| (r.policy.version(), r.last_update_height))
        };
        let monitor = self
            .state
            .monitors
            .get(&args.monitor_id)
            .ok_or(ContractError::UnknownMonitor(args.monitor_id))?;
        if !monitor.pending.contains(&sender) {
            return Err(ContractError::NotPending);
        }
        let expected_nonce = monitor
            .nonces
            .get(&sender)
            .ok_or(ContractError::NotPending)?;
        if args.evidence.nonce != *expected_nonce {
            return Err(ContractError::StaleNonce);
        }
        if args.evidence.tee != sender || args.evidence.resource_id != monitor.resource_id {
            return Err(ContractError::BadEvidenceSignature);
        }
        let public = ctx
            .keys
            .public_key_of(&sender)
            .ok_or(ContractError::BadEvidenceSignature)?;
        if !args.evidence.verify(&public) {
            return Err(ContractError::BadEvidenceSignature);
        }

        let (current_version, last_update_height) =
            resource_version_info(&self.state, &monitor.resource_id)
                .ok_or(ContractError::UnknownResource(monitor.resource_id))?;
        let version_ok = args.evidence.reported_policy_version == current_version
            || ctx.height.saturating_sub(last_update_height) <= VERSION_GRACE_BLOCKS;
        let compliant = version_ok && args.evidence.violation_count == 0;

        let monitor = self
            .state
            .monitors
            .get_mut(&args.monitor_id)
            .expect("monitor exists");
        monitor.pending.remove(&sender);
        monitor.evidence.insert(sender, args.evidence);

        let mut events = Vec::new();
        if compliant {
            events.push(Event::EvidenceRecorded {
                monitor_id: monitor.monitor_id,
                resource_id: monitor.resource_id,
                requester: monitor.requester,
                holder: sender,
            });
        } else {
            monitor.status = MonitorStatus::Violation { holder: sender };
            events.push(Event::ViolationDetected {
                monitor_id: monitor.monitor_id,
                resource_id: monitor.resource_id,
                requester: monitor.requester,
                holder: sender,
            });
        }
        if monitor.pending.is_empty() && monitor.status == MonitorStatus::Open {
            monitor.status = MonitorStatus::Complete;
            events.push(Event::MonitorComplete {
                monitor_id: monitor.monitor_id,
                resource_id: monitor.resource_id,
                requester: monitor.requester,
                bundle: monitor.evidence.values().cloned().collect(),
            });
        }
        Ok(events)
    }
}

/// Round-trips the policy through its canonical form, surfacing any
/// invariant violations as a contract error.
fn validate_policy_bytes(policy: &UsagePolicy) -> Result<(), ContractError> {
    let bytes = crate::policy::serialize_policy(policy);
    crate::policy::parse_policy(&bytes)
        .map(|_| ())
        .map_err(|e| ContractError::InvalidPolicy(e.to_string()))
}

/// Resource-specific snapshot of a pod's default policy: fresh identity,
/// version 1, same obligations.
fn snapshot_default_policy(
    default: &UsagePolicy,
    resource_id: &Hash32,
) -> Result<UsagePolicy, ContractError> {
    UsagePolicy::new(resource_id.to_hex(), 1, default.obligations().to_vec())
        .map_err(|e| ContractError::InvalidPolicy(e.to_string()))
}

fn monitor_nonce(seed: &HexBytes, holder: &Address, monitor_id: u64) -> HexBytes {
    let mut preimage = seed.0.clone();
    preimage.extend_from_slice(&holder.0);
    preimage.extend_from_slice(&monitor_id.to_le_bytes());
    HexBytes(content_hash(&preimage).0.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Obligation;
    use proptest::prelude::*;

    struct NoKeys;
    impl KeyDirectory for NoKeys {
        fn public_key_of(&self, _address: &Address) -> Option<PublicKey> {
            None
        }
    }

    struct OneKey(Address, PublicKey);
    impl KeyDirectory for OneKey {
        fn public_key_of(&self, address: &Address) -> Option<PublicKey> {
            (*address == self.0).then_some(self.1)
        }
    }

    fn key(n: u8) -> KeyPair {
        KeyPair::from_seed(&[n; 32]).unwrap()
    }

    const NO_KEYS: &NoKeys = &NoKeys;

    fn ctx(height: u64) -> ExecContext<'static> {
        ExecContext {
            height,
            keys: NO_KEYS,
        }
    }

    fn pod_policy(id: &str) -> UsagePolicy {
        UsagePolicy::new(id, 1, vec![]).unwrap()
    }

    fn app() -> DeApp {
        DeApp::new(key(99))
    }

    fn register_pod(app: &mut DeApp, owner: &KeyPair, pod_ref: &str) {
        let args = RegisterPodArgs {
            pod_ref: pod_ref.into(),
            default_policy: pod_policy(pod_ref),
        };
        app.execute(
            owner.address(),
            METHOD_REGISTER_POD,
            &encode_args(&args),
            &ctx(1),
        )
        .unwrap();
    }

    fn register_resource(app: &mut DeApp, owner: &KeyPair, pod_ref: &str, rid: Hash32) {
        let policy = UsagePolicy::new(rid.to_hex(), 1, vec![Obligation::retention(1000)]).unwrap();
        let args = RegisterResourceArgs {
            pod_ref: pod_ref.into(),
            resource_id: rid,
            policy: Some(policy),
        };
        app.execute(
            owner.address(),
            METHOD_REGISTER_RESOURCE,
            &encode_args(&args),
            &ctx(1),
        )
        .unwrap();
    }

    #[test]
    fn duplicate_pod_is_rejected_without_state_change() {
        let mut app = app();
        let alice = key(1);
        register_pod(&mut app, &alice, "pod://alice");
        let before = app.state_root();
        let err = app
            .execute(
                alice.address(),
                METHOD_REGISTER_POD,
                &encode_args(&RegisterPodArgs {
                    pod_ref: "pod://alice".into(),
                    default_policy: pod_policy("pod://alice"),
                }),
                &ctx(2),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::DuplicatePod("pod://alice".into()));
        assert_eq!(app.state_root(), before);
    }

    #[test]
    fn two_pods_are_independent() {
        let mut app = app();
        register_pod(&mut app, &key(1), "pod://alice");
        register_pod(&mut app, &key(2), "pod://bob");
        assert_eq!(app.state().pods.len(), 2);
    }

    #[test]
    fn resource_registration_requires_ownership() {
        let mut app = app();
        let (alice, bob) = (key(1), key(2));
        register_pod(&mut app, &bob, "pod://bob");
        let err = app
            .execute(
                alice.address(),
                METHOD_REGISTER_RESOURCE,
                &encode_args(&RegisterResourceArgs {
                    pod_ref: "pod://bob".into(),
                    resource_id: content_hash(b"x"),
                    policy: None,
                }),
                &ctx(1),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::NotPodOwner);
    }

    #[test]
    fn omitted_policy_snapshots_pod_default() {
        let mut app = app();
        let bob = key(2);
        let args = RegisterPodArgs {
            pod_ref: "pod://bob".into(),
            default_policy: UsagePolicy::new("pod://bob", 1, vec![Obligation::retention(500)])
                .unwrap(),
        };
        app.execute(
            bob.address(),
            METHOD_REGISTER_POD,
            &encode_args(&args),
            &ctx(1),
        )
        .unwrap();
        let rid = content_hash(b"data");
        app.execute(
            bob.address(),
            METHOD_REGISTER_RESOURCE,
            &encode_args(&RegisterResourceArgs {
                pod_ref: "pod://bob".into(),
                resource_id: rid,
                policy: None,
            }),
            &ctx(1),
        )
        .unwrap();
        let record = &app.state().resources[&rid];
        assert_eq!(record.policy.policy_id(), rid.to_hex());
        assert_eq!(record.policy.version(), 1);
        assert_eq!(record.policy.retention(), Some(500));
    }

    #[test]
    fn pay_fee_is_idempotent() {
        let mut app = app();
        let (alice, bob) = (key(1), key(2));
        let rid = content_hash(b"medical");
        register_pod(&mut app, &bob, "pod://bob");
        register_resource(&mut app, &bob, "pod://bob", rid);
        let args = encode_args(&PayFeeArgs { resource_id: rid });
        let first = app
            .execute(alice.address(), METHOD_PAY_FEE, &args, &ctx(2))
            .unwrap();
        let root = app.state_root();
        let second = app
            .execute(alice.address(), METHOD_PAY_FEE, &args, &ctx(5))
            .unwrap();
        assert_eq!(app.state_root(), root);
        assert_eq!(first, second);
        match &first[0] {
            Event::CertificateIssued { certificate, .. } => {
                assert!(certificate.verify(&app.market_public()));
                assert_eq!(certificate.consumer, alice.address());
            }
            other => panic!("unexpected event {other:?}"),
        }
    }

    #[test]
    fn self_purchase_is_rejected() {
        let mut app = app();
        let bob = key(2);
        let rid = content_hash(b"medical");
        register_pod(&mut app, &bob, "pod://bob");
        register_resource(&mut app, &bob, "pod://bob", rid);
        let err = app
            .execute(
                bob.address(),
                METHOD_PAY_FEE,
                &encode_args(&PayFeeArgs { resource_id: rid }),
                &ctx(2),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::SelfPurchase);
    }

    #[test]
    fn pay_fee_for_unknown_resource_fails() {
        let mut app = app();
        let err = app
            .execute(
                key(1).address(),
                METHOD_PAY_FEE,
                &encode_args(&PayFeeArgs {
                    resource_id: content_hash(b"nope"),
                }),
                &ctx(2),
            )
            .unwrap_err();
        assert!(matches!(err, ContractError::UnknownResource(_)));
    }

    #[test]
    fn copy_holder_requires_certificate_and_is_idempotent() {
        let mut app = app();
        let (alice, bob) = (key(1), key(2));
        let rid = content_hash(b"medical");
        register_pod(&mut app, &bob, "pod://bob");
        register_resource(&mut app, &bob, "pod://bob", rid);

        let record_args = encode_args(&RecordCopyHolderArgs {
            resource_id: rid,
            consumer: alice.address(),
        });
        let err = app
            .execute(
                bob.address(),
                METHOD_RECORD_COPY_HOLDER,
                &record_args,
                &ctx(2),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::NoCertificate);

        app.execute(
            alice.address(),
            METHOD_PAY_FEE,
            &encode_args(&PayFeeArgs { resource_id: rid }),
            &ctx(2),
        )
        .unwrap();
        let events = app
            .execute(
                bob.address(),
                METHOD_RECORD_COPY_HOLDER,
                &record_args,
                &ctx(3),
            )
            .unwrap();
        assert_eq!(events.len(), 1);
        let again = app
            .execute(
                bob.address(),
                METHOD_RECORD_COPY_HOLDER,
                &record_args,
                &ctx(4),
            )
            .unwrap();
        assert!(again.is_empty());
        assert_eq!(
            app.state().resources[&rid].copy_holders,
            [alice.address()].into_iter().collect()
        );
    }

    fn holder_setup(app: &mut DeApp, owner: &KeyPair, holders: &[&KeyPair], rid: Hash32) {
        register_pod(app, owner, "pod://owner");
        register_resource(app, owner, "pod://owner", rid);
        for h in holders {
            app.execute(
                h.address(),
                METHOD_PAY_FEE,
                &encode_args(&PayFeeArgs { resource_id: rid }),
                &ctx(2),
            )
            .unwrap();
            app.execute(
                owner.address(),
                METHOD_RECORD_COPY_HOLDER,
                &encode_args(&RecordCopyHolderArgs {
                    resource_id: rid,
                    consumer: h.address(),
                }),
                &ctx(2),
            )
            .unwrap();
        }
    }

    #[test]
    fn policy_update_fans_out_to_every_holder() {
        let mut app = app();
        let owner = key(1);
        let (h1, h2) = (key(2), key(3));
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[&h1, &h2], rid);

        let current = app.state().resources[&rid].policy.clone();
        let new_policy = current
            .next_version(vec![Obligation::retention(604_800)])
            .unwrap();
        let events = app
            .execute(
                owner.address(),
                METHOD_UPDATE_POLICY,
                &encode_args(&UpdatePolicyArgs {
                    resource_id: rid,
                    new_policy,
                }),
                &ctx(3),
            )
            .unwrap();
        let notices = events
            .iter()
            .filter(|e| matches!(e, Event::PolicyUpdateNotice { .. }))
            .count();
        assert_eq!(notices, 2);
        assert!(matches!(
            events[0],
            Event::PolicyUpdated {
                old_version: 1,
                new_version: 2,
                ..
            }
        ));
    }

    #[test]
    fn policy_update_rejects_non_owner_and_bad_version() {
        let mut app = app();
        let owner = key(1);
        let stranger = key(4);
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[], rid);
        let current = app.state().resources[&rid].policy.clone();

        let next = current.next_version(vec![]).unwrap();
        let err = app
            .execute(
                stranger.address(),
                METHOD_UPDATE_POLICY,
                &encode_args(&UpdatePolicyArgs {
                    resource_id: rid,
                    new_policy: next,
                }),
                &ctx(3),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::NotOwner);

        let skipped = UsagePolicy::new(current.policy_id(), 5, vec![]).unwrap();
        let err = app
            .execute(
                owner.address(),
                METHOD_UPDATE_POLICY,
                &encode_args(&UpdatePolicyArgs {
                    resource_id: rid,
                    new_policy: skipped,
                }),
                &ctx(3),
            )
            .unwrap_err();
        assert_eq!(
            err,
            ContractError::BadVersion {
                expected: 2,
                got: 5
            }
        );
    }

    #[test]
    fn monitoring_with_no_holders_completes_immediately() {
        let mut app = app();
        let owner = key(1);
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[], rid);
        let events = app
            .execute(
                owner.address(),
                METHOD_START_MONITORING,
                &encode_args(&StartMonitoringArgs {
                    resource_id: rid,
                    nonce_seed: HexBytes(vec![0; 16]),
                }),
                &ctx(3),
            )
            .unwrap();
        assert!(matches!(
            events.as_slice(),
            [Event::MonitorComplete { bundle, .. }] if bundle.is_empty()
        ));
        assert_eq!(app.state().monitors[&1].status, MonitorStatus::Complete);
    }

    #[test]
    fn monitoring_by_stranger_is_rejected() {
        let mut app = app();
        let owner = key(1);
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[], rid);
        let err = app
            .execute(
                key(5).address(),
                METHOD_START_MONITORING,
                &encode_args(&StartMonitoringArgs {
                    resource_id: rid,
                    nonce_seed: HexBytes(vec![0; 16]),
                }),
                &ctx(3),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::NotOwner);
    }

    fn make_evidence(
        tee: &KeyPair,
        rid: Hash32,
        nonce: &HexBytes,
        version: u64,
        violations: u64,
    ) -> Evidence {
        Evidence::build(
            tee,
            rid,
            nonce.clone(),
            version,
            violations,
            content_hash(b"log"),
        )
    }

    #[test]
    fn evidence_for_unknown_monitor_is_rejected() {
        let mut app = app();
        let holder = key(2);
        let evidence = make_evidence(&holder, content_hash(b"r"), &HexBytes(vec![1]), 1, 0);
        let err = app
            .execute(
                holder.address(),
                METHOD_SUBMIT_EVIDENCE,
                &encode_args(&SubmitEvidenceArgs {
                    monitor_id: 9,
                    evidence,
                }),
                &ctx(1),
            )
            .unwrap_err();
        assert_eq!(err, ContractError::UnknownMonitor(9));
    }

    #[test]
    fn evidence_flow_completes_and_rejects_stale_nonces() {
        let mut app = app();
        let owner = key(1);
        let holder = key(2);
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[&holder], rid);
        app.execute(
            owner.address(),
            METHOD_START_MONITORING,
            &encode_args(&StartMonitoringArgs {
                resource_id: rid,
                nonce_seed: HexBytes(vec![7; 16]),
            }),
            &ctx(3),
        )
        .unwrap();
        let nonce = app.state().monitors[&1].nonces[&holder.address()].clone();
        let directory = OneKey(holder.address(), holder.public());

        let bad = make_evidence(&holder, rid, &HexBytes(vec![1, 2]), 1, 0);
        let err = app
            .execute(
                holder.address(),
                METHOD_SUBMIT_EVIDENCE,
                &encode_args(&SubmitEvidenceArgs {
                    monitor_id: 1,
                    evidence: bad,
                }),
                &ExecContext {
                    height: 9,
                    keys: &directory,
                },
            )
            .unwrap_err();
        assert_eq!(err, ContractError::StaleNonce);

        let good = make_evidence(&holder, rid, &nonce, 1, 0);
        let events = app
            .execute(
                holder.address(),
                METHOD_SUBMIT_EVIDENCE,
                &encode_args(&SubmitEvidenceArgs {
                    monitor_id: 1,
                    evidence: good,
                }),
                &ExecContext {
                    height: 9,
                    keys: &directory,
                },
            )
            .unwrap();
        assert_eq!(events.len(), 2);
        assert!(matches!(events[0], Event::EvidenceRecorded { .. }));
        assert!(matches!(events[1], Event::MonitorComplete { .. }));
        assert_eq!(app.state().monitors[&1].status, MonitorStatus::Complete);
    }

    #[test]
    fn stale_version_past_grace_window_is_a_violation() {
        let mut app = app();
        let owner = key(1);
        let holder = key(2);
        let rid = content_hash(b"data");
        holder_setup(&mut app, &owner, &[&holder], rid);

        let current = app.state().resources[&rid].policy.clone();
        app.execute(
            owner.address(),
            METHOD_UPDATE_POLICY,
            &encode_args(&UpdatePolicyArgs {
                resource_id: rid,
                new_policy: current.next_version(vec![]).unwrap(),
            }),
            &ctx(3),
        )
        .unwrap();

        app.execute(
            owner.address(),
            METHOD_START_MONITORING,
            &encode_args(&StartMonitoringArgs {
                resource_id: rid,
                nonce_seed: HexBytes(vec![7; 16]),
            }),
            &ctx(5),
        )
        .unwrap();
        let nonce = app.state().monitors[&1].nonces[&holder.address()].clone();
        let directory = OneKey(holder.address(), holder.public());

        // Reports version 1 while the chain is at 2 and the update is two
        // blocks old: violation.
        let stale = make_evidence(&holder, rid, &nonce, 1, 0);
        let events = app
            .execute(
                holder.address(),
                METHOD_SUBMIT_EVIDENCE,
                &encode_args(&SubmitEvidenceArgs {
                    monitor_id: 1,
                    evidence: stale,
                }),
                &ExecContext {
                    height: 6,
                    keys: &directory,
                },
            )
            .unwrap();
        assert!(matches!(events[0], Event::ViolationDetected { .. }));
        assert_eq!(
            app.state().monitors[&1].status,
            MonitorStatus::Violation {
                holder: holder.address()
            }
        );
    }

    proptest! {
        // No mutating method ever succeeds for a sender failing the
        // operation's ownership precondition.
        #[test]
        fn strangers_cannot_mutate_owned_state(seed in 3u8..200) {
            let mut app = app();
            let owner = key(1);
            let stranger = key(seed);
            prop_assume!(stranger.address() != owner.address());
            let rid = content_hash(b"data");
            register_pod(&mut app, &owner, "pod://owner");
            register_resource(&mut app, &owner, "pod://owner", rid);
            let before = app.state_root();

            let current = app.state().resources[&rid].policy.clone();
            let attempts: Vec<(&str, Vec<u8>)> = vec![
                (
                    METHOD_REGISTER_RESOURCE,
                    encode_args(&RegisterResourceArgs {
                        pod_ref: "pod://owner".into(),
                        resource_id: content_hash(b"other"),
                        policy: None,
                    }),
                ),
                (
                    METHOD_RECORD_COPY_HOLDER,
                    encode_args(&RecordCopyHolderArgs {
                        resource_id: rid,
                        consumer: stranger.address(),
                    }),
                ),
                (
                    METHOD_UPDATE_POLICY,
                    encode_args(&UpdatePolicyArgs {
                        resource_id: rid,
                        new_policy: current.next_version(vec![]).unwrap(),
                    }),
                ),
                (
                    METHOD_START_MONITORING,
                    encode_args(&StartMonitoringArgs {
                        resource_id: rid,
                        nonce_seed: HexBytes(vec![0; 16]),
                    }),
                ),
            ];
            for (method, payload) in attempts {
                let result = app.execute(stranger.address(), method, &payload, &ctx(4));
                prop_assert!(result.is_err(), "{} should refuse a stranger", method);
                prop_assert_eq!(app.state_root(), before);
            }
        }
    }
}
