//! Pod storage plus the pod manager: the owner-facing controller that
//! stores resources under content addressing, serves access requests after
//! certificate and ACL checks, mirrors policy changes to the chain (rolling
//! back on rejection), and collects monitoring outcomes. The real Solid
//! HTTP stack is out of scope; a fixed request/response schema stands in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::de_app::{
    self, AccessCertificate, Event, RecordCopyHolderArgs, RegisterPodArgs, RegisterResourceArgs,
    StartMonitoringArgs, UpdatePolicyArgs,
};
use crate::identity::{content_hash, Address, Hash32, HexBytes, KeyPair, PublicKey, Signature};
use crate::ledger::{LedgerState, Receipt, RejectReason};
use crate::oracle::{ComponentId, DeliveryBody, OracleBus};
use crate::policy::{Purpose, UsagePolicy};
use crate::tee::Evidence;

#[derive(Debug, Error, PartialEq)]
pub enum PodError {
    #[error("pod ref must look like scheme://path: {0:?}")]
    BadPodRef(String),
    #[error("chain rejected the operation: {0}")]
    ChainRejected(RejectReason),
    #[error("owner authorization failed")]
    AuthFailed,
    #[error("caller is not the pod owner")]
    NotOwner,
    #[error("resource not stored in this pod")]
    UnknownResource,
    #[error("expected policy version {expected}, got {got}")]
    BadVersion { expected: u64, got: u64 },
    #[error("policy id must stay {0}")]
    PolicyIdMismatch(String),
}

/// Why an access request was denied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AccessDenied {
    NoCertificate,
    BadCertificate,
    AclDenied,
    UnknownResource,
}

impl fmt::Display for AccessDenied {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessDenied::NoCertificate => f.write_str("no-certificate"),
            AccessDenied::BadCertificate => f.write_str("bad-certificate"),
            AccessDenied::AclDenied => f.write_str("acl-denied"),
            AccessDenied::UnknownResource => f.write_str("unknown-resource"),
        }
    }
}

/// Requester classes a resource's ACL may admit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AclClass {
    Owner,
    Certified,
    Public,
}

/// Resource access request as sent by a trusted application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub requester: Address,
    pub resource_id: Hash32,
    pub certificate: Option<AccessCertificate>,
    pub declared_purpose: Purpose,
}

/// Resource access response: content, the current canonical policy, and
/// its version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessResponse {
    pub content: HexBytes,
    pub policy: UsagePolicy,
    pub version: u64,
}

/// Local resource store: content, per-resource ACL, and policy snapshots.
/// A resource id is always the content hash of its bytes.
#[derive(Debug)]
pub struct PodStore {
    pub pod_ref: String,
    pub owner: Address,
    resources: BTreeMap<Hash32, Vec<u8>>,
    acl: BTreeMap<Hash32, BTreeSet<AclClass>>,
    local_policies: BTreeMap<Hash32, UsagePolicy>,
}

impl PodStore {
    pub fn resource_ids(&self) -> impl Iterator<Item = &Hash32> {
        self.resources.keys()
    }

    pub fn content(&self, resource_id: &Hash32) -> Option<&[u8]> {
        self.resources.get(resource_id).map(Vec::as_slice)
    }

    pub fn acl(&self, resource_id: &Hash32) -> Option<&BTreeSet<AclClass>> {
        self.acl.get(resource_id)
    }

    pub fn policy(&self, resource_id: &Hash32) -> Option<&UsagePolicy> {
        self.local_policies.get(resource_id)
    }
}

/// Monitoring outcome as seen from the requesting pod manager.
#[derive(Clone, Debug, PartialEq)]
pub enum MonitorOutcome {
    Pending,
    Complete { bundle: Vec<Evidence> },
    Violation { holder: Address },
    TimedOut { holder: Address },
}

// Owner-authorization challenges. The pod manager authenticates its owner
// by signature over a domain-separated message.

pub fn put_auth_message(content_id: &Hash32) -> Vec<u8> {
    [b"pod-put:".as_slice(), &content_id.0].concat()
}

pub fn publish_auth_message(resource_id: &Hash32) -> Vec<u8> {
    [b"pod-publish:".as_slice(), &resource_id.0].concat()
}

pub fn update_auth_message(resource_id: &Hash32, policy: &UsagePolicy) -> Vec<u8> {
    [
        b"pod-update:".as_slice(),
        &resource_id.0,
        &crate::policy::serialize_policy(policy),
    ]
    .concat()
}

pub fn monitor_auth_message(resource_id: &Hash32) -> Vec<u8> {
    [b"pod-monitor:".as_slice(), &resource_id.0].concat()
}

fn looks_like_pod_ref(s: &str) -> bool {
    match s.split_once("://") {
        Some((scheme, rest)) => {
            !scheme.is_empty()
                && scheme
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'+' || b == b'-')
                && !rest.is_empty()
                && rest
                    .bytes()
                    .all(|b| b.is_ascii_graphic() && b != b'"' && b != b'\\')
        }
        None => false,
    }
}

/// The web-facing controller of one pod. Holds the owner's signing key for
/// chain interaction, per the architecture's assumption that off-chain
/// entities carry transaction credentials.
#[derive(Debug)]
pub struct PodManager {
    store: PodStore,
    key: KeyPair,
    component: ComponentId,
    market_public: PublicKey,
    served: Vec<(Address, Hash32)>,
    monitors: BTreeMap<u64, MonitorOutcome>,
}

impl PodManager {
    /// Creates the pod and registers it on chain in one step. If the chain
    /// rejects the registration no local pod exists afterwards.
    pub fn init_pod(
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        key: KeyPair,
        actor: &str,
        pod_ref: &str,
        default_policy: UsagePolicy,
    ) -> Result<Self, PodError> {
        if !looks_like_pod_ref(pod_ref) {
            return Err(PodError::BadPodRef(pod_ref.to_owned()));
        }
        let component = ComponentId::pod_manager(actor);
        let receipt = bus.push_in(
            ledger,
            &component,
            &key,
            de_app::METHOD_REGISTER_POD,
            de_app::encode_args(&RegisterPodArgs {
                pod_ref: pod_ref.to_owned(),
                default_policy: default_policy.clone(),
            }),
        );
        match receipt {
            Receipt::Accepted { .. } => Ok(PodManager {
                store: PodStore {
                    pod_ref: pod_ref.to_owned(),
                    owner: key.address(),
                    resources: BTreeMap::new(),
                    acl: BTreeMap::new(),
                    local_policies: BTreeMap::new(),
                },
                market_public: ledger.market_public(),
                key,
                component,
                served: Vec::new(),
                monitors: BTreeMap::new(),
            }),
            Receipt::Rejected { reason } => Err(PodError::ChainRejected(reason)),
        }
    }

    pub fn store(&self) -> &PodStore {
        &self.store
    }

    pub fn component(&self) -> &ComponentId {
        &self.component
    }

    pub fn owner(&self) -> Address {
        self.store.owner
    }

    /// Accesses served to certified consumers, for audit cross-checks.
    pub fn served(&self) -> &[(Address, Hash32)] {
        &self.served
    }

    pub fn monitor_outcome(&self, monitor_id: u64) -> Option<&MonitorOutcome> {
        self.monitors.get(&monitor_id)
    }

    pub fn monitors(&self) -> &BTreeMap<u64, MonitorOutcome> {
        &self.monitors
    }

    /// Stores content locally under its hash. The resource is not on the
    /// market yet; only the owner may read it. The policy slot starts as a
    /// snapshot of nothing-beyond-default so the three maps stay aligned.
    pub fn put_resource(
        &mut self,
        owner_auth: &Signature,
        content: Vec<u8>,
        owner_public: &PublicKey,
    ) -> Result<Hash32, PodError> {
        let resource_id = content_hash(&content);
        let msg = put_auth_message(&resource_id);
        if !crate::identity::verify(owner_auth, owner_public, &msg)
            || owner_auth.signer != self.store.owner
        {
            return Err(PodError::AuthFailed);
        }
        if self.store.resources.contains_key(&resource_id) {
            return Ok(resource_id);
        }
        let placeholder = UsagePolicy::new(resource_id.to_hex(), 1, vec![])
            .expect("hex id and empty obligations are valid");
        self.store.resources.insert(resource_id, content);
        self.store
            .acl
            .insert(resource_id, [AclClass::Owner].into_iter().collect());
        self.store.local_policies.insert(resource_id, placeholder);
        Ok(resource_id)
    }

    /// Puts a stored resource on the market: sets the local policy, opens
    /// the ACL to certified consumers, and registers it on chain. Local
    /// changes roll back if the chain rejects.
    pub fn publish_resource(
        &mut self,
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        owner_auth: &Signature,
        resource_id: Hash32,
        policy: Option<UsagePolicy>,
        owner_public: &PublicKey,
    ) -> Result<(), PodError> {
        let msg = publish_auth_message(&resource_id);
        if !crate::identity::verify(owner_auth, owner_public, &msg)
            || owner_auth.signer != self.store.owner
        {
            return Err(PodError::NotOwner);
        }
        if !self.store.resources.contains_key(&resource_id) {
            return Err(PodError::UnknownResource);
        }
        let previous_policy = self.store.local_policies.get(&resource_id).cloned();
        let previous_acl = self.store.acl.get(&resource_id).cloned();

        if let Some(p) = &policy {
            self.store.local_policies.insert(resource_id, p.clone());
        }
        self.store
            .acl
            .entry(resource_id)
            .or_default()
            .insert(AclClass::Certified);

        let receipt = bus.push_in(
            ledger,
            &self.component,
            &self.key,
            de_app::METHOD_REGISTER_RESOURCE,
            de_app::encode_args(&RegisterResourceArgs {
                pod_ref: self.store.pod_ref.clone(),
                resource_id,
                policy,
            }),
        );
        match receipt {
            Receipt::Accepted { .. } => {
                // Mirror the policy the contract actually stored (it
                // snapshots the pod default when none was sent).
                if let Ok(crate::de_app::QueryResult::ResourceInfo { policy, .. }) =
                    ledger.read_state(&crate::de_app::Query::GetResourceInfo { resource_id })
                {
                    self.store.local_policies.insert(resource_id, policy);
                }
                Ok(())
            }
            Receipt::Rejected { reason } => {
                if let Some(p) = previous_policy {
                    self.store.local_policies.insert(resource_id, p);
                }
                if let Some(a) = previous_acl {
                    self.store.acl.insert(resource_id, a);
                }
                Err(PodError::ChainRejected(reason))
            }
        }
    }

    /// Serves a resource to a requester: ACL class first, then certificate
    /// verification against the market key. A successful certified access
    /// is reported on chain as a new copy holder.
    pub fn handle_access(
        &mut self,
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        request: &AccessRequest,
    ) -> Result<AccessResponse, AccessDenied> {
        let resource_id = request.resource_id;
        let Some(content) = self.store.resources.get(&resource_id) else {
            return Err(AccessDenied::UnknownResource);
        };
        let acl = self
            .store
            .acl
            .get(&resource_id)
            .ok_or(AccessDenied::UnknownResource)?;
        let policy = self
            .store
            .local_policies
            .get(&resource_id)
            .ok_or(AccessDenied::UnknownResource)?;

        let response = AccessResponse {
            content: HexBytes(content.clone()),
            policy: policy.clone(),
            version: policy.version(),
        };

        if acl.contains(&AclClass::Public) {
            return Ok(response);
        }
        if acl.contains(&AclClass::Owner) && request.requester == self.store.owner {
            return Ok(response);
        }
        if acl.contains(&AclClass::Certified) {
            let certificate = request
                .certificate
                .as_ref()
                .ok_or(AccessDenied::NoCertificate)?;
            let bound =
                certificate.consumer == request.requester && certificate.resource_id == resource_id;
            if !bound || !certificate.verify(&self.market_public) {
                return Err(AccessDenied::BadCertificate);
            }
            self.served.push((request.requester, resource_id));
            let receipt = bus.push_in(
                ledger,
                &self.component,
                &self.key,
                de_app::METHOD_RECORD_COPY_HOLDER,
                de_app::encode_args(&RecordCopyHolderArgs {
                    resource_id,
                    consumer: request.requester,
                }),
            );
            debug_assert!(receipt.is_accepted(), "copy recording failed: {receipt:?}");
            return Ok(response);
        }
        Err(AccessDenied::AclDenied)
    }

    /// Applies a policy update locally first, then pushes it on chain; a
    /// rejection rolls the local change back so pod and chain never
    /// diverge.
    pub fn update_policy(
        &mut self,
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        owner_auth: &Signature,
        resource_id: Hash32,
        new_policy: UsagePolicy,
        owner_public: &PublicKey,
    ) -> Result<(), PodError> {
        let msg = update_auth_message(&resource_id, &new_policy);
        if !crate::identity::verify(owner_auth, owner_public, &msg)
            || owner_auth.signer != self.store.owner
        {
            return Err(PodError::NotOwner);
        }
        let current = self
            .store
            .local_policies
            .get(&resource_id)
            .ok_or(PodError::UnknownResource)?
            .clone();
        if new_policy.policy_id() != current.policy_id() {
            return Err(PodError::PolicyIdMismatch(current.policy_id().to_owned()));
        }
        if new_policy.version() != current.version() + 1 {
            return Err(PodError::BadVersion {
                expected: current.version() + 1,
                got: new_policy.version(),
            });
        }
        self.store
            .local_policies
            .insert(resource_id, new_policy.clone());
        let receipt = bus.push_in(
            ledger,
            &self.component,
            &self.key,
            de_app::METHOD_UPDATE_POLICY,
            de_app::encode_args(&UpdatePolicyArgs {
                resource_id,
                new_policy,
            }),
        );
        match receipt {
            Receipt::Accepted { .. } => Ok(()),
            Receipt::Rejected { reason } => {
                self.store.local_policies.insert(resource_id, current);
                Err(PodError::ChainRejected(reason))
            }
        }
    }

    /// Starts compliance monitoring for one resource and subscribes this
    /// manager to the completion and violation push-outs. Returns the
    /// monitor id assigned by the contract.
    pub fn request_monitoring(
        &mut self,
        bus: &mut OracleBus,
        ledger: &mut LedgerState,
        owner_auth: &Signature,
        resource_id: Hash32,
        nonce_seed: [u8; 16],
        owner_public: &PublicKey,
    ) -> Result<u64, PodError> {
        let msg = monitor_auth_message(&resource_id);
        if !crate::identity::verify(owner_auth, owner_public, &msg)
            || owner_auth.signer != self.store.owner
        {
            return Err(PodError::NotOwner);
        }
        if !self.store.resources.contains_key(&resource_id) {
            return Err(PodError::UnknownResource);
        }
        let receipt = bus.push_in(
            ledger,
            &self.component,
            &self.key,
            de_app::METHOD_START_MONITORING,
            de_app::encode_args(&StartMonitoringArgs {
                resource_id,
                nonce_seed: HexBytes(nonce_seed.to_vec()),
            }),
        );
        let events = match receipt {
            Receipt::Accepted { events } => events,
            Receipt::Rejected { reason } => return Err(PodError::ChainRejected(reason)),
        };
        let monitor_id = events
            .iter()
            .find_map(|e| match e {
                Event::EvidenceRequested { monitor_id, .. }
                | Event::MonitorComplete { monitor_id, .. } => Some(*monitor_id),
                _ => None,
            })
            .expect("monitoring always emits at least one event");

        bus.register_monitor_requester(monitor_id, self.component.clone());
        bus.subscribe_events(
            self.component.clone(),
            "monitor_complete",
            Some(resource_id),
            Some(self.store.owner),
        );
        bus.subscribe_events(
            self.component.clone(),
            "violation_detected",
            Some(resource_id),
            Some(self.store.owner),
        );
        // A resource with no copies completes inside the same receipt.
        let outcome = events
            .iter()
            .find_map(|e| match e {
                Event::MonitorComplete { bundle, .. } => Some(MonitorOutcome::Complete {
                    bundle: bundle.clone(),
                }),
                _ => None,
            })
            .unwrap_or(MonitorOutcome::Pending);
        self.monitors.insert(monitor_id, outcome);
        Ok(monitor_id)
    }

    /// Handles a push-out or timeout delivery addressed to this manager.
    pub fn handle_delivery(&mut self, body: &DeliveryBody) {
        match body {
            DeliveryBody::Event(Event::MonitorComplete {
                monitor_id, bundle, ..
            }) => {
                self.monitors.insert(
                    *monitor_id,
                    MonitorOutcome::Complete {
                        bundle: bundle.clone(),
                    },
                );
            }
            DeliveryBody::Event(Event::ViolationDetected {
                monitor_id, holder, ..
            }) => {
                self.monitors
                    .insert(*monitor_id, MonitorOutcome::Violation { holder: *holder });
            }
            DeliveryBody::PullInTimeout {
                monitor_id, holder, ..
            } => {
                self.monitors
                    .insert(*monitor_id, MonitorOutcome::TimedOut { holder: *holder });
            }
            _ => {}
        }
    }
}
