//! The four oracle flows bridging off-chain components and the ledger.
//!
//! Push-in submits signed transactions, pull-out serves pure reads,
//! push-out fans on-chain events out to subscribers, and pull-in carries an
//! evidence request to a device and its signed reply back on-chain under
//! one correlation id. Oracles are trusted couriers here; dishonest oracles
//! are out of scope.
//!
//! Transport is an in-process FIFO queue processed by the harness loop, so
//! handlers never re-enter the bus synchronously. A networked transport
//! would slot in behind the same `OracleBus` surface.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::de_app::{self, Event, Query, QueryError, QueryResult, SubmitEvidenceArgs};
use crate::identity::{Address, Hash32, KeyPair};
use crate::ledger::{LedgerState, Receipt, Transaction};
use crate::tee::Evidence;

/// Ticks a pull-in request may stay unanswered before it times out.
pub const DEFAULT_PULL_IN_TIMEOUT_TICKS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleKind {
    PushIn,
    PushOut,
    PullIn,
    PullOut,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleKind::PushIn => f.write_str("push-in"),
            OracleKind::PushOut => f.write_str("push-out"),
            OracleKind::PullIn => f.write_str("pull-in"),
            OracleKind::PullOut => f.write_str("pull-out"),
        }
    }
}

/// Stable identifier of a simulation component, e.g. `pod-manager:alice`,
/// `tee:bob`, or `de-app` for the on-chain side.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentId(String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn pod_manager(actor: &str) -> Self {
        ComponentId(format!("pod-manager:{actor}"))
    }

    pub fn tee(actor: &str) -> Self {
        ComponentId(format!("tee:{actor}"))
    }

    pub fn de_app() -> Self {
        ComponentId("de-app".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Splits `kind:actor` ids; `de-app` has no actor part.
    pub fn actor(&self) -> Option<&str> {
        self.0.split_once(':').map(|(_, actor)| actor)
    }

    pub fn is_tee(&self) -> bool {
        self.0.starts_with("tee:")
    }

    pub fn is_pod_manager(&self) -> bool {
        self.0.starts_with("pod-manager:")
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComponentId({})", self.0)
    }
}

/// Typed envelope for every oracle flow.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleMessage {
    pub kind: OracleKind,
    pub origin: ComponentId,
    pub target: ComponentId,
    pub correlation_id: u64,
    pub payload: Vec<u8>,
}

/// What a delivery carries besides the envelope.
#[derive(Clone, Debug, PartialEq)]
pub enum DeliveryBody {
    /// An on-chain event (push-out, or the request half of pull-in).
    Event(Event),
    /// A pull-in round trip expired without a reply.
    PullInTimeout {
        monitor_id: u64,
        resource_id: Hash32,
        holder: Address,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub message: OracleMessage,
    pub body: DeliveryBody,
}

/// Event filter: type name plus optional resource and address scoping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventFilter {
    pub event_type: String,
    pub resource_id: Option<Hash32>,
    pub address: Option<Address>,
}

impl EventFilter {
    fn matches(&self, event: &Event) -> bool {
        if event.type_name() != self.event_type {
            return false;
        }
        if let Some(rid) = self.resource_id {
            if event.resource_id() != Some(rid) {
                return false;
            }
        }
        if let Some(addr) = self.address {
            if event.addressed_to() != Some(addr) {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscription {
    pub subscriber: ComponentId,
    pub filter: EventFilter,
}

/// One line of the message trace:
/// `tick kind origin→target correlation_id event_type`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceLine {
    pub tick: u64,
    pub kind: OracleKind,
    pub origin: ComponentId,
    pub target: ComponentId,
    pub correlation_id: u64,
    pub label: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}\u{2192}{} {} {}",
            self.tick, self.kind, self.origin, self.target, self.correlation_id, self.label
        )
    }
}

/// An outstanding pull-in round trip awaiting its response.
#[derive(Clone, Debug)]
struct PullInTicket {
    monitor_id: u64,
    resource_id: Hash32,
    holder: Address,
    responder: ComponentId,
    deadline_tick: u64,
}

/// In-process message bus implementing the off-chain halves of all four
/// oracle patterns. Single-threaded within one simulation.
pub struct OracleBus {
    tick: u64,
    timeout_ticks: u64,
    next_correlation: u64,
    subscriptions: Vec<Subscription>,
    deliveries: VecDeque<Delivery>,
    trace: Vec<TraceLine>,
    undelivered: Vec<String>,
    open_pull_ins: BTreeMap<u64, PullInTicket>,
    monitor_requesters: BTreeMap<u64, ComponentId>,
}

impl Default for OracleBus {
    fn default() -> Self {
        Self::new()
    }
}

impl OracleBus {
    pub fn new() -> Self {
        Self::with_timeout(DEFAULT_PULL_IN_TIMEOUT_TICKS)
    }

    pub fn with_timeout(timeout_ticks: u64) -> Self {
        OracleBus {
            tick: 0,
            timeout_ticks,
            next_correlation: 1,
            subscriptions: Vec::new(),
            deliveries: VecDeque::new(),
            trace: Vec::new(),
            undelivered: Vec::new(),
            open_pull_ins: BTreeMap::new(),
            monitor_requesters: BTreeMap::new(),
        }
    }

    pub fn trace(&self) -> &[TraceLine] {
        &self.trace
    }

    pub fn undelivered(&self) -> &[String] {
        &self.undelivered
    }

    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn open_pull_in_count(&self) -> usize {
        self.open_pull_ins.len()
    }

    fn next_correlation_id(&mut self) -> u64 {
        let id = self.next_correlation;
        self.next_correlation += 1;
        id
    }

    pub fn subscribe(&mut self, subscription: Subscription) {
        if !self.subscriptions.contains(&subscription) {
            self.subscriptions.push(subscription);
        }
    }

    pub fn subscribe_events(
        &mut self,
        subscriber: ComponentId,
        event_type: &str,
        resource_id: Option<Hash32>,
        address: Option<Address>,
    ) {
        self.subscribe(Subscription {
            subscriber,
            filter: EventFilter {
                event_type: event_type.to_owned(),
                resource_id,
                address,
            },
        });
    }

    /// The pod manager that started a monitor, for routing timeouts.
    pub fn register_monitor_requester(&mut self, monitor_id: u64, component: ComponentId) {
        self.monitor_requesters.insert(monitor_id, component);
    }

    /// Push-in: builds, signs, and submits a transaction on behalf of an
    /// off-chain component and returns the ledger receipt.
    pub fn push_in(
        &mut self,
        ledger: &mut LedgerState,
        origin: &ComponentId,
        key: &KeyPair,
        method: &str,
        payload: Vec<u8>,
    ) -> Receipt {
        let correlation_id = self.next_correlation_id();
        self.trace.push(TraceLine {
            tick: self.tick,
            kind: OracleKind::PushIn,
            origin: origin.clone(),
            target: ComponentId::de_app(),
            correlation_id,
            label: method.to_owned(),
        });
        let tx = Transaction::build(key, ledger.next_nonce(&key.address()), method, payload);
        ledger.submit_tx(tx)
    }

    /// Pull-out: pure contract read, no transaction, no state change.
    pub fn pull_out(
        &mut self,
        ledger: &LedgerState,
        origin: &ComponentId,
        query: Query,
    ) -> Result<QueryResult, QueryError> {
        let correlation_id = self.next_correlation_id();
        self.trace.push(TraceLine {
            tick: self.tick,
            kind: OracleKind::PullOut,
            origin: origin.clone(),
            target: ComponentId::de_app(),
            correlation_id,
            label: query.name().to_owned(),
        });
        ledger.read_state(&query)
    }

    /// Drains the ledger's event queue: evidence requests become pull-in
    /// deliveries with fresh round-trip tickets, everything else fans out
    /// as push-out to every matching subscriber exactly once. Events with
    /// no subscriber are logged and dropped.
    pub fn dispatch_push_out(&mut self, ledger: &mut LedgerState) {
        for queued in ledger.drain_events() {
            let event = queued.event;
            let matching: Vec<ComponentId> = {
                let mut seen = BTreeSet::new();
                self.subscriptions
                    .iter()
                    .filter(|s| s.filter.matches(&event))
                    .map(|s| s.subscriber.clone())
                    .filter(|c| seen.insert(c.clone()))
                    .collect()
            };
            if matching.is_empty() {
                self.undelivered
                    .push(format!("{} {}", queued.height, event.type_name()));
                continue;
            }
            let kind = if event.is_pull_request() {
                OracleKind::PullIn
            } else {
                OracleKind::PushOut
            };
            for subscriber in matching {
                let correlation_id = self.next_correlation_id();
                if let Event::EvidenceRequested {
                    monitor_id,
                    resource_id,
                    holder,
                    ..
                } = &event
                {
                    self.open_pull_ins.insert(
                        correlation_id,
                        PullInTicket {
                            monitor_id: *monitor_id,
                            resource_id: *resource_id,
                            holder: *holder,
                            responder: subscriber.clone(),
                            deadline_tick: self.tick + self.timeout_ticks,
                        },
                    );
                }
                self.trace.push(TraceLine {
                    tick: self.tick,
                    kind,
                    origin: ComponentId::de_app(),
                    target: subscriber.clone(),
                    correlation_id,
                    label: event.type_name().to_owned(),
                });
                self.deliveries.push_back(Delivery {
                    message: OracleMessage {
                        kind,
                        origin: ComponentId::de_app(),
                        target: subscriber,
                        correlation_id,
                        payload: serde_json::to_vec(&event).expect("event encodes"),
                    },
                    body: DeliveryBody::Event(event.clone()),
                });
            }
        }
    }

    /// Next queued delivery, FIFO.
    pub fn pop_delivery(&mut self) -> Option<Delivery> {
        self.deliveries.pop_front()
    }

    pub fn has_deliveries(&self) -> bool {
        !self.deliveries.is_empty()
    }

    /// Completes a pull-in round trip: wraps the responder's evidence into
    /// a signed transaction under the same correlation id. The round trip
    /// is already traced by its request line.
    pub fn respond_pull_in(
        &mut self,
        ledger: &mut LedgerState,
        responder_key: &KeyPair,
        correlation_id: u64,
        monitor_id: u64,
        evidence: Evidence,
    ) -> Receipt {
        self.open_pull_ins.remove(&correlation_id);
        let payload = de_app::encode_args(&SubmitEvidenceArgs {
            monitor_id,
            evidence,
        });
        let tx = Transaction::build(
            responder_key,
            ledger.next_nonce(&responder_key.address()),
            de_app::METHOD_SUBMIT_EVIDENCE,
            payload,
        );
        ledger.submit_tx(tx)
    }

    /// Advances the bus clock and expires overdue pull-in round trips. The
    /// timeout is delivered to the pod manager that requested the monitor;
    /// the on-chain record stays open.
    pub fn advance_tick(&mut self, tick: u64) {
        self.tick = tick;
        let expired: Vec<u64> = self
            .open_pull_ins
            .iter()
            .filter(|(_, t)| t.deadline_tick < tick)
            .map(|(cid, _)| *cid)
            .collect();
        for correlation_id in expired {
            let ticket = self
                .open_pull_ins
                .remove(&correlation_id)
                .expect("just listed");
            let Some(requester) = self.monitor_requesters.get(&ticket.monitor_id).cloned() else {
                self.undelivered.push(format!(
                    "timeout monitor={} responder={}",
                    ticket.monitor_id, ticket.responder
                ));
                continue;
            };
            self.trace.push(TraceLine {
                tick: self.tick,
                kind: OracleKind::PullIn,
                origin: ComponentId::de_app(),
                target: requester.clone(),
                correlation_id,
                label: "evidence_timeout".to_owned(),
            });
            self.deliveries.push_back(Delivery {
                message: OracleMessage {
                    kind: OracleKind::PullIn,
                    origin: ComponentId::de_app(),
                    target: requester,
                    correlation_id,
                    payload: Vec::new(),
                },
                body: DeliveryBody::PullInTimeout {
                    monitor_id: ticket.monitor_id,
                    resource_id: ticket.resource_id,
                    holder: ticket.holder,
                },
            });
        }
    }
}
