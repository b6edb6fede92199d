//! Deterministic simulation driver: owns the clock, the ledger, the oracle
//! bus, and every actor's pod manager and trusted sandbox. Scenario steps
//! execute in order; between steps the loop drains oracle queues to
//! quiescence and seals blocks for submitted transactions. Identical
//! (scenario, seed) pairs produce byte-identical run reports.

mod cli;
mod scenario;

pub use cli::{cli, demo};
pub use scenario::{
    parse_scenario, validate_scenario, Action, Scenario, ScenarioIssue, ScenarioParseError,
    ScenarioStep, TaxonomySource,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::de_app::{self, Event, MonitorStatus, PayFeeArgs};
use crate::identity::{content_hash, Address, Hash32, KeyPair};
use crate::ledger::{ChainCheck, LedgerState, Receipt};
use crate::oracle::{Delivery, OracleBus};
use crate::pod::{
    monitor_auth_message, publish_auth_message, put_auth_message, update_auth_message,
    MonitorOutcome, PodError, PodManager,
};
use crate::policy::{Obligation, Purpose, PurposeTaxonomy, UsagePolicy};
use crate::tee::{Tee, TeeError, TeeMode, TeeReaction, UseOutcome};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown actor: {0}")]
    UnknownActor(String),
    #[error("actor already exists: {0}")]
    DuplicateActor(String),
    #[error("unknown resource alias: {0}")]
    UnknownAlias(String),
    #[error("actor {0} has no pod")]
    NoPod(String),
    #[error("clock cannot go back to {0}")]
    ClockRegression(u64),
    #[error("chain rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Tee(#[from] TeeError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Scenario execution failure; carries the trace accumulated so far.
#[derive(Debug, Error)]
#[error("step {step}: {reason}")]
pub struct ScenarioError {
    pub step: usize,
    pub reason: String,
    pub partial_trace: Vec<String>,
}

/// One executed step with its outcome and the trace slice it produced.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub index: usize,
    pub at: u64,
    pub actor: String,
    pub action: Action,
    pub outcome: String,
    pub trace_start: usize,
    pub trace_end: usize,
}

/// End-of-run self-check, rendered into the report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssertionRecord {
    pub name: String,
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub final_head_hash: Hash32,
    pub blocks: u64,
    pub steps: Vec<String>,
    pub trace: Vec<String>,
    pub usage_logs: Vec<(String, String)>,
    pub monitors: Vec<String>,
    pub undelivered: Vec<String>,
    pub assertions: Vec<AssertionRecord>,
}

impl RunReport {
    pub fn all_assertions_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.failure.is_none())
    }

    /// Stable text rendering; byte-identical across replays of the same
    /// (scenario, seed).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# distexchange run report\n");
        out.push_str(&format!("scenario {}\n", self.name));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("final-head-hash {}\n", self.final_head_hash));
        out.push_str(&format!("blocks {}\n", self.blocks));
        out.push_str("\n[steps]\n");
        for line in &self.steps {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("\n[oracle-trace]\n");
        for line in &self.trace {
            out.push_str(line);
            out.push('\n');
        }
        for (actor, log) in &self.usage_logs {
            out.push_str(&format!("\n[usage-log {actor}]\n"));
            out.push_str(log);
        }
        out.push_str("\n[monitors]\n");
        for line in &self.monitors {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("\n[undelivered-events]\n");
        for line in &self.undelivered {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("\n[assertions]\n");
        for a in &self.assertions {
            match &a.failure {
                None => out.push_str(&format!("{} ok\n", a.name)),
                Some(f) => out.push_str(&format!("{} FAIL {f}\n", a.name)),
            }
        }
        out
    }
}

struct ActorCore {
    key: KeyPair,
    tee: Tee,
}

fn actor_seed(seed: u64, name: &str) -> [u8; 32] {
    content_hash(&[&seed.to_le_bytes()[..], b":actor:", name.as_bytes()].concat()).0
}

fn market_seed(seed: u64) -> [u8; 32] {
    content_hash(&[&seed.to_le_bytes()[..], b":market"].concat()).0
}

/// A whole simulation: a value constructed, driven, and inspected from one
/// thread. Independent simulations run in parallel freely.
pub struct Simulation {
    seed: u64,
    clock: u64,
    step_index: u64,
    rng: ChaCha8Rng,
    taxonomy: Arc<PurposeTaxonomy>,
    ledger: LedgerState,
    bus: OracleBus,
    actors: BTreeMap<String, ActorCore>,
    pods: BTreeMap<String, PodManager>,
    pod_actor_by_ref: BTreeMap<String, String>,
    resource_ids: BTreeMap<String, Hash32>,
    steps: Vec<StepRecord>,
    quiescence_failures: Vec<String>,
    last_tick_deletions: Vec<(String, Hash32)>,
}

impl Simulation {
    pub fn new(seed: u64, taxonomy: PurposeTaxonomy) -> Self {
        Simulation {
            seed,
            clock: 0,
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            taxonomy: Arc::new(taxonomy),
            ledger: LedgerState::new(market_seed(seed)),
            bus: OracleBus::new(),
            actors: BTreeMap::new(),
            pods: BTreeMap::new(),
            pod_actor_by_ref: BTreeMap::new(),
            resource_ids: BTreeMap::new(),
            steps: Vec::new(),
            quiescence_failures: Vec::new(),
            last_tick_deletions: Vec::new(),
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }

    pub fn bus(&self) -> &OracleBus {
        &self.bus
    }

    pub fn taxonomy(&self) -> &PurposeTaxonomy {
        &self.taxonomy
    }

    pub fn tee(&self, actor: &str) -> Option<&Tee> {
        self.actors.get(actor).map(|a| &a.tee)
    }

    pub fn pod(&self, actor: &str) -> Option<&PodManager> {
        self.pods.get(actor)
    }

    pub fn actor_address(&self, actor: &str) -> Option<Address> {
        self.actors.get(actor).map(|a| a.key.address())
    }

    pub fn resource_id(&self, alias: &str) -> Option<Hash32> {
        self.resource_ids.get(alias).copied()
    }

    pub fn trace_len(&self) -> usize {
        self.bus.trace().len()
    }

    /// Rendered trace lines starting at `from`.
    pub fn trace_lines_from(&self, from: usize) -> Vec<String> {
        self.bus.trace()[from..]
            .iter()
            .map(|l| l.to_string())
            .collect()
    }

    fn actor(&self, name: &str) -> Result<&ActorCore, SimError> {
        self.actors
            .get(name)
            .ok_or_else(|| SimError::UnknownActor(name.to_owned()))
    }

    fn alias_id(&self, alias: &str) -> Result<Hash32, SimError> {
        self.resource_ids
            .get(alias)
            .copied()
            .ok_or_else(|| SimError::UnknownAlias(alias.to_owned()))
    }

    /// Registers a market account and a trusted sandbox for a new actor.
    pub fn create_actor(&mut self, name: &str) -> Result<Address, SimError> {
        if self.actors.contains_key(name) {
            return Err(SimError::DuplicateActor(name.to_owned()));
        }
        let key = KeyPair::from_seed(&actor_seed(self.seed, name)).expect("derived seed is 32B");
        let receipt = self
            .ledger
            .submit_tx(LedgerState::register_account_tx(&key));
        if let Receipt::Rejected { reason } = receipt {
            return Err(SimError::Rejected(reason.to_string()));
        }
        let tee = Tee::new(key.clone(), name, Arc::clone(&self.taxonomy), &mut self.bus);
        let address = key.address();
        self.actors.insert(name.to_owned(), ActorCore { key, tee });
        Ok(address)
    }

    /// Creates the actor's pod with a default policy and registers it on
    /// chain.
    pub fn init_pod(
        &mut self,
        actor: &str,
        pod_ref: &str,
        obligations: Vec<Obligation>,
    ) -> Result<(), SimError> {
        let key = self.actor(actor)?.key.clone();
        let default_policy = UsagePolicy::new(pod_ref, 1, obligations)?;
        let manager = PodManager::init_pod(
            &mut self.bus,
            &mut self.ledger,
            key,
            actor,
            pod_ref,
            default_policy,
        )?;
        self.pods.insert(actor.to_owned(), manager);
        self.pod_actor_by_ref
            .insert(pod_ref.to_owned(), actor.to_owned());
        Ok(())
    }

    /// Uploads content into the actor's own pod; returns the content hash.
    pub fn put_resource(
        &mut self,
        actor: &str,
        alias: &str,
        content: Vec<u8>,
    ) -> Result<Hash32, SimError> {
        let key = self.actor(actor)?.key.clone();
        let pod = self
            .pods
            .get_mut(actor)
            .ok_or_else(|| SimError::NoPod(actor.to_owned()))?;
        let auth = key.sign(&put_auth_message(&content_hash(&content)));
        let resource_id = pod.put_resource(&auth, content, &key.public())?;
        self.resource_ids.insert(alias.to_owned(), resource_id);
        Ok(resource_id)
    }

    /// Puts a stored resource on the market, optionally with an explicit
    /// obligation list (otherwise the pod default applies).
    pub fn publish(
        &mut self,
        actor: &str,
        alias: &str,
        obligations: Option<Vec<Obligation>>,
    ) -> Result<Hash32, SimError> {
        let resource_id = self.alias_id(alias)?;
        let key = self.actor(actor)?.key.clone();
        let policy = match obligations {
            Some(obs) => Some(UsagePolicy::new(resource_id.to_hex(), 1, obs)?),
            None => None,
        };
        let pod = self
            .pods
            .get_mut(actor)
            .ok_or_else(|| SimError::NoPod(actor.to_owned()))?;
        let auth = key.sign(&publish_auth_message(&resource_id));
        pod.publish_resource(
            &mut self.bus,
            &mut self.ledger,
            &auth,
            resource_id,
            policy,
            &key.public(),
        )?;
        Ok(resource_id)
    }

    /// Pays the market fee from the actor's trusted application and stores
    /// the returned certificate in its sandbox.
    pub fn pay_fee(&mut self, actor: &str, alias: &str) -> Result<u64, SimError> {
        let resource_id = self.alias_id(alias)?;
        let core = self
            .actors
            .get_mut(actor)
            .ok_or_else(|| SimError::UnknownActor(actor.to_owned()))?;
        let origin = core.tee.component().clone();
        let receipt = self.bus.push_in(
            &mut self.ledger,
            &origin,
            &core.key,
            de_app::METHOD_PAY_FEE,
            de_app::encode_args(&PayFeeArgs { resource_id }),
        );
        match receipt {
            Receipt::Accepted { events } => {
                let mut issued_at = 0;
                for event in events {
                    if let Event::CertificateIssued { certificate, .. } = event {
                        issued_at = certificate.issued_at;
                        core.tee.store_certificate(certificate);
                    }
                }
                Ok(issued_at)
            }
            Receipt::Rejected { reason } => Err(SimError::Rejected(reason.to_string())),
        }
    }

    /// Pull-out of the resource locator and policy into the actor's
    /// sandbox (the indexing workflow on its own).
    pub fn lookup_resource(&mut self, actor: &str, alias: &str) -> Result<String, SimError> {
        let resource_id = self.alias_id(alias)?;
        let core = self
            .actors
            .get_mut(actor)
            .ok_or_else(|| SimError::UnknownActor(actor.to_owned()))?;
        let (pod_ref, _, _) = core
            .tee
            .lookup_resource(&mut self.bus, &self.ledger, resource_id)?;
        Ok(pod_ref)
    }

    /// Full acquisition: pull the locator if it is not cached yet, then
    /// fetch the resource from its pod manager into trusted storage with
    /// the given registered purpose.
    pub fn acquire(&mut self, actor: &str, alias: &str, purpose: Purpose) -> Result<(), SimError> {
        let resource_id = self.alias_id(alias)?;
        let clock = self.clock;
        let core = self
            .actors
            .get_mut(actor)
            .ok_or_else(|| SimError::UnknownActor(actor.to_owned()))?;
        if core.tee.locator(&resource_id).is_none() {
            core.tee
                .lookup_resource(&mut self.bus, &self.ledger, resource_id)?;
        }
        let pod_ref = core
            .tee
            .locator(&resource_id)
            .expect("just cached")
            .to_owned();
        let owner_actor = self
            .pod_actor_by_ref
            .get(&pod_ref)
            .ok_or(SimError::UnknownAlias(pod_ref))?
            .clone();
        let pod = self
            .pods
            .get_mut(&owner_actor)
            .ok_or(SimError::NoPod(owner_actor))?;
        core.tee.acquire_from(
            pod,
            &mut self.bus,
            &mut self.ledger,
            resource_id,
            [purpose].into_iter().collect(),
            clock,
        )?;
        Ok(())
    }

    /// Local access in the actor's sandbox at the current simulated time.
    pub fn use_resource(
        &mut self,
        actor: &str,
        alias: &str,
        purpose: &Purpose,
        bypass: bool,
    ) -> Result<UseOutcome, SimError> {
        let resource_id = self.alias_id(alias)?;
        let clock = self.clock;
        let core = self
            .actors
            .get_mut(actor)
            .ok_or_else(|| SimError::UnknownActor(actor.to_owned()))?;
        let outcome = if bypass {
            core.tee
                .use_resource_bypassing(resource_id, purpose, clock)?
        } else {
            core.tee.use_resource(resource_id, purpose, clock)?
        };
        Ok(outcome)
    }

    /// Replaces the resource's obligations with a new policy version, local
    /// first, then on chain.
    pub fn update_policy(
        &mut self,
        actor: &str,
        alias: &str,
        obligations: Vec<Obligation>,
    ) -> Result<u64, SimError> {
        let resource_id = self.alias_id(alias)?;
        let key = self.actor(actor)?.key.clone();
        let pod = self
            .pods
            .get_mut(actor)
            .ok_or_else(|| SimError::NoPod(actor.to_owned()))?;
        let current = pod
            .store()
            .policy(&resource_id)
            .ok_or(SimError::Pod(PodError::UnknownResource))?
            .clone();
        let new_policy = current.next_version(obligations)?;
        let version = new_policy.version();
        let auth = key.sign(&update_auth_message(&resource_id, &new_policy));
        pod.update_policy(
            &mut self.bus,
            &mut self.ledger,
            &auth,
            resource_id,
            new_policy,
            &key.public(),
        )?;
        Ok(version)
    }

    /// Starts compliance monitoring; the freshness nonce seed comes from
    /// the simulation's deterministic generator.
    pub fn start_monitoring(&mut self, actor: &str, alias: &str) -> Result<u64, SimError> {
        let resource_id = self.alias_id(alias)?;
        let key = self.actor(actor)?.key.clone();
        let mut nonce_seed = [0u8; 16];
        self.rng.fill_bytes(&mut nonce_seed);
        let pod = self
            .pods
            .get_mut(actor)
            .ok_or_else(|| SimError::NoPod(actor.to_owned()))?;
        let auth = key.sign(&monitor_auth_message(&resource_id));
        let monitor_id = pod.request_monitoring(
            &mut self.bus,
            &mut self.ledger,
            &auth,
            resource_id,
            nonce_seed,
            &key.public(),
        )?;
        Ok(monitor_id)
    }

    pub fn set_dishonest(&mut self, actor: &str, mode: TeeMode) -> Result<(), SimError> {
        self.actors
            .get_mut(actor)
            .ok_or_else(|| SimError::UnknownActor(actor.to_owned()))?
            .tee
            .set_mode(mode);
        Ok(())
    }

    pub fn seal_block(&mut self) -> u64 {
        self.ledger.seal_block().height
    }

    /// Advances the simulated clock, ticking every sandbox so retention
    /// deadlines fire exactly on time. Returns the deletions performed.
    pub fn advance_to(&mut self, at: u64) -> Result<Vec<(String, Hash32)>, SimError> {
        if at < self.clock {
            return Err(SimError::ClockRegression(at));
        }
        self.clock = at;
        let mut deletions = Vec::new();
        for (name, core) in self.actors.iter_mut() {
            for rid in core.tee.tick(at)? {
                deletions.push((name.clone(), rid));
            }
        }
        self.last_tick_deletions = deletions.clone();
        Ok(deletions)
    }

    /// Runs the message loop to quiescence: seal pending transactions,
    /// dispatch events, deliver messages, submit pull-in responses, repeat
    /// until every queue is empty.
    pub fn drain(&mut self) {
        loop {
            if self.ledger.pending_count() > 0 {
                self.ledger.seal_block();
            }
            self.bus.dispatch_push_out(&mut self.ledger);
            match self.bus.pop_delivery() {
                Some(delivery) => self.route_delivery(delivery),
                None => {
                    if self.ledger.pending_count() == 0 && !self.ledger.has_queued_events() {
                        break;
                    }
                }
            }
        }
    }

    fn route_delivery(&mut self, delivery: Delivery) {
        let target = delivery.message.target.clone();
        let Some(actor_name) = target.actor().map(str::to_owned) else {
            return;
        };
        if target.is_tee() {
            let Some(core) = self.actors.get_mut(&actor_name) else {
                return;
            };
            let reaction = core.tee.handle_delivery(
                &delivery.body,
                delivery.message.correlation_id,
                self.clock,
            );
            let key = core.key.clone();
            if let TeeReaction::EvidenceResponse {
                correlation_id,
                monitor_id,
                evidence,
            } = reaction
            {
                let receipt = self.bus.respond_pull_in(
                    &mut self.ledger,
                    &key,
                    correlation_id,
                    monitor_id,
                    evidence,
                );
                debug_assert!(receipt.is_accepted(), "evidence rejected: {receipt:?}");
            }
        } else if target.is_pod_manager() {
            if let Some(pod) = self.pods.get_mut(&actor_name) {
                pod.handle_delivery(&delivery.body);
            }
        }
    }

    fn is_quiescent(&self) -> bool {
        self.ledger.pending_count() == 0
            && !self.ledger.has_queued_events()
            && !self.bus.has_deliveries()
    }

    /// Executes one scenario step: advance the clock (ticking sandboxes),
    /// perform the action, then drain to quiescence.
    pub fn execute_step(&mut self, step: &ScenarioStep) -> Result<String, SimError> {
        self.step_index += 1;
        self.bus.advance_tick(self.step_index);
        self.advance_to(step.at)?;
        let outcome = self.perform_action(step)?;
        self.drain();
        if !self.is_quiescent() {
            self.quiescence_failures
                .push(format!("queues not drained after step {}", self.step_index));
        }
        Ok(outcome)
    }

    fn perform_action(&mut self, step: &ScenarioStep) -> Result<String, SimError> {
        let actor = step.actor.as_str();
        match &step.action {
            Action::CreateActor => {
                let address = self.create_actor(actor)?;
                Ok(format!("address={address}"))
            }
            Action::InitPod {
                pod_ref,
                obligations,
            } => {
                self.init_pod(actor, pod_ref, obligations.clone())?;
                Ok(format!("pod-registered ref={pod_ref}"))
            }
            Action::PutResource { alias, content } => {
                let rid = self.put_resource(actor, alias, content.clone())?;
                Ok(format!("stored id={rid}"))
            }
            Action::Publish { alias, obligations } => {
                let rid = self.publish(actor, alias, obligations.clone())?;
                Ok(format!("published id={rid} version=1"))
            }
            Action::PayFee { alias } => {
                let issued_at = self.pay_fee(actor, alias)?;
                Ok(format!("certificate issued-at={issued_at}"))
            }
            Action::Acquire { alias, purpose } => {
                self.acquire(actor, alias, purpose.clone())?;
                let rid = self.alias_id(alias)?;
                let version = self
                    .tee(actor)
                    .and_then(|t| t.entry(&rid))
                    .map(|e| e.policy.version())
                    .unwrap_or(0);
                Ok(format!("acquired version={version}"))
            }
            Action::Use {
                alias,
                purpose,
                bypass,
            } => {
                let outcome = self.use_resource(actor, alias, purpose, *bypass)?;
                Ok(match outcome {
                    UseOutcome::Content(bytes) => format!("allowed bytes={}", bytes.len()),
                    UseOutcome::Denied(reason) => format!("denied reason={reason}"),
                })
            }
            Action::UpdatePolicy { alias, obligations } => {
                let version = self.update_policy(actor, alias, obligations.clone())?;
                Ok(format!("updated version={version}"))
            }
            Action::Monitor { alias } => {
                let monitor_id = self.start_monitoring(actor, alias)?;
                Ok(format!("monitor={monitor_id}"))
            }
            Action::SealBlock => {
                let height = self.seal_block();
                Ok(format!("sealed height={height}"))
            }
            Action::Tick => Ok(format!("deletions={}", self.last_tick_deletions.len())),
            Action::SetDishonest { mode } => {
                self.set_dishonest(actor, *mode)?;
                Ok(format!("mode={mode:?}"))
            }
        }
    }

    /// Runs every step, recording outcomes and per-step trace slices.
    pub fn run_steps(&mut self, scenario: &Scenario) -> Result<(), ScenarioError> {
        for (index, step) in scenario.steps.iter().enumerate() {
            let trace_start = self.bus.trace().len();
            match self.execute_step(step) {
                Ok(outcome) => {
                    self.steps.push(StepRecord {
                        index,
                        at: step.at,
                        actor: step.actor.clone(),
                        action: step.action.clone(),
                        outcome,
                        trace_start,
                        trace_end: self.bus.trace().len(),
                    });
                }
                Err(e) => {
                    return Err(ScenarioError {
                        step: index,
                        reason: e.to_string(),
                        partial_trace: self.trace_lines_from(0),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn step_records(&self) -> &[StepRecord] {
        &self.steps
    }

    fn render_action(action: &Action) -> String {
        fn obligation_tokens(obs: &[Obligation]) -> String {
            if obs.is_empty() {
                return " none".into();
            }
            let mut out = String::new();
            for ob in obs {
                match ob {
                    Obligation::TemporalRetention {
                        max_storage_duration,
                    } => out.push_str(&format!(" retention={max_storage_duration}")),
                    Obligation::PurposeRestriction { allowed } => {
                        let list: Vec<&str> = allowed.iter().map(|p| p.as_str()).collect();
                        out.push_str(&format!(" purpose={}", list.join(",")));
                    }
                }
            }
            out
        }
        match action {
            Action::CreateActor => "CREATE_ACTOR".into(),
            Action::InitPod {
                pod_ref,
                obligations,
            } => format!("INIT_POD {pod_ref}{}", obligation_tokens(obligations)),
            Action::PutResource { alias, content } => {
                format!("PUT_RESOURCE {alias} ({} bytes)", content.len())
            }
            Action::Publish { alias, obligations } => match obligations {
                None => format!("PUBLISH {alias}"),
                Some(obs) => format!("PUBLISH {alias}{}", obligation_tokens(obs)),
            },
            Action::PayFee { alias } => format!("PAY_FEE {alias}"),
            Action::Acquire { alias, purpose } => format!("ACQUIRE {alias} {purpose}"),
            Action::Use {
                alias,
                purpose,
                bypass,
            } => {
                if *bypass {
                    format!("USE {alias} {purpose} bypass")
                } else {
                    format!("USE {alias} {purpose}")
                }
            }
            Action::UpdatePolicy { alias, obligations } => {
                format!("UPDATE_POLICY {alias}{}", obligation_tokens(obligations))
            }
            Action::Monitor { alias } => format!("MONITOR {alias}"),
            Action::SealBlock => "SEAL_BLOCK".into(),
            Action::Tick => "TICK".into(),
            Action::SetDishonest { mode } => format!("SET_DISHONEST {mode:?}"),
        }
    }

    /// End-of-run invariant checks across chain, pods, and sandboxes.
    fn run_assertions(&self) -> Vec<AssertionRecord> {
        let mut assertions = Vec::new();
        let mut push = |name: &str, failure: Option<String>| {
            assertions.push(AssertionRecord {
                name: name.to_owned(),
                failure,
            });
        };

        push(
            "chain-verification",
            match self.ledger.verify_chain() {
                ChainCheck::Ok => None,
                ChainCheck::Corrupt { height, reason } => {
                    Some(format!("corrupt at {height}: {reason:?}"))
                }
            },
        );

        push(
            "quiescence",
            if self.quiescence_failures.is_empty() {
                None
            } else {
                Some(self.quiescence_failures.join("; "))
            },
        );

        // Published resources: pod-local policy agrees with the chain.
        let mut agreement_failure = None;
        for (rid, record) in &self.ledger.contract().state().resources {
            let Some(owner_actor) = self.pod_actor_by_ref.get(&record.pod_ref) else {
                continue;
            };
            let local = self
                .pods
                .get(owner_actor)
                .and_then(|p| p.store().policy(rid));
            match local {
                Some(local) if local.version() == record.policy.version() => {}
                Some(local) => {
                    agreement_failure = Some(format!(
                        "{rid}: local v{} vs chain v{}",
                        local.version(),
                        record.policy.version()
                    ));
                }
                None => agreement_failure = Some(format!("{rid}: missing local policy")),
            }
        }
        push("policy-agreement", agreement_failure);

        // Content addressing: stored bytes hash to their resource id.
        let mut addressing_failure = None;
        for pod in self.pods.values() {
            for rid in pod.store().resource_ids() {
                let content = pod.store().content(rid).expect("listed id has content");
                if content_hash(content) != *rid {
                    addressing_failure = Some(format!("{rid}: content hash mismatch"));
                }
            }
        }
        push("content-addressing", addressing_failure);

        // Access soundness: every certified serve has a matching on-chain
        // certificate issued earlier.
        let archive = self.ledger.event_archive();
        let mut soundness_failure = None;
        for pod in self.pods.values() {
            for (consumer, rid) in pod.served() {
                let issued = archive.iter().any(|q| {
                    matches!(
                        &q.event,
                        Event::CertificateIssued { resource_id, consumer: c, certificate }
                            if resource_id == rid
                                && c == consumer
                                && certificate.verify(&self.ledger.market_public())
                    )
                });
                if !issued {
                    soundness_failure =
                        Some(format!("serve of {rid} to {consumer} without certificate"));
                }
            }
        }
        push("access-soundness", soundness_failure);

        // Policy versions advance 1,2,3,... with no gaps.
        let mut version_failure = None;
        for (rid, record) in &self.ledger.contract().state().resources {
            let mut expected = 1;
            for q in archive {
                if let Event::PolicyUpdated {
                    resource_id,
                    old_version,
                    new_version,
                } = &q.event
                {
                    if resource_id == rid {
                        if *old_version != expected || *new_version != expected + 1 {
                            version_failure =
                                Some(format!("{rid}: jump {old_version}->{new_version}"));
                        }
                        expected = *new_version;
                    }
                }
            }
            if record.policy.version() != expected {
                version_failure = Some(format!(
                    "{rid}: chain v{} but event trail ends at v{expected}",
                    record.policy.version()
                ));
            }
        }
        push("policy-version-sequence", version_failure);

        // Update fan-out equals the copy-holder count at that moment
        // (holders are never removed, so earlier CopyRecorded events count
        // them exactly).
        let mut fanout_failure = None;
        for (i, q) in archive.iter().enumerate() {
            if let Event::PolicyUpdated { resource_id, .. } = &q.event {
                let holders = archive[..i]
                    .iter()
                    .filter(|p| {
                        matches!(&p.event, Event::CopyRecorded { resource_id: r, .. } if r == resource_id)
                    })
                    .count();
                let notices = archive[i + 1..]
                    .iter()
                    .take_while(|p| matches!(&p.event, Event::PolicyUpdateNotice { .. }))
                    .filter(|p| {
                        matches!(&p.event, Event::PolicyUpdateNotice { resource_id: r, .. } if r == resource_id)
                    })
                    .count();
                if notices != holders {
                    fanout_failure = Some(format!(
                        "{resource_id}: {notices} notices for {holders} holders"
                    ));
                }
            }
        }
        push("notification-fanout", fanout_failure);

        // Certificates keep verifying against the market key.
        let mut certificate_failure = None;
        for per_consumer in self.ledger.contract().state().certificates.values() {
            for certificate in per_consumer.values() {
                if !certificate.verify(&self.ledger.market_public()) {
                    certificate_failure = Some(format!(
                        "certificate for {} fails verification",
                        certificate.resource_id
                    ));
                }
            }
        }
        push("certificate-validity", certificate_failure);

        assertions
    }

    /// Builds the run report from the current simulation state.
    pub fn report(&self, scenario_name: &str) -> RunReport {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                format!(
                    "{} t={} {} {} -> {}",
                    s.index,
                    s.at,
                    s.actor,
                    Self::render_action(&s.action),
                    s.outcome
                )
            })
            .collect();
        let monitors = self.render_monitors();
        RunReport {
            name: scenario_name.to_owned(),
            seed: self.seed,
            final_head_hash: self.ledger.head().block_hash,
            blocks: self.ledger.head().height + 1,
            steps,
            trace: self.trace_lines_from(0),
            usage_logs: self
                .actors
                .iter()
                .map(|(name, core)| (name.clone(), core.tee.export_log()))
                .collect(),
            monitors,
            undelivered: self.bus.undelivered().to_vec(),
            assertions: self.run_assertions(),
        }
    }

    fn render_monitors(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (id, record) in &self.ledger.contract().state().monitors {
            let status = match &record.status {
                MonitorStatus::Open => "open".to_string(),
                MonitorStatus::Complete => "complete".to_string(),
                MonitorStatus::Violation { holder } => format!("violation holder={holder}"),
            };
            out.push(format!(
                "on-chain monitor={id} resource={} status={status} pending={} evidence={}",
                record.resource_id,
                record.pending.len(),
                record.evidence.len()
            ));
        }
        for (actor, pod) in &self.pods {
            for (id, outcome) in pod.monitors() {
                let text = match outcome {
                    MonitorOutcome::Pending => "pending".to_string(),
                    MonitorOutcome::Complete { bundle } => {
                        format!("complete bundle={}", bundle.len())
                    }
                    MonitorOutcome::Violation { holder } => format!("violation holder={holder}"),
                    MonitorOutcome::TimedOut { holder } => format!("timed-out holder={holder}"),
                };
                out.push(format!("local pod-manager:{actor} monitor={id} {text}"));
            }
        }
        out
    }
}

/// Loads the scenario's taxonomy source.
pub fn load_taxonomy(source: &TaxonomySource) -> Result<PurposeTaxonomy, String> {
    match source {
        TaxonomySource::Default => Ok(PurposeTaxonomy::default_market()),
        TaxonomySource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read taxonomy {}: {e}", path.display()))?;
            PurposeTaxonomy::parse(&text).map_err(|e| e.to_string())
        }
    }
}

/// Validates and executes a scenario, returning its report.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, ScenarioError> {
    let taxonomy = load_taxonomy(&scenario.taxonomy).map_err(|reason| ScenarioError {
        step: 0,
        reason,
        partial_trace: vec![],
    })?;
    let issues = validate_scenario(scenario, Some(&taxonomy));
    if let Some(issue) = issues.first() {
        return Err(ScenarioError {
            step: issue.step,
            reason: issue.message.clone(),
            partial_trace: vec![],
        });
    }
    let mut sim = Simulation::new(scenario.seed, taxonomy);
    sim.run_steps(scenario)?;
    Ok(sim.report(&scenario.name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled_alice_bob() -> Scenario {
        parse_scenario(include_str!("../../scenarios/alice_bob.scn"), "alice_bob").unwrap()
    }

    #[test]
    fn empty_scenario_reports_genesis_only() {
        let scenario = Scenario {
            name: "empty".into(),
            seed: 1,
            taxonomy: TaxonomySource::Default,
            steps: vec![],
        };
        let report = run_scenario(&scenario).unwrap();
        assert_eq!(report.blocks, 1);
        assert!(report.trace.is_empty());
        assert!(report.all_assertions_pass());
    }

    #[test]
    fn bundled_scenario_runs_clean() {
        let report = run_scenario(&bundled_alice_bob()).unwrap();
        assert!(report.all_assertions_pass(), "{}", report.render());
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let scenario = bundled_alice_bob();
        let a = run_scenario(&scenario).unwrap();
        let b = run_scenario(&scenario).unwrap();
        assert_eq!(a.final_head_hash, b.final_head_hash);
        assert_eq!(a.render(), b.render());
    }

    #[test]
    fn different_seeds_change_the_head_hash() {
        let mut scenario = bundled_alice_bob();
        let a = run_scenario(&scenario).unwrap();
        scenario.seed = 43;
        let b = run_scenario(&scenario).unwrap();
        assert_ne!(a.final_head_hash, b.final_head_hash);
    }

    #[test]
    fn simulations_move_between_threads() {
        fn assert_send<T: Send>() {}
        assert_send::<Simulation>();
        assert_send::<crate::ledger::LedgerState>();

        let handle = std::thread::spawn(|| {
            let report = run_scenario(&bundled_alice_bob()).unwrap();
            report.final_head_hash
        });
        let here = run_scenario(&bundled_alice_bob()).unwrap().final_head_hash;
        assert_eq!(handle.join().unwrap(), here);
    }

    #[test]
    fn scenario_errors_carry_step_and_partial_trace() {
        let text = "0 alice CREATE_ACTOR\n0 alice INIT_POD pod://a\n0 alice INIT_POD pod://a\n";
        let scenario = parse_scenario(text, "dup").unwrap();
        // Validation passes; the duplicate registration is a runtime chain
        // rejection at step 2.
        let err = run_scenario(&scenario).unwrap_err();
        assert_eq!(err.step, 2);
        assert!(!err.partial_trace.is_empty());
    }
}
