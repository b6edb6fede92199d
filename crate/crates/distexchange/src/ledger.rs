//! Simulated blockchain: an append-only hash-chained block log executing
//! signed transactions against the market contract. Consensus is replaced
//! by a single deterministic sequencer — transactions are validated and
//! executed on submission and packaged into a block when the harness seals.
//! `verify_chain` re-derives everything from genesis, so any single-byte
//! mutation of a committed chain is detectable.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::de_app::{
    self, ContractError, DeApp, Event, ExecContext, KeyDirectory, Query, QueryError, QueryResult,
};
use crate::identity::{content_hash, Address, Hash32, HexBytes, KeyPair, PublicKey};

/// Ledger-level bootstrap method: binds a public key to its address so the
/// account can sign market transactions. Self-signed, nonce 1, replayable
/// from the chain itself.
pub const METHOD_REGISTER_ACCOUNT: &str = "register_account";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountInfo {
    pub public: PublicKey,
    pub nonce: u64,
}

#[derive(Serialize, Deserialize)]
pub struct RegisterAccountArgs {
    pub public_key: PublicKey,
}

/// Signed market transaction. The signature covers (nonce, sender, method,
/// payload) in canonical form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub nonce: u64,
    pub sender: Address,
    pub method: String,
    pub payload: HexBytes,
    pub signature: crate::identity::Signature,
}

impl Transaction {
    pub fn signing_bytes(nonce: u64, sender: &Address, method: &str, payload: &[u8]) -> Vec<u8> {
        #[derive(Serialize)]
        struct View<'a> {
            nonce: u64,
            sender: &'a Address,
            method: &'a str,
            payload: String,
        }
        serde_json::to_vec(&View {
            nonce,
            sender,
            method,
            payload: format!("0x{}", hex::encode(payload)),
        })
        .expect("tx view encodes")
    }

    pub fn build(key: &KeyPair, nonce: u64, method: &str, payload: Vec<u8>) -> Self {
        let sender = key.address();
        let msg = Self::signing_bytes(nonce, &sender, method, &payload);
        Transaction {
            nonce,
            sender,
            method: method.to_owned(),
            payload: HexBytes(payload),
            signature: key.sign(&msg),
        }
    }

    pub fn verify(&self, public: &PublicKey) -> bool {
        let msg = Self::signing_bytes(self.nonce, &self.sender, &self.method, &self.payload.0);
        crate::identity::verify(&self.signature, public, &msg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Hash32,
    pub txs: Vec<Transaction>,
    pub state_root: Hash32,
    pub block_hash: Hash32,
}

impl Block {
    /// Digest over (height, parent, full txs, state root).
    pub fn compute_hash(
        height: u64,
        parent_hash: &Hash32,
        txs: &[Transaction],
        state_root: &Hash32,
    ) -> Hash32 {
        #[derive(Serialize)]
        struct View<'a> {
            height: u64,
            parent_hash: &'a Hash32,
            txs: &'a [Transaction],
            state_root: &'a Hash32,
        }
        let bytes = serde_json::to_vec(&View {
            height,
            parent_hash,
            txs,
            state_root,
        })
        .expect("block view encodes");
        content_hash(&bytes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RejectReason {
    BadSignature,
    BadNonce { expected: u64, got: u64 },
    UnknownMethod(String),
    Contract(ContractError),
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::BadSignature => f.write_str("bad signature"),
            RejectReason::BadNonce { expected, got } => {
                write!(f, "bad nonce: expected {expected}, got {got}")
            }
            RejectReason::UnknownMethod(m) => write!(f, "unknown method: {m}"),
            RejectReason::Contract(e) => write!(f, "contract error: {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Receipt {
    Accepted { events: Vec<Event> },
    Rejected { reason: RejectReason },
}

impl Receipt {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Receipt::Accepted { .. })
    }

    pub fn events(&self) -> &[Event] {
        match self {
            Receipt::Accepted { events } => events,
            Receipt::Rejected { .. } => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptReason {
    HashMismatch,
    ParentMismatch,
    HeightMismatch,
    BadTxSignature,
    BadNonce,
    StateRootMismatch,
    ExecutionDiverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainCheck {
    Ok,
    Corrupt { height: u64, reason: CorruptReason },
}

/// An on-chain event waiting for oracle delivery.
#[derive(Clone, Debug, PartialEq)]
pub struct QueuedEvent {
    pub height: u64,
    pub event: Event,
}

struct AccountKeys<'a>(&'a BTreeMap<Address, AccountInfo>);

impl KeyDirectory for AccountKeys<'_> {
    fn public_key_of(&self, address: &Address) -> Option<PublicKey> {
        self.0.get(address).map(|a| a.public)
    }
}

/// The whole simulated chain: blocks, account table, the deployed market
/// contract, pending transactions, and the event queue feeding the oracles.
/// Single-writer; the harness loop owns all mutation.
pub struct LedgerState {
    market_seed: [u8; 32],
    blocks: Vec<Block>,
    accounts: BTreeMap<Address, AccountInfo>,
    contract: DeApp,
    pending: Vec<Transaction>,
    event_queue: VecDeque<QueuedEvent>,
    event_archive: Vec<QueuedEvent>,
}

impl LedgerState {
    /// Fresh chain with a genesis block over the empty contract state. The
    /// market key is derived from the seed so replays reconstruct it.
    pub fn new(market_seed: [u8; 32]) -> Self {
        let contract = DeApp::new(KeyPair::from_seed(&market_seed).expect("32-byte seed"));
        let state_root = contract.state_root();
        let parent = Hash32::zero();
        let block_hash = Block::compute_hash(0, &parent, &[], &state_root);
        LedgerState {
            market_seed,
            blocks: vec![Block {
                height: 0,
                parent_hash: parent,
                txs: vec![],
                state_root,
                block_hash,
            }],
            accounts: BTreeMap::new(),
            contract: DeApp::new(KeyPair::from_seed(&market_seed).expect("32-byte seed")),
            pending: Vec::new(),
            event_queue: VecDeque::new(),
            event_archive: Vec::new(),
        }
    }

    pub fn market_public(&self) -> PublicKey {
        self.contract.market_public()
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn contract(&self) -> &DeApp {
        &self.contract
    }

    pub fn account(&self, address: &Address) -> Option<&AccountInfo> {
        self.accounts.get(address)
    }

    /// Nonce the next transaction from this sender must carry.
    pub fn next_nonce(&self, address: &Address) -> u64 {
        self.accounts.get(address).map_or(1, |a| a.nonce + 1)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn has_queued_events(&self) -> bool {
        !self.event_queue.is_empty()
    }

    /// Hash of the live contract state (ahead of the head block while
    /// transactions are pending).
    pub fn state_hash(&self) -> Hash32 {
        self.contract.state_root()
    }

    /// Full event history, for trace cross-checks and reports.
    pub fn event_archive(&self) -> &[QueuedEvent] {
        &self.event_archive
    }

    /// Builder for the self-signed account bootstrap transaction.
    pub fn register_account_tx(key: &KeyPair) -> Transaction {
        let args = RegisterAccountArgs {
            public_key: key.public(),
        };
        Transaction::build(key, 1, METHOD_REGISTER_ACCOUNT, de_app::encode_args(&args))
    }

    /// Validates and executes a transaction against the sequencer state.
    /// Accepted transactions join the pending set for the next seal and
    /// their events enter the oracle queue; rejected ones leave no trace.
    pub fn submit_tx(&mut self, tx: Transaction) -> Receipt {
        let mut accounts = self.accounts.clone();
        let mut contract = self.contract.clone();
        let height = self.head().height + 1;
        match apply_tx(&mut accounts, &mut contract, height, &tx) {
            Ok(events) => {
                self.accounts = accounts;
                self.contract = contract;
                for event in &events {
                    let queued = QueuedEvent {
                        height,
                        event: event.clone(),
                    };
                    self.event_queue.push_back(queued.clone());
                    self.event_archive.push(queued);
                }
                self.pending.push(tx);
                Receipt::Accepted { events }
            }
            Err(reason) => Receipt::Rejected { reason },
        }
    }

    /// Packages the pending transactions into the next block. Empty blocks
    /// are allowed and leave the state root unchanged.
    pub fn seal_block(&mut self) -> &Block {
        let txs = std::mem::take(&mut self.pending);
        let height = self.head().height + 1;
        let parent_hash = self.head().block_hash;
        let state_root = self.contract.state_root();
        let block_hash = Block::compute_hash(height, &parent_hash, &txs, &state_root);
        self.blocks.push(Block {
            height,
            parent_hash,
            txs,
            state_root,
            block_hash,
        });
        self.head()
    }

    /// Drains the oracle event queue in emission order.
    pub fn drain_events(&mut self) -> Vec<QueuedEvent> {
        self.event_queue.drain(..).collect()
    }

    /// Pure read of contract state; never changes the state hash.
    pub fn read_state(&self, query: &Query) -> Result<QueryResult, QueryError> {
        self.contract.query(query)
    }

    /// Recomputes every hash, link, signature, and state root from genesis.
    pub fn verify_chain(&self) -> ChainCheck {
        let check = verify_blocks(self.market_seed, &self.blocks);
        if check != ChainCheck::Ok {
            return check;
        }
        // With nothing pending, the live contract must match the head root.
        if self.pending.is_empty() && self.contract.state_root() != self.head().state_root {
            return ChainCheck::Corrupt {
                height: self.head().height,
                reason: CorruptReason::StateRootMismatch,
            };
        }
        ChainCheck::Ok
    }

    /// One line per block with hex hashes; the golden-file dump format.
    pub fn dump_chain(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&format!(
                "block {} parent={} state_root={} hash={} txs={}\n",
                b.height,
                b.parent_hash,
                b.state_root,
                b.block_hash,
                b.txs.len()
            ));
        }
        out
    }
}

/// Shared validation + execution path used by both live submission and
/// replay verification.
fn apply_tx(
    accounts: &mut BTreeMap<Address, AccountInfo>,
    contract: &mut DeApp,
    height: u64,
    tx: &Transaction,
) -> Result<Vec<Event>, RejectReason> {
    if tx.method == METHOD_REGISTER_ACCOUNT {
        let args: RegisterAccountArgs = serde_json::from_slice(&tx.payload.0)
            .map_err(|e| RejectReason::Contract(ContractError::BadPayload(e.to_string())))?;
        if crate::identity::address_of(&args.public_key) != tx.sender {
            return Err(RejectReason::BadSignature);
        }
        if !tx.verify(&args.public_key) {
            return Err(RejectReason::BadSignature);
        }
        if let Some(existing) = accounts.get(&tx.sender) {
            if tx.nonce != existing.nonce + 1 {
                return Err(RejectReason::BadNonce {
                    expected: existing.nonce + 1,
                    got: tx.nonce,
                });
            }
            return Err(RejectReason::Contract(ContractError::BadPayload(
                "account already registered".into(),
            )));
        }
        if tx.nonce != 1 {
            return Err(RejectReason::BadNonce {
                expected: 1,
                got: tx.nonce,
            });
        }
        accounts.insert(
            tx.sender,
            AccountInfo {
                public: args.public_key,
                nonce: 1,
            },
        );
        return Ok(vec![]);
    }

    let account = accounts.get(&tx.sender).ok_or(RejectReason::BadSignature)?;
    if !tx.verify(&account.public) {
        return Err(RejectReason::BadSignature);
    }
    if tx.nonce != account.nonce + 1 {
        return Err(RejectReason::BadNonce {
            expected: account.nonce + 1,
            got: tx.nonce,
        });
    }
    if !de_app::METHODS.contains(&tx.method.as_str()) {
        return Err(RejectReason::UnknownMethod(tx.method.clone()));
    }
    let events = {
        let ctx = ExecContext {
            height,
            keys: &AccountKeys(accounts),
        };
        contract
            .execute(tx.sender, &tx.method, &tx.payload.0, &ctx)
            .map_err(RejectReason::Contract)?
    };
    accounts.get_mut(&tx.sender).expect("checked above").nonce += 1;
    Ok(events)
}

/// Standalone chain verification: rebuilds accounts and contract state by
/// replaying every transaction from genesis and cross-checks all hashes.
pub fn verify_blocks(market_seed: [u8; 32], blocks: &[Block]) -> ChainCheck {
    let Some(genesis) = blocks.first() else {
        return ChainCheck::Corrupt {
            height: 0,
            reason: CorruptReason::HeightMismatch,
        };
    };

    let mut contract = DeApp::new(KeyPair::from_seed(&market_seed).expect("32-byte seed"));
    let mut accounts: BTreeMap<Address, AccountInfo> = BTreeMap::new();

    if genesis.height != 0 || !genesis.txs.is_empty() {
        return ChainCheck::Corrupt {
            height: genesis.height,
            reason: CorruptReason::HeightMismatch,
        };
    }
    if genesis.parent_hash != Hash32::zero() {
        return ChainCheck::Corrupt {
            height: 0,
            reason: CorruptReason::ParentMismatch,
        };
    }
    if genesis.state_root != contract.state_root() {
        return ChainCheck::Corrupt {
            height: 0,
            reason: CorruptReason::StateRootMismatch,
        };
    }
    let expected = Block::compute_hash(0, &genesis.parent_hash, &genesis.txs, &genesis.state_root);
    if genesis.block_hash != expected {
        return ChainCheck::Corrupt {
            height: 0,
            reason: CorruptReason::HashMismatch,
        };
    }

    for (i, block) in blocks.iter().enumerate().skip(1) {
        let height = block.height;
        let recomputed = Block::compute_hash(
            block.height,
            &block.parent_hash,
            &block.txs,
            &block.state_root,
        );
        if block.block_hash != recomputed {
            return ChainCheck::Corrupt {
                height,
                reason: CorruptReason::HashMismatch,
            };
        }
        if block.height != blocks[i - 1].height + 1 {
            return ChainCheck::Corrupt {
                height,
                reason: CorruptReason::HeightMismatch,
            };
        }
        if block.parent_hash != blocks[i - 1].block_hash {
            return ChainCheck::Corrupt {
                height,
                reason: CorruptReason::ParentMismatch,
            };
        }
        for tx in &block.txs {
            match apply_tx(&mut accounts, &mut contract, block.height, tx) {
                Ok(_) => {}
                Err(RejectReason::BadSignature) => {
                    return ChainCheck::Corrupt {
                        height,
                        reason: CorruptReason::BadTxSignature,
                    }
                }
                Err(RejectReason::BadNonce { .. }) => {
                    return ChainCheck::Corrupt {
                        height,
                        reason: CorruptReason::BadNonce,
                    }
                }
                Err(_) => {
                    return ChainCheck::Corrupt {
                        height,
                        reason: CorruptReason::ExecutionDiverged,
                    }
                }
            }
        }
        if block.state_root != contract.state_root() {
            return ChainCheck::Corrupt {
                height,
                reason: CorruptReason::StateRootMismatch,
            };
        }
    }
    ChainCheck::Ok
}
