//! Tamper evidence: every block hash, parent link, transaction signature,
//! and state root of a committed chain recomputes from genesis, so a
//! single flipped byte anywhere is detected.
//!
//! ```bash
//! cargo run -p distexchange --example tamper_evidence
//! ```

use distexchange::de_app::{encode_args, RegisterPodArgs, METHOD_REGISTER_POD};
use distexchange::identity::KeyPair;
use distexchange::ledger::{verify_blocks, ChainCheck, LedgerState, Transaction};
use distexchange::policy::UsagePolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let market_seed = [9u8; 32];
    let key = KeyPair::from_seed(&[1u8; 32])?;
    let mut ledger = LedgerState::new(market_seed);
    ledger.submit_tx(LedgerState::register_account_tx(&key));
    ledger.seal_block();

    for i in 0..10u64 {
        let pod_ref = format!("pod://host.example/{i}");
        let args = RegisterPodArgs {
            pod_ref: pod_ref.clone(),
            default_policy: UsagePolicy::new(pod_ref, 1, vec![])?,
        };
        let tx = Transaction::build(&key, 2 + i, METHOD_REGISTER_POD, encode_args(&args));
        ledger.submit_tx(tx);
        ledger.seal_block();
    }

    println!("committed chain:");
    print!("{}", ledger.dump_chain());
    println!("verify: {:?}", ledger.verify_chain());

    // Flip one byte of a transaction payload deep in the chain.
    let mut blocks = ledger.blocks().to_vec();
    blocks[5].txs[0].payload.0[3] ^= 0x01;
    println!("\nafter flipping one payload byte in block 5:");
    println!("verify: {:?}", verify_blocks(market_seed, &blocks));

    // Rewriting a block consistently still breaks the parent link chain.
    let mut blocks = ledger.blocks().to_vec();
    blocks[5].txs[0].payload.0[3] ^= 0x01;
    blocks[5].block_hash = distexchange::ledger::Block::compute_hash(
        blocks[5].height,
        &blocks[5].parent_hash,
        &blocks[5].txs,
        &blocks[5].state_root,
    );
    println!("\nafter recomputing the tampered block's own hash:");
    println!("verify: {:?}", verify_blocks(market_seed, &blocks));

    assert_eq!(verify_blocks(market_seed, ledger.blocks()), ChainCheck::Ok);
    Ok(())
}
