//! The chain value: append-time validation, full verification and fork choice.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{genesis_block, tx_root, Block, BlockHeader, MAX_DIFFICULTY_BITS};
use crate::digest::Digest;
use crate::policy::{ChainState, TxRule};
use crate::tx::TxFault;

/// An immutable chain starting at the fixed genesis, together with its
/// materialized state. Appending produces a new value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    state: ChainState,
    difficulty_bits: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxRejection {
    #[error("{0}")]
    Fault(#[from] TxFault),
    #[error("{0}")]
    Rule(#[from] TxRule),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppendError {
    #[error("block does not link to the current tip")]
    RejectBadLink,
    #[error("block builds on a parent that is no longer the tip")]
    RejectStaleParent,
    #[error("proof of work invalid or at the wrong difficulty")]
    RejectBadPoW,
    #[error("tx_root does not match the transaction list")]
    RejectBadTxRoot,
    #[error("non-genesis block has no transactions")]
    RejectEmpty,
    #[error("transaction {index} rejected: {reason}")]
    RejectBadTx { index: usize, reason: TxRejection },
    #[error("first block is not the canonical genesis")]
    RejectBadGenesis,
}

impl Chain {
    /// A chain holding only genesis. Every later block must be sealed at
    /// `difficulty_bits`.
    pub fn new(difficulty_bits: u8) -> Self {
        assert!(
            difficulty_bits <= MAX_DIFFICULTY_BITS,
            "difficulty out of range"
        );
        Self {
            blocks: vec![genesis_block()],
            state: ChainState::new(),
            difficulty_bits,
        }
    }

    /// Rebuilds a chain by appending every block after genesis, with full validation.
    pub fn replay(blocks: Vec<Block>, difficulty_bits: u8) -> Result<Self, (u64, AppendError)> {
        let mut iter = blocks.into_iter();
        match iter.next() {
            Some(g) if g == genesis_block() => {}
            _ => return Err((0, AppendError::RejectBadGenesis)),
        }
        let mut chain = Chain::new(difficulty_bits);
        for block in iter {
            let index = block.header.index;
            chain = chain.append_block(block).map_err(|e| (index, e))?;
        }
        Ok(chain)
    }

    /// Wraps blocks without any validation. Used to inspect untrusted or
    /// tampered data with [`verify_chain`]; the state is a best-effort fold.
    pub fn from_blocks_unchecked(blocks: Vec<Block>, difficulty_bits: u8) -> Self {
        let state = crate::policy::materialize_blocks(&blocks);
        Self {
            blocks,
            state,
            difficulty_bits,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn tip_header(&self) -> &BlockHeader {
        &self.tip().header
    }

    pub fn tip_digest(&self) -> Digest {
        self.tip().digest()
    }

    pub fn genesis_digest(&self) -> Digest {
        self.blocks[0].digest()
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn difficulty_bits(&self) -> u8 {
        self.difficulty_bits
    }

    /// True if `other`'s blocks start with all of ours.
    pub fn is_prefix_of(&self, other: &Chain) -> bool {
        self.len() <= other.len() && other.blocks[self.len() - 1].digest() == self.tip_digest()
    }

    /// Number of leading blocks the two chains share.
    pub fn common_prefix_len(&self, other: &Chain) -> usize {
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .take_while(|(a, b)| a.header == b.header)
            .count()
    }

    /// Validates `block` against the tip and the materialized state and
    /// returns the extended chain. `self` is left untouched.
    pub fn append_block(&self, block: Block) -> Result<Chain, AppendError> {
        let tip = self.tip();
        let h = &block.header;
        if h.prev_hash != tip.digest() {
            let stale = self.blocks[..self.blocks.len() - 1]
                .iter()
                .any(|b| b.digest() == h.prev_hash);
            return Err(if stale {
                AppendError::RejectStaleParent
            } else {
                AppendError::RejectBadLink
            });
        }
        if h.index != tip.header.index + 1 {
            return Err(AppendError::RejectBadLink);
        }
        if h.difficulty_bits != self.difficulty_bits
            || block.digest().leading_zero_bits() < h.difficulty_bits as u32
        {
            return Err(AppendError::RejectBadPoW);
        }
        if block.transactions.is_empty() {
            return Err(AppendError::RejectEmpty);
        }
        if tx_root(&block.transactions) != h.tx_root {
            return Err(AppendError::RejectBadTxRoot);
        }
        for (index, tx) in block.transactions.iter().enumerate() {
            tx.check().map_err(|f| AppendError::RejectBadTx {
                index,
                reason: f.into(),
            })?;
        }
        let mut state = self.state.clone();
        state
            .admit_block(&block)
            .map_err(|(index, rule)| AppendError::RejectBadTx {
                index,
                reason: rule.into(),
            })?;
        let mut blocks = Vec::with_capacity(self.blocks.len() + 1);
        blocks.extend_from_slice(&self.blocks);
        blocks.push(block);
        Ok(Chain {
            blocks,
            state,
            difficulty_bits: self.difficulty_bits,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureReason {
    BadLink,
    BadTxRoot,
    BadPoW,
    BadSignature,
    BadIndex,
    BadGenesis,
    /// A non-genesis block without transactions.
    EmptyBlock,
    /// Stored bytes that do not decode to a block at all.
    Malformed,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub block_index: u64,
    pub reason: FailureReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub failures: Vec<Failure>,
}

impl VerificationReport {
    pub fn from_failures(failures: Vec<Failure>) -> Self {
        Self {
            ok: failures.is_empty(),
            failures,
        }
    }

    pub fn flags(&self, block_index: u64, reason: FailureReason) -> bool {
        self.failures
            .iter()
            .any(|f| f.block_index == block_index && f.reason == reason)
    }

    pub fn flags_index(&self, block_index: u64) -> bool {
        self.failures.iter().any(|f| f.block_index == block_index)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return write!(f, "ok");
        }
        write!(f, "FAILED")?;
        for failure in &self.failures {
            write!(f, "\n  block {}: {}", failure.block_index, failure.reason)?;
        }
        Ok(())
    }
}

/// Checks every block, collecting all failures rather than stopping at the
/// first. Positions in the list are the authoritative block indices.
///
/// Per block: genesis constants, index continuity, `prev_hash` linkage,
/// `tx_root`, proof of work at the recorded difficulty (which must also
/// match the previous non-genesis block, since difficulty is fixed per
/// deployment) and every transaction's id and signature.
pub fn verify_chain(chain: &Chain) -> VerificationReport {
    verify_blocks(chain.blocks().iter().map(Some))
}

/// Like [`verify_chain`], but accepts `None` entries for positions whose
/// stored bytes failed to decode; those are reported as `Malformed`.
pub fn verify_blocks<'a>(
    blocks: impl IntoIterator<Item = Option<&'a Block>>,
) -> VerificationReport {
    let mut failures = Vec::new();
    let mut prev: Option<&Block> = None;
    let mut prev_missing = false;
    let mut fixed_difficulty: Option<u8> = None;
    let genesis = genesis_block();
    let mut keys = HashMap::new();

    for (pos, entry) in blocks.into_iter().enumerate() {
        let pos = pos as u64;
        let mut fail = |reason| {
            failures.push(Failure {
                block_index: pos,
                reason,
            })
        };
        let Some(block) = entry else {
            fail(FailureReason::Malformed);
            prev = None;
            prev_missing = true;
            continue;
        };
        let h = &block.header;

        if pos == 0 {
            if *block != genesis {
                fail(FailureReason::BadGenesis);
            }
            prev = Some(block);
            continue;
        }

        if h.index != pos {
            fail(FailureReason::BadIndex);
        }
        match prev {
            Some(p) if p.digest() == h.prev_hash => {}
            Some(_) => fail(FailureReason::BadLink),
            // The parent could not be decoded, so the link cannot be confirmed.
            None if prev_missing => fail(FailureReason::BadLink),
            None => {}
        }
        if tx_root(&block.transactions) != h.tx_root {
            fail(FailureReason::BadTxRoot);
        }
        let pow_ok = h.difficulty_bits <= MAX_DIFFICULTY_BITS
            && block.digest().leading_zero_bits() >= h.difficulty_bits as u32
            && fixed_difficulty.is_none_or(|d| d == h.difficulty_bits);
        if !pow_ok {
            fail(FailureReason::BadPoW);
        }
        fixed_difficulty.get_or_insert(h.difficulty_bits);
        if block.transactions.is_empty() {
            fail(FailureReason::EmptyBlock);
        }
        if block
            .transactions
            .iter()
            .any(|tx| tx.check_with(&mut keys).is_err())
        {
            fail(FailureReason::BadSignature);
        }
        prev = Some(block);
        prev_missing = false;
    }
    VerificationReport::from_failures(failures)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForkChoiceError {
    #[error("no candidate chains")]
    NoCandidates,
    #[error("candidates do not share a genesis block")]
    MixedGenesis,
}

/// Longest chain wins; equal lengths go to the lexicographically smallest
/// tip digest. Returns the index of the winner in `candidates`.
pub fn fork_choice_index(candidates: &[Chain]) -> Result<usize, ForkChoiceError> {
    let first = candidates.first().ok_or(ForkChoiceError::NoCandidates)?;
    let genesis = first.genesis_digest();
    if candidates.iter().any(|c| c.genesis_digest() != genesis) {
        return Err(ForkChoiceError::MixedGenesis);
    }
    let (best, _) = candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            b.len()
                .cmp(&a.len())
                .then_with(|| a.tip_digest().cmp(&b.tip_digest()))
        })
        .expect("non-empty");
    Ok(best)
}

pub fn fork_choice(candidates: &[Chain]) -> Result<&Chain, ForkChoiceError> {
    fork_choice_index(candidates).map(|i| &candidates[i])
}
