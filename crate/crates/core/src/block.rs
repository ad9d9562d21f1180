//! Block headers, proof-of-work sealing and the fixed genesis block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::digest::{hash_bytes, Digest};
use crate::tx::Transaction;

pub const MAX_DIFFICULTY_BITS: u8 = 32;
pub const DEFAULT_DIFFICULTY_BITS: u8 = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub index: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub timestamp_ms: u64,
    pub difficulty_bits: u8,
    pub nonce: u64,
}

impl Canonical for BlockHeader {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u64(self.index);
        self.prev_hash.encode_into(enc);
        self.tx_root.encode_into(enc);
        enc.u64(self.timestamp_ms)
            .u8(self.difficulty_bits)
            .u64(self.nonce);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(BlockHeader {
            index: dec.u64()?,
            prev_hash: Digest::decode_from(dec)?,
            tx_root: Digest::decode_from(dec)?,
            timestamp_ms: dec.u64()?,
            difficulty_bits: dec.u8()?,
            nonce: dec.u64()?,
        })
    }
}

/// Encoded header size: index, two digests, timestamp, difficulty, nonce.
pub const HEADER_LEN: usize = 8 + 32 + 32 + 8 + 1 + 8;

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        header_digest(self)
    }
}

pub fn header_digest(header: &BlockHeader) -> Digest {
    let mut enc = Encoder::with_capacity(HEADER_LEN);
    header.encode_into(&mut enc);
    hash_bytes(&enc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("difficulty {0} outside 0..=32")]
pub struct DifficultyOutOfRange(pub u32);

/// True iff the first `difficulty_bits` bits of `digest` are zero.
pub fn meets_difficulty(
    digest: &Digest,
    difficulty_bits: u32,
) -> Result<bool, DifficultyOutOfRange> {
    if difficulty_bits > MAX_DIFFICULTY_BITS as u32 {
        return Err(DifficultyOutOfRange(difficulty_bits));
    }
    Ok(digest.leading_zero_bits() >= difficulty_bits)
}

/// Canonical encoding of a transaction list: `u32` count then each transaction.
pub fn encode_tx_list(txs: &[Transaction]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.list(txs);
    enc.finish()
}

pub fn tx_root(txs: &[Transaction]) -> Digest {
    hash_bytes(&encode_tx_list(txs))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Canonical for Block {
    fn encode_into(&self, enc: &mut Encoder) {
        self.header.encode_into(enc);
        enc.list(&self.transactions);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Block {
            header: BlockHeader::decode_from(dec)?,
            transactions: dec.list()?,
        })
    }
}

impl Block {
    pub fn digest(&self) -> Digest {
        self.header.digest()
    }

    pub fn index(&self) -> u64 {
        self.header.index
    }
}

pub fn genesis_header() -> BlockHeader {
    BlockHeader {
        index: 0,
        prev_hash: Digest::ZERO,
        tx_root: tx_root(&[]),
        timestamp_ms: 0,
        difficulty_bits: 0,
        nonce: 0,
    }
}

pub fn genesis_block() -> Block {
    Block {
        header: genesis_header(),
        transactions: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MineError {
    #[error(transparent)]
    Difficulty(#[from] DifficultyOutOfRange),
    #[error("nonce space exhausted without meeting difficulty")]
    NonceExhausted,
}

/// Result of a mining run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mined {
    pub block: Block,
    /// Number of header digests computed, including the successful one.
    pub attempts: u64,
}

/// Mines a child of `parent` with the smallest nonce `>= nonce_start`
/// (wrapping at 2^64) whose header digest meets `difficulty_bits`.
pub fn mine_block(
    parent: &BlockHeader,
    txs: Vec<Transaction>,
    difficulty_bits: u8,
    timestamp_ms: u64,
    nonce_start: u64,
) -> Result<Mined, MineError> {
    let mut search = NonceSearch::new(parent, txs, difficulty_bits, timestamp_ms, nonce_start)?;
    match search.advance(u64::MAX)? {
        Some(mined) => Ok(mined),
        // u64::MAX trials plus the final nonce below covers the whole space.
        None => search.advance(1)?.ok_or(MineError::NonceExhausted),
    }
}

/// Incremental nonce search, so callers can bound the work done per step.
#[derive(Debug, Clone)]
pub struct NonceSearch {
    header: BlockHeader,
    txs: Vec<Transaction>,
    prefix: Vec<u8>,
    nonce_start: u64,
    tried: u128,
}

impl NonceSearch {
    pub fn new(
        parent: &BlockHeader,
        txs: Vec<Transaction>,
        difficulty_bits: u8,
        timestamp_ms: u64,
        nonce_start: u64,
    ) -> Result<Self, MineError> {
        if difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(DifficultyOutOfRange(difficulty_bits as u32).into());
        }
        let header = BlockHeader {
            index: parent.index + 1,
            prev_hash: parent.digest(),
            tx_root: tx_root(&txs),
            timestamp_ms,
            difficulty_bits,
            nonce: nonce_start,
        };
        let mut prefix = header.to_canonical_bytes();
        prefix.truncate(HEADER_LEN - 8);
        Ok(Self {
            header,
            txs,
            prefix,
            nonce_start,
            tried: 0,
        })
    }

    pub fn attempts(&self) -> u64 {
        self.tried.min(u64::MAX as u128) as u64
    }

    /// Tries up to `max_trials` further nonces. `Ok(None)` means keep going.
    pub fn advance(&mut self, max_trials: u64) -> Result<Option<Mined>, MineError> {
        let mut buf = self.prefix.clone();
        buf.extend_from_slice(&[0u8; 8]);
        for _ in 0..max_trials {
            if self.tried > u64::MAX as u128 {
                return Err(MineError::NonceExhausted);
            }
            let nonce = self.nonce_start.wrapping_add(self.tried as u64);
            buf[HEADER_LEN - 8..].copy_from_slice(&nonce.to_be_bytes());
            self.tried += 1;
            if hash_bytes(&buf).leading_zero_bits() >= self.header.difficulty_bits as u32 {
                let mut header = self.header.clone();
                header.nonce = nonce;
                return Ok(Some(Mined {
                    block: Block {
                        header,
                        transactions: self.txs.clone(),
                    },
                    attempts: self.attempts(),
                }));
            }
        }
        Ok(None)
    }
}
