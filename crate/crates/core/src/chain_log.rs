//! Append-only chain persistence.
//!
//! The file starts with the magic bytes `MLG1`, followed by one record per
//! block: a `u32` big-endian length and the block's canonical bytes.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::block::{genesis_block, Block};
use crate::chain::{verify_blocks, AppendError, Chain, VerificationReport};
use crate::codec::Canonical;

pub const MAGIC: &[u8; 4] = b"MLG1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("chain log io error: {0}")]
    Io(#[from] io::Error),
    #[error("{0} is not a chain log (bad magic)")]
    BadMagic(PathBuf),
    #[error("chain log already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("record {index} is malformed")]
    Malformed { index: u64 },
    #[error("block {index} rejected on replay: {source}")]
    Replay { index: u64, source: AppendError },
}

/// Raw records read from a log. Each entry is the record bytes; framing
/// damage at the end of the file yields a final record holding whatever
/// bytes remained.
#[derive(Debug, Clone, Default)]
pub struct LogRecords {
    pub records: Vec<Vec<u8>>,
}

impl LogRecords {
    pub fn decode(&self) -> Vec<Option<Block>> {
        self.records
            .iter()
            .map(|r| Block::from_canonical_bytes(r).ok())
            .collect()
    }

    pub fn verify(&self) -> VerificationReport {
        let decoded = self.decode();
        verify_blocks(decoded.iter().map(Option::as_ref))
    }
}

pub fn encode_record(block: &Block) -> Vec<u8> {
    let bytes = block.to_canonical_bytes();
    let mut out = Vec::with_capacity(bytes.len() + 4);
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
    out
}

pub fn read_records(path: &Path) -> Result<LogRecords, LogError> {
    let data = fs::read(path)?;
    if data.len() < 4 || &data[..4] != MAGIC {
        return Err(LogError::BadMagic(path.to_path_buf()));
    }
    let mut records = Vec::new();
    let mut pos = 4;
    while pos < data.len() {
        if data.len() - pos < 4 {
            records.push(data[pos..].to_vec());
            break;
        }
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if data.len() - pos < len {
            records.push(data[pos..].to_vec());
            break;
        }
        records.push(data[pos..pos + len].to_vec());
        pos += len;
    }
    Ok(LogRecords { records })
}

/// Reads and fully validates a log into a chain.
pub fn load_chain(path: &Path, difficulty_bits: u8) -> Result<Chain, LogError> {
    let records = read_records(path)?;
    let mut blocks = Vec::with_capacity(records.records.len());
    for (i, r) in records.records.iter().enumerate() {
        blocks.push(
            Block::from_canonical_bytes(r).map_err(|_| LogError::Malformed { index: i as u64 })?,
        );
    }
    Chain::replay(blocks, difficulty_bits)
        .map_err(|(index, source)| LogError::Replay { index, source })
}

/// Writes a complete log for `chain`, failing if the file exists.
pub fn write_new(path: &Path, blocks: &[Block]) -> Result<(), LogError> {
    let mut f = match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            return Err(LogError::AlreadyExists(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut buf = MAGIC.to_vec();
    for b in blocks {
        buf.extend_from_slice(&encode_record(b));
    }
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(())
}

/// Creates a log containing only genesis.
pub fn create(path: &Path) -> Result<(), LogError> {
    write_new(path, &[genesis_block()])
}

/// Appends one block record and syncs.
pub fn append(path: &Path, block: &Block) -> Result<(), LogError> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    f.write_all(&encode_record(block))?;
    f.sync_data()?;
    Ok(())
}

/// Byte offset and length of record `index`'s payload (after its length prefix).
pub fn record_span(path: &Path, index: usize) -> Result<(u64, usize), LogError> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LogError::BadMagic(path.to_path_buf()));
    }
    let mut pos = 4u64;
    for i in 0..=index {
        let mut len = [0u8; 4];
        f.read_exact(&mut len)
            .map_err(|_| LogError::Malformed { index: i as u64 })?;
        let len = u32::from_be_bytes(len) as usize;
        pos += 4;
        if i == index {
            return Ok((pos, len));
        }
        pos += len as u64;
        f.seek(SeekFrom::Start(pos))?;
    }
    unreachable!()
}

/// XORs one byte of record `index`'s payload in place. Test and demo hook.
pub fn corrupt_record(
    path: &Path,
    index: usize,
    offset_in_record: usize,
    xor: u8,
) -> Result<(), LogError> {
    let (start, len) = record_span(path, index)?;
    if offset_in_record >= len {
        return Err(LogError::Malformed {
            index: index as u64,
        });
    }
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let at = start + offset_in_record as u64;
    f.seek(SeekFrom::Start(at))?;
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    f.seek(SeekFrom::Start(at))?;
    f.write_all(&[b[0] ^ xor])?;
    f.sync_data()?;
    Ok(())
}
