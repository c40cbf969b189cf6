//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "HLRCKPT\0"
//! version      u32      1
//! num_users    u64
//! num_items    u64
//! dim          u32
//! slices       u32
//! item_memory  u8       0 or 1
//! payload      f32 LE, row-major: P, Q, K, M[, K_item, M_item]
//! checksum     u32      CRC-32 of the payload bytes
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use super::{Matrix, MemoryBank, ParameterStore};

const MAGIC: &[u8; 8] = b"HLRCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint header is invalid: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub slices: usize,
    pub item_memory: bool,
}

impl CheckpointHeader {
    pub fn of(store: &ParameterStore) -> Self {
        Self {
            num_users: store.num_users(),
            num_items: store.num_items(),
            dim: store.dim(),
            slices: store.slices(),
            item_memory: store.item_memory.is_some(),
        }
    }

    fn payload_floats(&self) -> usize {
        let banks = if self.item_memory { 2 } else { 1 };
        (self.num_users + self.num_items + 2 * banks * self.slices) * self.dim
    }
}

impl std::fmt::Display for CheckpointHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "users={} items={} d={} N={} item_memory={}",
            self.num_users, self.num_items, self.dim, self.slices, self.item_memory
        )
    }
}

fn tensors(store: &ParameterStore) -> impl Iterator<Item = &Matrix> {
    let mut out = vec![&store.users, &store.items, &store.memory.keys, &store.memory.values];
    if let Some(b) = &store.item_memory {
        out.push(&b.keys);
        out.push(&b.values);
    }
    out.into_iter()
}

pub fn write_checkpoint<W: Write>(store: &ParameterStore, mut out: W) -> Result<(), CheckpointError> {
    let h = CheckpointHeader::of(store);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(h.num_users as u64).to_le_bytes())?;
    out.write_all(&(h.num_items as u64).to_le_bytes())?;
    out.write_all(&(h.dim as u32).to_le_bytes())?;
    out.write_all(&(h.slices as u32).to_le_bytes())?;
    out.write_all(&[h.item_memory as u8])?;

    let mut payload = Vec::with_capacity(h.payload_floats() * 4);
    for m in tensors(store) {
        for &x in m.as_slice() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    out.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads only the header, leaving the payload unread.
pub fn read_header<R: Read>(input: &mut R) -> Result<CheckpointHeader, CheckpointError> {
    if &read_array::<8, _>(input)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_array(input)?);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let num_users = u64::from_le_bytes(read_array(input)?) as usize;
    let num_items = u64::from_le_bytes(read_array(input)?) as usize;
    let dim = u32::from_le_bytes(read_array(input)?) as usize;
    let slices = u32::from_le_bytes(read_array(input)?) as usize;
    let item_memory = match read_array::<1, _>(input)?[0] {
        0 => false,
        1 => true,
        other => return Err(CheckpointError::BadHeader(format!("item-memory flag {other}"))),
    };
    if dim == 0 || slices == 0 {
        return Err(CheckpointError::BadHeader(format!("d={dim}, N={slices}")));
    }
    Ok(CheckpointHeader {
        num_users,
        num_items,
        dim,
        slices,
        item_memory,
    })
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParameterStore, CheckpointError> {
    let h = read_header(&mut input)?;
    let mut payload = vec![0u8; h.payload_floats() * 4];
    input.read_exact(&mut payload)?;
    let stored = u32::from_le_bytes(read_array(&mut input)?);
    let computed = crc32fast::hash(&payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let mut take = |rows: usize| Matrix::from_vec(rows, h.dim, floats.by_ref().take(rows * h.dim).collect());
    let users = take(h.num_users);
    let items = take(h.num_items);
    let memory = MemoryBank {
        keys: take(h.slices),
        values: take(h.slices),
    };
    let item_memory = h.item_memory.then(|| MemoryBank {
        keys: take(h.slices),
        values: take(h.slices),
    });
    Ok(ParameterStore {
        users,
        items,
        memory,
        item_memory,
    })
}
