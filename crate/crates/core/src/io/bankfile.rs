//! Fixed little-endian layout for banks and MLP parameters.
//!
//! Bank file (`VBNK`):
//!
//! ```text
//! magic     4 bytes  "VBNK"
//! version   u16
//! policy    u8       0 = averaging, 1 = fifo
//! |C|       u32
//! n         u16
//! d         u32
//! per category:
//!   occupancy     u16
//!   write_cursor  u16
//!   n·d           f32, row-major
//! ```
//!
//! Parameter file (`VMLP`): magic, version u16, then d, h, D as u32 and the
//! flat parameter vector as f32.

use std::fs;
use std::path::Path;

use crate::bank::{CategorySlots, UpdatePolicy, VisualBank};
use crate::error::{Error, Result};
use crate::fusion::{MlpDims, MlpParams};

pub const BANK_MAGIC: &[u8; 4] = b"VBNK";
pub const BANK_VERSION: u16 = 1;
pub const PARAMS_MAGIC: &[u8; 4] = b"VMLP";
pub const PARAMS_VERSION: u16 = 1;

const BANK_HEADER_LEN: usize = 4 + 2 + 1 + 4 + 2 + 4;

fn too_big(what: &str, v: usize) -> Error {
    Error::InvalidDimension(format!("{what} = {v} does not fit the bank file format"))
}

pub fn encode_bank(bank: &VisualBank) -> Result<Vec<u8>> {
    let (c, n, d) = (bank.num_categories(), bank.slots_per_category(), bank.dim());
    let c32 = u32::try_from(c).map_err(|_| too_big("categories", c))?;
    let n16 = u16::try_from(n).map_err(|_| too_big("slots", n))?;
    let d32 = u32::try_from(d).map_err(|_| too_big("dim", d))?;

    let mut out = Vec::with_capacity(BANK_HEADER_LEN + c * (4 + 4 * n * d));
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.push(match bank.policy() {
        UpdatePolicy::Averaging => 0,
        UpdatePolicy::Fifo => 1,
    });
    out.extend_from_slice(&c32.to_le_bytes());
    out.extend_from_slice(&n16.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for id in bank.category_ids() {
        let cat = bank.category(id)?;
        // Both fit: occupancy <= n and cursor < n, and n fits u16.
        out.extend_from_slice(&(cat.occupancy() as u16).to_le_bytes());
        out.extend_from_slice(&(cat.write_cursor() as u16).to_le_bytes());
        for x in cat.raw() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        s
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn f32s(&mut self, count: usize) -> Vec<f32> {
        self.take(4 * count)
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    }
}

fn check_magic(buf: &[u8], magic: &[u8; 4], version: u16) -> Result<()> {
    if buf.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: buf.len(),
        });
    }
    if &buf[..4] != magic {
        return Err(Error::BadMagic);
    }
    if buf.len() < 6 {
        return Err(Error::Truncated {
            expected: 6,
            found: buf.len(),
        });
    }
    let found = u16::from_le_bytes([buf[4], buf[5]]);
    if found != version {
        return Err(Error::VersionMismatch {
            found,
            expected: version,
        });
    }
    Ok(())
}

/// Decode a bank, validating the whole payload before building anything.
pub fn decode_bank(buf: &[u8]) -> Result<VisualBank> {
    check_magic(buf, BANK_MAGIC, BANK_VERSION)?;
    if buf.len() < BANK_HEADER_LEN {
        return Err(Error::Truncated {
            expected: BANK_HEADER_LEN,
            found: buf.len(),
        });
    }
    let mut r = Reader { buf, pos: 6 };
    let policy = match r.take(1)[0] {
        0 => UpdatePolicy::Averaging,
        1 => UpdatePolicy::Fifo,
        other => return Err(Error::Corrupt(format!("unknown policy byte {other}"))),
    };
    let c = r.u32() as usize;
    let n = r.u16() as usize;
    let d = r.u32() as usize;
    if c == 0 || n == 0 || d == 0 {
        return Err(Error::Corrupt(format!("zero size in header ({c}, {n}, {d})")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(4))
        .and_then(|b| b.checked_mul(c))
        .and_then(|b| b.checked_add(BANK_HEADER_LEN))
        .ok_or_else(|| Error::Corrupt("declared sizes overflow".into()))?;
    if buf.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after payload",
            buf.len() - expected
        )));
    }
    let mut categories = Vec::with_capacity(c);
    for _ in 0..c {
        let occupancy = r.u16() as usize;
        let cursor = r.u16() as usize;
        let slots = r.f32s(n * d);
        categories.push(CategorySlots::from_raw(n, d, occupancy, cursor, slots)?);
    }
    VisualBank::from_parts(n, d, policy, categories)
}

pub fn bank_export(bank: &VisualBank, path: &Path) -> Result<()> {
    fs::write(path, encode_bank(bank)?).map_err(|e| Error::io(path, e))
}

pub fn bank_import(path: &Path) -> Result<VisualBank> {
    decode_bank(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_params(params: &MlpParams<f32>) -> Result<Vec<u8>> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(18 + 4 * dims.param_count());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    for v in [dims.input, dims.hidden, dims.output] {
        let v32 = u32::try_from(v).map_err(|_| too_big("mlp width", v))?;
        out.extend_from_slice(&v32.to_le_bytes());
    }
    for x in params.as_flat() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_params(buf: &[u8]) -> Result<MlpParams<f32>> {
    check_magic(buf, PARAMS_MAGIC, PARAMS_VERSION)?;
    if buf.len() < 18 {
        return Err(Error::Truncated {
            expected: 18,
            found: buf.len(),
        });
    }
    let mut r = Reader { buf, pos: 6 };
    let dims = MlpDims {
        input: r.u32() as usize,
        hidden: r.u32() as usize,
        output: r.u32() as usize,
    };
    let expected = 18 + 4 * dims.param_count();
    if buf.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: buf.len(),
        });
    }
    MlpParams::from_flat(dims, r.f32s(dims.param_count()))
}
