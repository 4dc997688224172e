//! Column codecs for sealed segments.
//!
//! Timestamps: the first timestamp, the first delta, then one
//! delta-of-delta per point, each as a zigzag LEB128 varint. A steady
//! cadence therefore costs one byte per point.
//!
//! Values: XOR of consecutive IEEE-754 bit patterns, bit-packed:
//!
//! ```text
//! first value              64 raw bits
//! xor == 0                 '0'
//! fits previous window     '10' + meaningful bits
//! new window               '11' + 5 bits leading zeros + 6 bits length + meaningful bits
//! ```

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of column")]
    Truncated,
    #[error("varint overflow")]
    Overflow,
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *buf.get(*pos).ok_or(CodecError::Truncated)?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CodecError::Overflow)
}

pub fn encode_timestamps(ts: &[i64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ts.len() + 16);
    let mut prev = 0i64;
    let mut prev_delta = 0i64;
    for (i, &t) in ts.iter().enumerate() {
        match i {
            0 => put_varint(&mut out, zigzag(t)),
            1 => {
                prev_delta = t.wrapping_sub(prev);
                put_varint(&mut out, zigzag(prev_delta));
            }
            _ => {
                let delta = t.wrapping_sub(prev);
                put_varint(&mut out, zigzag(delta.wrapping_sub(prev_delta)));
                prev_delta = delta;
            }
        }
        prev = t;
    }
    out
}

pub fn decode_timestamps(buf: &[u8], count: usize) -> Result<Vec<i64>, CodecError> {
    let mut out = Vec::with_capacity(count);
    let mut pos = 0;
    let mut prev = 0i64;
    let mut delta = 0i64;
    for i in 0..count {
        let raw = unzigzag(get_varint(buf, &mut pos)?);
        let t = match i {
            0 => raw,
            1 => {
                delta = raw;
                prev.wrapping_add(delta)
            }
            _ => {
                delta = delta.wrapping_add(raw);
                prev.wrapping_add(delta)
            }
        };
        out.push(t);
        prev = t;
    }
    Ok(out)
}

#[derive(Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits already used in the last byte (0 means a fresh byte is needed).
    used: u8,
}

impl BitWriter {
    pub fn write_bit(&mut self, bit: bool) {
        if self.used == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte pushed");
            *last |= 0x80 >> self.used;
        }
        self.used = (self.used + 1) % 8;
    }

    /// Writes the low `n` bits of `v`, most significant first.
    pub fn write_bits(&mut self, v: u64, n: u32) {
        for i in (0..n).rev() {
            self.write_bit((v >> i) & 1 == 1);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, bit: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool, CodecError> {
        let byte = *self.bytes.get(self.bit / 8).ok_or(CodecError::Truncated)?;
        let v = byte & (0x80 >> (self.bit % 8)) != 0;
        self.bit += 1;
        Ok(v)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    let mut w = BitWriter::default();
    let mut prev = 0u64;
    // Current window; leading = 64 marks "no window yet".
    let mut leading = 64u32;
    let mut trailing = 0u32;
    for (i, v) in values.iter().enumerate() {
        let bits = v.to_bits();
        if i == 0 {
            w.write_bits(bits, 64);
            prev = bits;
            continue;
        }
        let xor = bits ^ prev;
        prev = bits;
        if xor == 0 {
            w.write_bit(false);
            continue;
        }
        w.write_bit(true);
        let lz = xor.leading_zeros().min(31);
        let tz = xor.trailing_zeros();
        if leading != 64 && lz >= leading && tz >= trailing {
            w.write_bit(false);
            let len = 64 - leading - trailing;
            w.write_bits(xor >> trailing, len);
        } else {
            let len = 64 - lz - tz;
            w.write_bit(true);
            w.write_bits(u64::from(lz), 5);
            // A 64-bit window is stored as 0.
            w.write_bits(u64::from(len & 63), 6);
            w.write_bits(xor >> tz, len);
            leading = lz;
            trailing = tz;
        }
    }
    w.finish()
}

pub fn decode_values(buf: &[u8], count: usize) -> Result<Vec<f64>, CodecError> {
    let mut r = BitReader::new(buf);
    let mut out = Vec::with_capacity(count);
    let mut prev = 0u64;
    let mut leading = 0u32;
    let mut trailing = 0u32;
    for i in 0..count {
        if i == 0 {
            prev = r.read_bits(64)?;
            out.push(f64::from_bits(prev));
            continue;
        }
        if r.read_bit()? {
            if r.read_bit()? {
                leading = r.read_bits(5)? as u32;
                let mut len = r.read_bits(6)? as u32;
                if len == 0 {
                    len = 64;
                }
                trailing = 64 - leading - len;
            }
            let len = 64 - leading - trailing;
            let meaningful = r.read_bits(len)?;
            prev ^= meaningful << trailing;
        }
        out.push(f64::from_bits(prev));
    }
    Ok(out)
}
