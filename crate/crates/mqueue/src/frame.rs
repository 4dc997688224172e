//! Frame codec for segment files.

pub const HEADER_LEN: usize = 4;
pub const TRAILER_LEN: usize = 4;

pub fn checksum(payload: &[u8]) -> u32 {
    crc32fast::hash(payload)
}

pub fn frame_len(payload_len: usize) -> usize {
    HEADER_LEN + payload_len + TRAILER_LEN
}

pub fn encode_into(buf: &mut Vec<u8>, payload: &[u8]) {
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(payload);
    buf.extend_from_slice(&checksum(payload).to_le_bytes());
}

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded<'a> {
    Frame { payload: &'a [u8], crc: u32, len: usize },
    /// Not enough bytes for a whole frame (torn write at the tail).
    Incomplete,
    ChecksumMismatch,
}

pub fn decode(buf: &[u8]) -> Decoded<'_> {
    if buf.len() < HEADER_LEN {
        return Decoded::Incomplete;
    }
    let n = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    let total = frame_len(n);
    if buf.len() < total {
        return Decoded::Incomplete;
    }
    let payload = &buf[HEADER_LEN..HEADER_LEN + n];
    let crc = u32::from_le_bytes(buf[HEADER_LEN + n..total].try_into().unwrap());
    if checksum(payload) != crc {
        return Decoded::ChecksumMismatch;
    }
    Decoded::Frame {
        payload,
        crc,
        len: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian_length_payload_crc() {
        let mut buf = Vec::new();
        encode_into(&mut buf, b"abc");
        assert_eq!(&buf[..4], &[3, 0, 0, 0]);
        assert_eq!(&buf[4..7], b"abc");
        // CRC-32 (IEEE) of "abc" is 0x352441C2.
        assert_eq!(&buf[7..], &0x352441C2u32.to_le_bytes());
    }

    #[test]
    fn torn_and_corrupt_frames() {
        let mut buf = Vec::new();
        encode_into(&mut buf, b"hello");
        assert_eq!(decode(&buf[..buf.len() - 1]), Decoded::Incomplete);
        assert_eq!(decode(&buf[..2]), Decoded::Incomplete);
        buf[5] ^= 0xff;
        assert_eq!(decode(&buf), Decoded::ChecksumMismatch);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(payload in proptest::collection::vec(any::<u8>(), 0..512)) {
            let mut buf = Vec::new();
            encode_into(&mut buf, &payload);
            match decode(&buf) {
                Decoded::Frame { payload: p, len, .. } => {
                    prop_assert_eq!(p, &payload[..]);
                    prop_assert_eq!(len, buf.len());
                }
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }
    }
}
