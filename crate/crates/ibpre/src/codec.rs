//! Canonical byte encoding: a versioned header byte, a type tag, and
//! big-endian `u32` length-prefixed fields in declaration order.
//!
//! Group elements use their compressed encodings, so every value has exactly
//! one byte representation and decoding is strict: lengths must match, group
//! elements must pass their curve and subgroup checks, and no trailing bytes
//! are tolerated.

use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};

use crate::curve::{Scalar, G1A, G2A, Gt, FR_BYTES, G1_BYTES, G2_BYTES, GT_BYTES};
use crate::error::CodecError;

/// Version byte prepended to every encoded value.
pub const ENCODING_VERSION: u8 = 0x01;

/// Incremental writer for the canonical encoding.
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    /// Start an encoding with the version header and a type tag.
    pub fn new(tag: u8) -> Self {
        Writer { buf: vec![ENCODING_VERSION, tag] }
    }

    /// Start a headerless field list (for embedding in other framings).
    pub fn bare() -> Self {
        Writer { buf: Vec::new() }
    }

    /// Append a single raw byte (used for small enums like ciphertext levels).
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    /// Append a big-endian `u32`.
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Append a big-endian `u64`.
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Append a length-prefixed byte string.
    pub fn bytes(&mut self, field: &[u8]) {
        self.u32(field.len() as u32);
        self.buf.extend_from_slice(field);
    }

    /// Append a length-prefixed compressed group-1 element.
    pub fn g1(&mut self, v: &G1A) {
        let mut tmp = Vec::with_capacity(G1_BYTES);
        v.serialize_compressed(&mut tmp).expect("serializing to a Vec cannot fail");
        self.bytes(&tmp);
    }

    /// Append a length-prefixed compressed group-2 element.
    pub fn g2(&mut self, v: &G2A) {
        let mut tmp = Vec::with_capacity(G2_BYTES);
        v.serialize_compressed(&mut tmp).expect("serializing to a Vec cannot fail");
        self.bytes(&tmp);
    }

    /// Append a length-prefixed target-group element.
    pub fn gt(&mut self, v: &Gt) {
        let mut tmp = Vec::with_capacity(GT_BYTES);
        v.serialize_compressed(&mut tmp).expect("serializing to a Vec cannot fail");
        self.bytes(&tmp);
    }

    /// Append a length-prefixed scalar.
    pub fn fr(&mut self, v: &Scalar) {
        let mut tmp = Vec::with_capacity(FR_BYTES);
        v.serialize_compressed(&mut tmp).expect("serializing to a Vec cannot fail");
        self.bytes(&tmp);
    }

    /// Finish and return the encoded bytes.
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Strict reader over the canonical encoding.
#[derive(Debug)]
pub struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    /// Open an encoding, checking the version header and type tag.
    pub fn new(buf: &'a [u8], wanted_tag: u8) -> Result<Self, CodecError> {
        let mut r = Reader { rest: buf };
        let version = r.u8("version")?;
        if version != ENCODING_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let tag = r.u8("type tag")?;
        if tag != wanted_tag {
            return Err(CodecError::UnexpectedTag { wanted: wanted_tag, found: tag });
        }
        Ok(r)
    }

    /// Open a headerless field list.
    pub fn bare(buf: &'a [u8]) -> Self {
        Reader { rest: buf }
    }

    /// Number of unread bytes.
    pub fn remaining(&self) -> usize {
        self.rest.len()
    }

    /// Read a single raw byte.
    pub fn u8(&mut self, field: &'static str) -> Result<u8, CodecError> {
        let (&b, rest) = self.rest.split_first().ok_or(CodecError::Truncated(field))?;
        self.rest = rest;
        Ok(b)
    }

    /// Read a big-endian `u32`.
    pub fn u32(&mut self, field: &'static str) -> Result<u32, CodecError> {
        if self.rest.len() < 4 {
            return Err(CodecError::Truncated(field));
        }
        let (head, rest) = self.rest.split_at(4);
        self.rest = rest;
        Ok(u32::from_be_bytes(head.try_into().expect("split_at(4) yields 4 bytes")))
    }

    /// Read a big-endian `u64`.
    pub fn u64(&mut self, field: &'static str) -> Result<u64, CodecError> {
        if self.rest.len() < 8 {
            return Err(CodecError::Truncated(field));
        }
        let (head, rest) = self.rest.split_at(8);
        self.rest = rest;
        Ok(u64::from_be_bytes(head.try_into().expect("split_at(8) yields 8 bytes")))
    }

    /// Read a length-prefixed byte string.
    pub fn bytes(&mut self, field: &'static str) -> Result<&'a [u8], CodecError> {
        let len = self.u32(field)? as usize;
        if self.rest.len() < len {
            return Err(CodecError::Truncated(field));
        }
        let (head, rest) = self.rest.split_at(len);
        self.rest = rest;
        Ok(head)
    }

    /// Read a length-prefixed UTF-8 string.
    pub fn string(&mut self, field: &'static str) -> Result<String, CodecError> {
        let raw = self.bytes(field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::InvalidUtf8(field))
    }

    /// Read a length-prefixed compressed group-1 element, with validation.
    pub fn g1(&mut self, field: &'static str) -> Result<G1A, CodecError> {
        let raw = self.bytes(field)?;
        if raw.len() != G1_BYTES {
            return Err(CodecError::InvalidLength(field));
        }
        G1A::deserialize_compressed(raw).map_err(|_| CodecError::InvalidGroupElement(field))
    }

    /// Read a length-prefixed compressed group-2 element, with validation.
    pub fn g2(&mut self, field: &'static str) -> Result<G2A, CodecError> {
        let raw = self.bytes(field)?;
        if raw.len() != G2_BYTES {
            return Err(CodecError::InvalidLength(field));
        }
        G2A::deserialize_compressed(raw).map_err(|_| CodecError::InvalidGroupElement(field))
    }

    /// Read a length-prefixed target-group element, with validation.
    pub fn gt(&mut self, field: &'static str) -> Result<Gt, CodecError> {
        let raw = self.bytes(field)?;
        if raw.len() != GT_BYTES {
            return Err(CodecError::InvalidLength(field));
        }
        Gt::deserialize_compressed(raw).map_err(|_| CodecError::InvalidGroupElement(field))
    }

    /// Read a length-prefixed scalar, with canonicity validation.
    pub fn fr(&mut self, field: &'static str) -> Result<Scalar, CodecError> {
        let raw = self.bytes(field)?;
        if raw.len() != FR_BYTES {
            return Err(CodecError::InvalidLength(field));
        }
        Scalar::deserialize_compressed(raw).map_err(|_| CodecError::InvalidGroupElement(field))
    }

    /// Assert the value was fully consumed.
    pub fn finish(self) -> Result<(), CodecError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(CodecError::TrailingBytes(self.rest.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_primitives() {
        let mut w = Writer::new(0x7f);
        w.u8(3);
        w.u32(0xdead_beef);
        w.u64(0x0102_0304_0506_0708);
        w.bytes(b"hello");
        let buf = w.finish();

        let mut r = Reader::new(&buf, 0x7f).unwrap();
        assert_eq!(r.u8("a").unwrap(), 3);
        assert_eq!(r.u32("b").unwrap(), 0xdead_beef);
        assert_eq!(r.u64("c").unwrap(), 0x0102_0304_0506_0708);
        assert_eq!(r.bytes("d").unwrap(), b"hello");
        r.finish().unwrap();
    }

    #[test]
    fn rejects_wrong_version_and_tag() {
        let mut w = Writer::new(0x01);
        w.u8(0);
        let mut buf = w.finish();

        assert_eq!(
            Reader::new(&buf, 0x02).unwrap_err(),
            CodecError::UnexpectedTag { wanted: 0x02, found: 0x01 }
        );

        buf[0] = 0x09;
        assert_eq!(Reader::new(&buf, 0x01).unwrap_err(), CodecError::UnsupportedVersion(0x09));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let mut w = Writer::new(0x01);
        w.bytes(b"abc");
        let buf = w.finish();

        // Cut the byte string short.
        let mut r = Reader::new(&buf[..buf.len() - 1], 0x01).unwrap();
        assert_eq!(r.bytes("payload").unwrap_err(), CodecError::Truncated("payload"));

        // Extend with garbage.
        let mut extended = buf.clone();
        extended.push(0xff);
        let mut r = Reader::new(&extended, 0x01).unwrap();
        r.bytes("payload").unwrap();
        assert_eq!(r.finish().unwrap_err(), CodecError::TrailingBytes(1));
    }

    #[test]
    fn length_prefix_is_big_endian() {
        let mut w = Writer::bare();
        w.bytes(b"\x01");
        assert_eq!(w.finish(), vec![0, 0, 0, 1, 1]);
    }
}
