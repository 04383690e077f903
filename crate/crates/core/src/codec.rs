//! Canonical text records and length-prefixed framing.
//!
//! A record is compact JSON with object keys sorted bytewise at every level
//! and no insignificant whitespace, so equal values always encode to equal
//! bytes. On a stream each record is preceded by its byte length as a 4-byte
//! big-endian unsigned integer.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use thiserror::Error;

/// Wire format version carried by every envelope.
pub const PROTOCOL_VERSION: u64 = 1;

/// Upper bound on a single frame; larger prefixes are rejected unread.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
}

impl CodecError {
    fn malformed(e: impl ToString) -> Self {
        Self::Malformed(e.to_string())
    }
}

/// Serde adapter storing byte strings as lowercase hex.
pub mod hex_bytes {
    use alloc::string::String;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

/// Encode a value as a canonical record.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CodecError> {
    let value = serde_json::to_value(value).map_err(CodecError::malformed)?;
    Ok(canonical_value_bytes(&value))
}

pub fn canonical_value_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_unstable_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_canonical(item, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        Value::String(s) => write_string(s, out),
        Value::Number(n) => {
            let _ = write!(VecWriter(out), "{n}");
        }
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Null => out.extend_from_slice(b"null"),
    }
}

struct VecWriter<'a>(&'a mut Vec<u8>);

impl fmt::Write for VecWriter<'_> {
    fn write_str(&mut self, s: &str) -> fmt::Result {
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

/// JSON string with the same escapes serde_json emits.
fn write_string(s: &str, out: &mut Vec<u8>) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    out.push(b'"');
    let bytes = s.as_bytes();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let escape: &[u8] = match b {
            b'"' => b"\\\"",
            b'\\' => b"\\\\",
            b'\n' => b"\\n",
            b'\r' => b"\\r",
            b'\t' => b"\\t",
            0x08 => b"\\b",
            0x0c => b"\\f",
            0x00..=0x1f => b"",
            _ => continue,
        };
        out.extend_from_slice(&bytes[start..i]);
        if escape.is_empty() {
            out.extend_from_slice(&[b'\\', b'u', b'0', b'0', HEX[(b >> 4) as usize], HEX[(b & 0xf) as usize]]);
        } else {
            out.extend_from_slice(escape);
        }
        start = i + 1;
    }
    out.extend_from_slice(&bytes[start..]);
    out.push(b'"');
}

pub fn from_record<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    serde_json::from_slice(bytes).map_err(CodecError::malformed)
}

/// Prefix `record` with its length.
pub fn encode_frame(record: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(record.len() + 4);
    out.extend_from_slice(&(record.len() as u32).to_be_bytes());
    out.extend_from_slice(record);
    out
}

/// Try to split one frame off the front of `buf`.
///
/// Returns `Ok(None)` while the frame is incomplete, otherwise the record
/// and the number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(&[u8], usize)>, CodecError> {
    let Some(prefix) = buf.get(..4) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes([prefix[0], prefix[1], prefix[2], prefix[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::FrameTooLarge(len));
    }
    match buf.get(4..4 + len) {
        Some(record) => Ok(Some((record, 4 + len))),
        None => Ok(None),
    }
}

/// Encode a value whose serde form already emits every object's keys in
/// sorted order: structs declare their fields alphabetically and maps are
/// `BTreeMap<String, _>`. Skips the intermediate tree [`to_canonical`] builds.
pub fn to_sorted_record<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("sorted record types always serialize")
}

/// Write the outer record of a message around an already canonical `body`.
pub fn encode_envelope(msg_type: &str, request_id: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + msg_type.len() + request_id.len() + 56);
    out.extend_from_slice(b"{\"body\":");
    out.extend_from_slice(body);
    out.extend_from_slice(b",\"msg_type\":");
    write_string(msg_type, &mut out);
    out.extend_from_slice(b",\"request_id\":");
    write_string(request_id, &mut out);
    let _ = write!(VecWriter(&mut out), ",\"version\":{PROTOCOL_VERSION}}}");
    out
}

/// Decoded outer record of a message; the body stays unparsed until the
/// receiver knows its type.
#[derive(Debug, Deserialize)]
pub struct Envelope<'a> {
    pub version: u64,
    pub msg_type: String,
    pub request_id: String,
    #[serde(borrow)]
    pub body: &'a RawValue,
}

impl<'a> Envelope<'a> {
    pub fn decode(record: &'a [u8]) -> Result<Self, CodecError> {
        let env: Envelope<'a> = serde_json::from_slice(record).map_err(CodecError::malformed)?;
        if env.version != PROTOCOL_VERSION {
            return Err(CodecError::Version(env.version));
        }
        Ok(env)
    }

    pub fn body<T: DeserializeOwned>(&self) -> Result<T, CodecError> {
        serde_json::from_str(self.body.get()).map_err(CodecError::malformed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_at_every_level() {
        let v = json!({"z": 1, "a": {"y": [true, null], "b": "x"}, "m": -2.5});
        assert_eq!(
            canonical_value_bytes(&v),
            br#"{"a":{"b":"x","y":[true,null]},"m":-2.5,"z":1}"#.to_vec()
        );
    }

    #[test]
    fn struct_field_order_does_not_leak() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        assert_eq!(
            to_canonical(&S { zeta: 1, alpha: 2 }).unwrap(),
            br#"{"alpha":2,"zeta":1}"#.to_vec()
        );
    }

    #[test]
    fn string_escapes_match_serde_json() {
        let mut all: String = (0u8..0x80).map(char::from).collect();
        all.push_str("é\u{2028}😀");
        for text in [all.as_str(), "", "plain", "\\\""] {
            let mut ours = Vec::new();
            write_string(text, &mut ours);
            assert_eq!(ours, serde_json::to_vec(text).unwrap());
        }
    }

    #[test]
    fn envelope_writer_matches_generic_canonical_form() {
        let body = json!({"b": [1, -2.5, null], "a": {"z": true, "y": "s"}});
        let generic = canonical_value_bytes(&json!({
            "version": 1, "msg_type": "T\u{1}", "request_id": "id\"", "body": body,
        }));
        assert_eq!(
            encode_envelope("T\u{1}", "id\"", &canonical_value_bytes(&body)),
            generic
        );
    }

    #[test]
    fn envelope_body_is_parsed_on_demand() {
        let rec = encode_envelope("X", "r", br#"{"n":[1,2]}"#);
        let env = Envelope::decode(&rec).unwrap();
        assert_eq!((env.msg_type.as_str(), env.request_id.as_str()), ("X", "r"));
        assert_eq!(env.body.get(), r#"{"n":[1,2]}"#);
        assert_eq!(env.body::<Value>().unwrap(), json!({"n": [1, 2]}));
    }

    #[test]
    fn missing_envelope_field_is_malformed() {
        let rec = br#"{"body":{},"msg_type":"X","version":1}"#;
        assert!(matches!(Envelope::decode(rec), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn strings_are_escaped() {
        let v = json!({"k": "a\"b\n\u{1f}"});
        assert_eq!(canonical_value_bytes(&v), br#"{"k":"a\"b\n\u001f"}"#.to_vec());
    }

    #[test]
    fn envelope_bytes_are_exact() {
        let rec = encode_envelope("KeygroupCount", "r1", b"{}");
        assert_eq!(
            rec,
            br#"{"body":{},"msg_type":"KeygroupCount","request_id":"r1","version":1}"#.to_vec()
        );
        let frame = encode_frame(&rec);
        assert_eq!(&frame[..4], &[0, 0, 0, 68]);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let rec = br#"{"body":{},"msg_type":"X","request_id":"r","version":2}"#;
        assert_eq!(Envelope::decode(rec).unwrap_err(), CodecError::Version(2));
    }

    #[test]
    fn truncated_frame_is_incomplete() {
        let frame = encode_frame(b"hello");
        assert_eq!(decode_frame(&frame[..3]).unwrap(), None);
        assert_eq!(decode_frame(&frame[..8]).unwrap(), None);
        assert_eq!(decode_frame(&frame).unwrap(), Some((&b"hello"[..], 9)));
    }

    #[test]
    fn oversized_prefix_is_rejected() {
        let buf = [0xff, 0xff, 0xff, 0xff, 0];
        assert!(matches!(decode_frame(&buf), Err(CodecError::FrameTooLarge(_))));
    }

    #[test]
    fn hex_payloads_round_trip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct P {
            #[serde(with = "hex_bytes")]
            data: Vec<u8>,
        }
        let p = P {
            data: vec![0, 0xab, 0xff],
        };
        let bytes = to_canonical(&p).unwrap();
        assert_eq!(bytes, br#"{"data":"00abff"}"#.to_vec());
        assert_eq!(from_record::<P>(&bytes).unwrap(), p);
    }
}
