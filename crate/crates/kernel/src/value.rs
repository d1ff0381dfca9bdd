//! The value domain: integers, booleans, strings, and unit.
//!
//! Equality is structural and total, which the determinism audits rely
//! on: a message queue slot may be rebound only to an equal value, and
//! "equal" must be decidable.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Unit,
    Int(i64),
    Bool(bool),
    Str(String),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    /// Canonical byte encoding, used for wire payloads and digests.
    ///
    /// Layout: 1 tag byte, then big-endian fixed-width data (ints) or a
    /// 4-byte big-endian length followed by UTF-8 bytes (strings).
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        match self {
            Value::Unit => vec![0x00],
            Value::Int(n) => {
                let mut out = vec![0x01];
                out.extend_from_slice(&n.to_be_bytes());
                out
            }
            Value::Bool(b) => vec![0x02, u8::from(*b)],
            Value::Str(s) => {
                let mut out = vec![0x03];
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
                out
            }
        }
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Value, ValueDecodeError> {
        let (v, rest) = Self::decode_prefix(bytes)?;
        if !rest.is_empty() {
            return Err(ValueDecodeError::TrailingBytes(rest.len()));
        }
        Ok(v)
    }

    fn decode_prefix(bytes: &[u8]) -> Result<(Value, &[u8]), ValueDecodeError> {
        let (&tag, rest) = bytes.split_first().ok_or(ValueDecodeError::Truncated)?;
        match tag {
            0x00 => Ok((Value::Unit, rest)),
            0x01 => {
                if rest.len() < 8 {
                    return Err(ValueDecodeError::Truncated);
                }
                let (num, rest) = rest.split_at(8);
                Ok((Value::Int(i64::from_be_bytes(num.try_into().unwrap())), rest))
            }
            0x02 => {
                let (&b, rest) = rest.split_first().ok_or(ValueDecodeError::Truncated)?;
                match b {
                    0 => Ok((Value::Bool(false), rest)),
                    1 => Ok((Value::Bool(true), rest)),
                    other => Err(ValueDecodeError::BadBool(other)),
                }
            }
            0x03 => {
                if rest.len() < 4 {
                    return Err(ValueDecodeError::Truncated);
                }
                let (len, rest) = rest.split_at(4);
                let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
                if rest.len() < len {
                    return Err(ValueDecodeError::Truncated);
                }
                let (s, rest) = rest.split_at(len);
                let s = std::str::from_utf8(s).map_err(|_| ValueDecodeError::BadUtf8)?;
                Ok((Value::Str(s.to_owned()), rest))
            }
            other => Err(ValueDecodeError::BadTag(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueDecodeError {
    #[error("value encoding truncated")]
    Truncated,
    #[error("unknown value tag {0:#04x}")]
    BadTag(u8),
    #[error("bad boolean byte {0:#04x}")]
    BadBool(u8),
    #[error("string payload is not valid UTF-8")]
    BadUtf8,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => write!(f, "()"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}
