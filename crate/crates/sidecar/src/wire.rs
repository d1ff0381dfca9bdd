//! The framed TCP protocol between sidecars.
//!
//! Frame layout, after a 4-byte big-endian length prefix covering
//! everything that follows:
//!
//! ```text
//! 1  byte   version (0x01)
//! 1  byte   kind
//! 16 bytes  session id
//! 2  bytes  choreography id length, then that many bytes
//! 2  bytes  sender id length, then that many bytes
//! 8  bytes  big-endian seqnum
//! 2  bytes  telemetry pair count, then per pair:
//!           2-byte key length + key, 2-byte value length + value
//! rest      payload
//! ```
//!
//! Payloads: the canonical value encoding for `Value` frames, the label
//! name in UTF-8 for `Label` frames, the acknowledging process name for
//! `Ack` frames (which echo the original session, sender, and seqnum),
//! and empty for `Finished` and `FailureBroadcast`.

use std::io::{self, Read, Write};

pub const WIRE_VERSION: u8 = 0x01;
const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Value,
    Label,
    Ack,
    Finished,
    FailureBroadcast,
}

impl FrameKind {
    pub fn to_byte(self) -> u8 {
        match self {
            FrameKind::Value => 0x01,
            FrameKind::Label => 0x02,
            FrameKind::Ack => 0x03,
            FrameKind::Finished => 0x04,
            FrameKind::FailureBroadcast => 0x05,
        }
    }

    pub fn from_byte(b: u8) -> Result<FrameKind, WireError> {
        Ok(match b {
            0x01 => FrameKind::Value,
            0x02 => FrameKind::Label,
            0x03 => FrameKind::Ack,
            0x04 => FrameKind::Finished,
            0x05 => FrameKind::FailureBroadcast,
            other => return Err(WireError::BadKind(other)),
        })
    }
}

/// The session headers attached to every message, plus the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub session_id: u128,
    pub choreography_id: String,
    pub sender_id: String,
    pub seqnum: u64,
    pub telemetry: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("unsupported wire version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown frame kind {0:#04x}")]
    BadKind(u8),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN} byte cap")]
    Oversized(u32),
    #[error("frame truncated")]
    Truncated,
    #[error("header field is not valid UTF-8")]
    BadUtf8,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(64 + self.payload.len());
        body.push(WIRE_VERSION);
        body.push(self.kind.to_byte());
        body.extend_from_slice(&self.session_id.to_be_bytes());
        put_str(&mut body, &self.choreography_id);
        put_str(&mut body, &self.sender_id);
        body.extend_from_slice(&self.seqnum.to_be_bytes());
        body.extend_from_slice(&(self.telemetry.len() as u16).to_be_bytes());
        for (k, v) in &self.telemetry {
            put_str(&mut body, k);
            put_str(&mut body, v);
        }
        body.extend_from_slice(&self.payload);

        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Frame, WireError> {
        let mut cur = body;
        let version = take_u8(&mut cur)?;
        if version != WIRE_VERSION {
            return Err(WireError::BadVersion(version));
        }
        let kind = FrameKind::from_byte(take_u8(&mut cur)?)?;
        let session_id = u128::from_be_bytes(take_n::<16>(&mut cur)?);
        let choreography_id = take_str(&mut cur)?;
        let sender_id = take_str(&mut cur)?;
        let seqnum = u64::from_be_bytes(take_n::<8>(&mut cur)?);
        let pair_count = u16::from_be_bytes(take_n::<2>(&mut cur)?);
        let mut telemetry = Vec::with_capacity(pair_count as usize);
        for _ in 0..pair_count {
            let k = take_str(&mut cur)?;
            let v = take_str(&mut cur)?;
            telemetry.push((k, v));
        }
        Ok(Frame {
            kind,
            session_id,
            choreography_id,
            sender_id,
            seqnum,
            telemetry,
            payload: cur.to_vec(),
        })
    }

    /// Read one length-prefixed frame; `Ok(None)` on a clean EOF before
    /// any byte of the next frame.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_FRAME_LEN {
            return Err(WireError::Oversized(len));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)
            .map_err(|_| WireError::Truncated)?;
        Ok(Some(Frame::decode_body(&body)?))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn take_u8(cur: &mut &[u8]) -> Result<u8, WireError> {
    let (&b, rest) = cur.split_first().ok_or(WireError::Truncated)?;
    *cur = rest;
    Ok(b)
}

fn take_n<const N: usize>(cur: &mut &[u8]) -> Result<[u8; N], WireError> {
    if cur.len() < N {
        return Err(WireError::Truncated);
    }
    let (head, rest) = cur.split_at(N);
    *cur = rest;
    Ok(head.try_into().unwrap())
}

fn take_str(cur: &mut &[u8]) -> Result<String, WireError> {
    let len = u16::from_be_bytes(take_n::<2>(cur)?) as usize;
    if cur.len() < len {
        return Err(WireError::Truncated);
    }
    let (s, rest) = cur.split_at(len);
    *cur = rest;
    String::from_utf8(s.to_vec()).map_err(|_| WireError::BadUtf8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(kind: FrameKind, payload: Vec<u8>) -> Frame {
        Frame {
            kind,
            session_id: 0x0011_2233_4455_6677_8899_aabb_ccdd_eeff,
            choreography_id: "order".into(),
            sender_id: "warehouse".into(),
            seqnum: 3,
            telemetry: vec![("trace".into(), "abc123".into())],
            payload,
        }
    }

    #[test]
    fn frame_roundtrip() {
        for kind in [
            FrameKind::Value,
            FrameKind::Label,
            FrameKind::Ack,
            FrameKind::Finished,
            FrameKind::FailureBroadcast,
        ] {
            let f = sample(kind, vec![1, 2, 3]);
            let bytes = f.encode();
            let mut cur = &bytes[..];
            let back = Frame::read_from(&mut cur).unwrap().unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn layout_is_pinned() {
        let f = Frame {
            kind: FrameKind::Value,
            session_id: 1,
            choreography_id: "c".into(),
            sender_id: "p".into(),
            seqnum: 2,
            telemetry: vec![],
            payload: vec![0xaa],
        };
        let bytes = f.encode();
        let body_len = (bytes.len() - 4) as u32;
        assert_eq!(&bytes[0..4], &body_len.to_be_bytes());
        assert_eq!(bytes[4], WIRE_VERSION);
        assert_eq!(bytes[5], 0x01);
        assert_eq!(&bytes[6..22], &1u128.to_be_bytes());
        assert_eq!(&bytes[22..24], &1u16.to_be_bytes()); // chor id len
        assert_eq!(bytes[24], b'c');
        assert_eq!(&bytes[25..27], &1u16.to_be_bytes()); // sender len
        assert_eq!(bytes[27], b'p');
        assert_eq!(&bytes[28..36], &2u64.to_be_bytes());
        assert_eq!(&bytes[36..38], &0u16.to_be_bytes()); // telemetry count
        assert_eq!(&bytes[38..], &[0xaa]);
    }

    #[test]
    fn truncated_frame_is_rejected() {
        let f = sample(FrameKind::Value, vec![9; 10]);
        let bytes = f.encode();
        let mut cur = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Frame::read_from(&mut cur),
            Err(WireError::Truncated)
        ));
    }

    #[test]
    fn clean_eof_is_none() {
        let mut cur: &[u8] = &[];
        assert!(Frame::read_from(&mut cur).unwrap().is_none());
    }

    #[test]
    fn bad_version_is_rejected() {
        let f = sample(FrameKind::Value, vec![]);
        let mut bytes = f.encode();
        bytes[4] = 0x7f;
        let mut cur = &bytes[..];
        assert!(matches!(
            Frame::read_from(&mut cur),
            Err(WireError::BadVersion(0x7f))
        ));
    }
}
