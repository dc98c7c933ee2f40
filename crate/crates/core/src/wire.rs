//! Fixed little-endian datagram layout for the lockstep server.
//!
//! ```text
//! magic "GFC2" | version u8 = 1 | kind u8 | seq u32 | payload
//! RESET  (0)   empty, or seed u64
//! STEP   (1)   M x f64 motor commands
//! STATE  (128) sim_time f64, gyro 3 x f64 (deg/s), rotor M x f64 (RPM),
//!              reward f64, done u8, setpoint 3 x f64 (deg/s)
//! ERROR  (129) code u8, message length u16, UTF-8 message
//! ```

use crate::error::Error;

pub const MAGIC: [u8; 4] = *b"GFC2";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const MAX_DATAGRAM: usize = 65_507;

pub const KIND_RESET: u8 = 0;
pub const KIND_STEP: u8 = 1;
pub const KIND_STATE: u8 = 128;
pub const KIND_ERROR: u8 = 129;

const STATE_FIXED: usize = 8 + 24 + 8 + 1 + 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    Length = 2,
    Sequence = 3,
    Value = 4,
    EpisodeDone = 5,
    NotReset = 6,
    Internal = 7,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Malformed,
            2 => Self::Length,
            3 => Self::Sequence,
            4 => Self::Value,
            5 => Self::EpisodeDone,
            6 => Self::NotReset,
            7 => Self::Internal,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Malformed => "malformed",
            Self::Length => "length",
            Self::Sequence => "sequence",
            Self::Value => "value",
            Self::EpisodeDone => "episode-done",
            Self::NotReset => "not-reset",
            Self::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub sim_time: f64,
    pub gyro: [f64; 3],
    pub rpm: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub setpoint: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Reset { seed: Option<u64> },
    Step { u: Vec<f64> },
    State(State),
    Error { code: ErrorCode, message: String },
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Self::Reset { .. } => KIND_RESET,
            Self::Step { .. } => KIND_STEP,
            Self::State(_) => KIND_STATE,
            Self::Error { .. } => KIND_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub seq: u32,
    pub message: Message,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.message.kind());
    out.extend_from_slice(&frame.seq.to_le_bytes());
    match &frame.message {
        Message::Reset { seed } => {
            if let Some(s) = seed {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        Message::Step { u } => put_f64s(&mut out, u),
        Message::State(s) => {
            put_f64s(&mut out, &[s.sim_time]);
            put_f64s(&mut out, &s.gyro);
            put_f64s(&mut out, &s.rpm);
            put_f64s(&mut out, &[s.reward]);
            out.push(u8::from(s.done));
            put_f64s(&mut out, &s.setpoint);
        }
        Message::Error { code, message } => {
            let bytes = message.as_bytes();
            let n = bytes.len().min(u16::MAX as usize);
            out.push(*code as u8);
            out.extend_from_slice(&(n as u16).to_le_bytes());
            out.extend_from_slice(&bytes[..n]);
        }
    }
    out
}

/// A datagram that failed to decode, with the seq when the header was readable.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError {
    pub seq: Option<u32>,
    pub code: ErrorCode,
    pub reason: String,
}

impl From<DecodeError> for Error {
    fn from(e: DecodeError) -> Self {
        Error::Protocol(format!("{}: {}", e.code.name(), e.reason))
    }
}

fn f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Frame, DecodeError> {
    let bad = |seq, code, reason: String| DecodeError { seq, code, reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(None, ErrorCode::Malformed, format!("datagram of {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(bad(None, ErrorCode::Malformed, "bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(None, ErrorCode::Malformed, format!("unsupported version {}", bytes[4])));
    }
    let seq = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let p = &bytes[HEADER_LEN..];
    let message = match bytes[5] {
        KIND_RESET => match p.len() {
            0 => Message::Reset { seed: None },
            8 => Message::Reset {
                seed: Some(u64::from_le_bytes(p.try_into().expect("8 bytes"))),
            },
            n => return Err(bad(Some(seq), ErrorCode::Length, format!("RESET payload of {n} bytes"))),
        },
        KIND_STEP => {
            if p.len() % 8 != 0 {
                return Err(bad(Some(seq), ErrorCode::Length, format!("STEP payload of {} bytes", p.len())));
            }
            Message::Step { u: f64s(p) }
        }
        KIND_STATE => {
            if p.len() < STATE_FIXED || (p.len() - STATE_FIXED) % 8 != 0 {
                return Err(bad(Some(seq), ErrorCode::Length, format!("STATE payload of {} bytes", p.len())));
            }
            let m = (p.len() - STATE_FIXED) / 8;
            let head = f64s(&p[..32 + 8 * m + 8]);
            let done = match p[32 + 8 * m + 8] {
                0 => false,
                1 => true,
                v => return Err(bad(Some(seq), ErrorCode::Malformed, format!("done flag {v}"))),
            };
            let sp = f64s(&p[32 + 8 * m + 9..]);
            Message::State(State {
                sim_time: head[0],
                gyro: [head[1], head[2], head[3]],
                rpm: head[4..4 + m].to_vec(),
                reward: head[4 + m],
                done,
                setpoint: [sp[0], sp[1], sp[2]],
            })
        }
        KIND_ERROR => {
            if p.len() < 3 {
                return Err(bad(Some(seq), ErrorCode::Length, "short ERROR payload".into()));
            }
            let code = ErrorCode::from_u8(p[0])
                .ok_or_else(|| bad(Some(seq), ErrorCode::Malformed, format!("error code {}", p[0])))?;
            let n = u16::from_le_bytes([p[1], p[2]]) as usize;
            if p.len() != 3 + n {
                return Err(bad(Some(seq), ErrorCode::Length, "ERROR message length".into()));
            }
            let message = String::from_utf8(p[3..].to_vec())
                .map_err(|_| bad(Some(seq), ErrorCode::Malformed, "ERROR message not UTF-8".into()))?;
            Message::Error { code, message }
        }
        k => return Err(bad(Some(seq), ErrorCode::Malformed, format!("unknown kind {k}"))),
    };
    Ok(Frame { seq, message })
}
