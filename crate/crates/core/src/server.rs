//! Lockstep UDP server: every STEP datagram advances the simulator exactly one
//! step and the STATE reply is the rendezvous.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use crate::env::{Env, StepEnv};
use crate::error::{Error, Result};
use crate::trace::{EpisodeTrace, TraceRow};
use crate::wire::{self, ErrorCode, Frame, Message, State};

/// Protocol state machine, independent of the transport.
#[derive(Debug)]
pub struct ServerCore {
    env: Env,
    default_seed: u64,
    last_seq: Option<u32>,
    trace: EpisodeTrace,
    clamped: u64,
}

impl ServerCore {
    pub fn new(env: Env, default_seed: u64) -> Self {
        let trace = EpisodeTrace::new(env.dt(), env.motor_count());
        Self {
            env,
            default_seed,
            last_seq: None,
            trace,
            clamped: 0,
        }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    /// Trace of the current episode as seen by the client.
    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    /// Out-of-range command components clamped in the current episode.
    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    pub fn handle(&mut self, datagram: &[u8]) -> Vec<u8> {
        let reply = match wire::decode(datagram) {
            Ok(frame) => {
                let seq = frame.seq;
                Frame {
                    seq,
                    message: self.dispatch(frame).unwrap_or_else(|(code, message)| Message::Error { code, message }),
                }
            }
            Err(e) => Frame {
                seq: e.seq.unwrap_or(0),
                message: Message::Error {
                    code: e.code,
                    message: e.reason,
                },
            },
        };
        if let Message::Error { code, message } = &reply.message {
            log::warn!("seq {}: {} ({message})", reply.seq, code.name());
        }
        wire::encode(&reply)
    }

    fn dispatch(&mut self, frame: Frame) -> std::result::Result<Message, (ErrorCode, String)> {
        match frame.message {
            Message::Reset { seed } => {
                let obs = self
                    .env
                    .reset(seed.unwrap_or(self.default_seed))
                    .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
                self.last_seq = Some(frame.seq);
                self.trace = EpisodeTrace::new(self.env.dt(), self.env.motor_count());
                self.clamped = 0;
                Ok(Message::State(State {
                    sim_time: obs.t,
                    gyro: obs.gyro,
                    rpm: self.env.rotor_rpm(),
                    reward: 0.0,
                    done: false,
                    setpoint: obs.setpoint,
                }))
            }
            Message::Step { u } => {
                let last = self
                    .last_seq
                    .ok_or((ErrorCode::NotReset, "STEP before RESET".to_string()))?;
                let expected = last.wrapping_add(1);
                if frame.seq != expected {
                    return Err((ErrorCode::Sequence, format!("expected seq {expected}, got {}", frame.seq)));
                }
                let m = self.env.motor_count();
                if u.len() != m {
                    return Err((ErrorCode::Length, format!("expected {m} commands, got {}", u.len())));
                }
                if u.iter().any(|v| v.is_nan()) {
                    return Err((ErrorCode::Value, "NaN motor command".into()));
                }
                if self.env.is_done() {
                    return Err((ErrorCode::EpisodeDone, "episode finished; send RESET".into()));
                }
                let out = self.env.step(&u).map_err(|e| (ErrorCode::Internal, e.to_string()))?;
                self.last_seq = Some(frame.seq);
                self.clamped = out.info.clamped;
                self.trace
                    .push(TraceRow {
                        t: out.obs.t,
                        setpoint: out.obs.setpoint,
                        gyro: out.obs.gyro,
                        u: out.info.u_applied.clone(),
                        rpm: out.info.rotor_rpm.clone(),
                        reward: out.reward,
                    })
                    .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
                Ok(Message::State(State {
                    sim_time: out.obs.t,
                    gyro: out.obs.gyro,
                    rpm: out.info.rotor_rpm,
                    reward: out.reward,
                    done: out.done,
                    setpoint: out.obs.setpoint,
                }))
            }
            Message::State(_) | Message::Error { .. } => {
                Err((ErrorCode::Malformed, "servers accept only RESET and STEP".into()))
            }
        }
    }
}

/// One environment bound to one UDP port, serving one client at a time.
#[derive(Debug)]
pub struct Server {
    socket: UdpSocket,
    core: ServerCore,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, core: ServerCore) -> Result<Self> {
        let socket = UdpSocket::bind(addr).map_err(|e| Error::Protocol(format!("bind: {e}")))?;
        socket
            .set_read_timeout(Some(Duration::from_millis(50)))
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(Self { socket, core })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.socket.local_addr().map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn core(&self) -> &ServerCore {
        &self.core
    }

    /// Answer datagrams until `stop` is set. `on_reply` sees the core after
    /// every handled request.
    pub fn serve(&mut self, stop: &AtomicBool, mut on_reply: impl FnMut(&ServerCore)) -> Result<()> {
        let mut buf = vec![0u8; wire::MAX_DATAGRAM];
        while !stop.load(Ordering::Relaxed) {
            let (n, peer) = match self.socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
                Err(e) => return Err(Error::Protocol(format!("recv: {e}"))),
            };
            let reply = self.core.handle(&buf[..n]);
            self.socket
                .send_to(&reply, peer)
                .map_err(|e| Error::Protocol(format!("send: {e}")))?;
            on_reply(&self.core);
        }
        Ok(())
    }
}

/// Blocking client: one request in flight, seq advanced by one per STEP.
#[derive(Debug)]
pub struct LockstepClient {
    socket: UdpSocket,
    seq: u32,
    buf: Vec<u8>,
}

impl LockstepClient {
    pub fn connect(server: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let socket = UdpSocket::bind("127.0.0.1:0").map_err(|e| Error::Protocol(format!("bind: {e}")))?;
        socket.connect(server).map_err(|e| Error::Protocol(format!("connect: {e}")))?;
        socket
            .set_read_timeout(Some(timeout))
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(Self {
            socket,
            seq: 0,
            buf: vec![0u8; wire::MAX_DATAGRAM],
        })
    }

    pub fn seq(&self) -> u32 {
        self.seq
    }

    fn request(&mut self, message: Message) -> Result<State> {
        let bytes = wire::encode(&Frame { seq: self.seq, message });
        self.socket.send(&bytes).map_err(|e| Error::Protocol(format!("send: {e}")))?;
        let n = self
            .socket
            .recv(&mut self.buf)
            .map_err(|e| Error::Protocol(format!("no reply to seq {}: {e}", self.seq)))?;
        let frame = wire::decode(&self.buf[..n])?;
        if frame.seq != self.seq {
            return Err(Error::Protocol(format!("reply seq {} for request {}", frame.seq, self.seq)));
        }
        match frame.message {
            Message::State(s) => Ok(s),
            Message::Error { code, message } => Err(Error::Protocol(format!("{}: {message}", code.name()))),
            other => Err(Error::Protocol(format!("unexpected reply kind {}", other.kind()))),
        }
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Result<State> {
        self.request(Message::Reset { seed })
    }

    pub fn step(&mut self, u: &[f64]) -> Result<State> {
        self.seq = self.seq.wrapping_add(1);
        let r = self.request(Message::Step { u: u.to_vec() });
        if r.is_err() {
            self.seq = self.seq.wrapping_sub(1);
        }
        r
    }

    /// Open-loop replay through the server, assembled into a trace the same
    /// way the in-process runner does.
    pub fn run_commands(&mut self, commands: &[Vec<f64>], seed: u64, dt: f64) -> Result<EpisodeTrace> {
        let first = self.reset(Some(seed))?;
        let m = commands.first().map_or(first.rpm.len(), Vec::len);
        let mut trace = EpisodeTrace::new(dt, m);
        for u in commands {
            let s = self.step(u)?;
            trace.push(TraceRow {
                t: s.sim_time,
                setpoint: s.setpoint,
                gyro: s.gyro,
                u: u.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                rpm: s.rpm,
                reward: s.reward,
            })?;
            if s.done {
                break;
            }
        }
        Ok(trace)
    }
}
