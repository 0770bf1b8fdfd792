//! Little-endian framing for talking to an external prior process.
//!
//! Handshake: client sends `"LPRI"`, `u32` version, `u32`-length-prefixed
//! UTF-8 model id. The server answers `"LPRI"`, version and a latent shape as
//! four `u32` (all zero for "same as input"), or an error frame (status byte
//! `1`, `u32`-length-prefixed message) if it refuses the model.
//!
//! Request: `u8` opcode, `u32` timestep, `T,H,W,C` as `u32`, then `f32` values.
//! Response: `u8` status; on `0` dims and values follow, on `1` a message.

use std::io::{self, ErrorKind, Read, Write};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::tensor::{Shape, VideoTensor};

pub const MAGIC: &[u8; 4] = b"LPRI";
pub const VERSION: u32 = 1;
pub const STATUS_OK: u8 = 0;
pub const STATUS_ERR: u8 = 1;
const MAX_MESSAGE: u32 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    Consistency = 1,
    EpsPredict = 2,
}

impl TryFrom<u8> for Opcode {
    type Error = Error;
    fn try_from(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Opcode::Consistency),
            2 => Ok(Opcode::EpsPredict),
            other => Err(Error::Protocol(format!("unknown opcode {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub opcode: Opcode,
    pub timestep: u32,
    pub tensor: VideoTensor,
}

fn map_io(e: io::Error, what: &str) -> Error {
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => Error::Timeout(Duration::ZERO),
        ErrorKind::UnexpectedEof => Error::Protocol(format!("stream closed while reading {what}")),
        ErrorKind::BrokenPipe => Error::Protocol(format!("peer closed the stream while writing {what}")),
        _ => Error::Protocol(format!("{what}: {e}")),
    }
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| map_io(e, what))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array::<4>(r, what)?))
}

fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    Ok(read_array::<1>(r, what)?[0])
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u32(r, what)?;
    if len > MAX_MESSAGE {
        return Err(Error::Protocol(format!("{what} length {len} exceeds {MAX_MESSAGE}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| map_io(e, what))?;
    String::from_utf8(buf).map_err(|_| Error::Protocol(format!("{what} is not valid UTF-8")))
}

fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_dims(buf: &mut Vec<u8>, s: Shape) {
    for d in s.as_array() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn send(w: &mut impl Write, buf: &[u8], what: &str) -> Result<()> {
    w.write_all(buf).and_then(|_| w.flush()).map_err(|e| map_io(e, what))
}

fn read_dims(r: &mut impl Read, what: &str) -> Result<[u32; 4]> {
    Ok([
        read_u32(r, what)?,
        read_u32(r, what)?,
        read_u32(r, what)?,
        read_u32(r, what)?,
    ])
}

fn shape_of(d: [u32; 4]) -> Result<Shape> {
    if d.contains(&0) {
        return Err(Error::Protocol(format!("zero dimension in {d:?}")));
    }
    Ok(Shape::new(d[0] as usize, d[1] as usize, d[2] as usize, d[3] as usize))
}

/// Reads `n` `f32` values, reporting byte counts if the stream ends early.
fn read_payload(r: &mut impl Read, shape: Shape) -> Result<VideoTensor> {
    let expected = shape
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Protocol(format!("payload for {shape} overflows")))?;
    let mut buf = vec![0u8; expected];
    let mut got = 0;
    while got < expected {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Protocol(format!(
                    "payload truncated: expected {expected} bytes for {shape}, received {got}"
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(map_io(e, "payload")),
        }
    }
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    VideoTensor::new(shape, data)
}

fn put_payload(buf: &mut Vec<u8>, x: &VideoTensor) {
    buf.reserve(x.len() * 4);
    for &v in x.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_hello(w: &mut impl Write, model_id: &str) -> Result<()> {
    let mut buf = MAGIC.to_vec();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_string(&mut buf, model_id);
    send(w, &buf, "handshake")
}

/// Server side: returns the requested model id.
pub fn read_hello(r: &mut impl Read) -> Result<String> {
    let magic = read_array::<4>(r, "handshake magic")?;
    if &magic != MAGIC {
        return Err(Error::Protocol(format!("bad handshake magic {magic:?}")));
    }
    let version = read_u32(r, "handshake version")?;
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {version}")));
    }
    read_string(r, "model id")
}

/// `None` announces "latent shape equals input shape".
pub fn write_hello_reply(w: &mut impl Write, latent: Option<Shape>) -> Result<()> {
    let mut buf = MAGIC.to_vec();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    match latent {
        Some(s) => put_dims(&mut buf, s),
        None => buf.extend_from_slice(&[0u8; 16]),
    }
    send(w, &buf, "handshake reply")
}

pub fn write_hello_error(w: &mut impl Write, message: &str) -> Result<()> {
    let mut buf = vec![STATUS_ERR];
    put_string(&mut buf, message);
    send(w, &buf, "handshake error")
}

pub fn read_hello_reply(r: &mut impl Read) -> Result<Option<Shape>> {
    let first = read_u8(r, "handshake reply")?;
    if first == STATUS_ERR {
        let msg = read_string(r, "handshake error message")?;
        return Err(Error::Protocol(format!("handshake refused: {msg}")));
    }
    let rest = read_array::<3>(r, "handshake reply")?;
    if [first, rest[0], rest[1], rest[2]] != *MAGIC {
        return Err(Error::Protocol("bad handshake reply magic".into()));
    }
    let version = read_u32(r, "handshake reply version")?;
    if version != VERSION {
        return Err(Error::Protocol(format!("server speaks protocol version {version}")));
    }
    let dims = read_dims(r, "latent shape")?;
    if dims == [0; 4] {
        Ok(None)
    } else {
        shape_of(dims).map(Some)
    }
}

pub fn encode_request(opcode: Opcode, timestep: u32, x: &VideoTensor) -> Vec<u8> {
    let mut buf = vec![opcode as u8];
    buf.extend_from_slice(&timestep.to_le_bytes());
    put_dims(&mut buf, x.shape());
    put_payload(&mut buf, x);
    buf
}

pub fn write_request(w: &mut impl Write, opcode: Opcode, timestep: u32, x: &VideoTensor) -> Result<()> {
    send(w, &encode_request(opcode, timestep, x), "request")
}

/// Server side. `Ok(None)` on a clean end of stream before a new frame.
pub fn read_request(r: &mut impl Read) -> Result<Option<Request>> {
    let mut op = [0u8; 1];
    loop {
        match r.read(&mut op) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(map_io(e, "opcode")),
        }
    }
    let opcode = Opcode::try_from(op[0])?;
    let timestep = read_u32(r, "timestep")?;
    let shape = shape_of(read_dims(r, "dims")?)?;
    let tensor = read_payload(r, shape)?;
    Ok(Some(Request {
        opcode,
        timestep,
        tensor,
    }))
}

pub fn encode_response_ok(x: &VideoTensor) -> Vec<u8> {
    let mut buf = vec![STATUS_OK];
    put_dims(&mut buf, x.shape());
    put_payload(&mut buf, x);
    buf
}

pub fn write_response_ok(w: &mut impl Write, x: &VideoTensor) -> Result<()> {
    send(w, &encode_response_ok(x), "response")
}

pub fn write_response_error(w: &mut impl Write, message: &str) -> Result<()> {
    let mut buf = vec![STATUS_ERR];
    put_string(&mut buf, message);
    send(w, &buf, "error response")
}

/// Client side; a server-reported failure becomes [`Error::Prior`].
pub fn read_response(r: &mut impl Read) -> Result<VideoTensor> {
    match read_u8(r, "response status")? {
        STATUS_OK => {
            let shape = shape_of(read_dims(r, "response dims")?)?;
            read_payload(r, shape)
        }
        STATUS_ERR => Err(Error::Prior(format!(
            "server error: {}",
            read_string(r, "error message")?
        ))),
        other => Err(Error::Protocol(format!("unknown response status {other}"))),
    }
}
