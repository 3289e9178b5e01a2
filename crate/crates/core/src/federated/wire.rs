use std::io::{ErrorKind, Read, Write};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::fsct::Container;

pub const FRAME_MAGIC: &[u8; 4] = b"FSFL";
/// Magic, type, round and payload length.
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 8 + 4;

const TYPE_BROADCAST: u8 = 1;
const TYPE_REPORT: u8 = 2;
const TYPE_SHUTDOWN: u8 = 3;

/// Scalar fields of a report travel as 1-element arrays under these names.
const SITE_KEY: &str = "site_id";
const COUNT_KEY: &str = "sample_count";

/// One protocol message. Parameter and gradient arrays are named
/// `g_s.*` and `g_m.*`.
#[derive(Clone, Debug, PartialEq)]
pub enum RoundMessage {
    ModelBroadcast {
        round: u64,
        params: Container,
    },
    GradientReport {
        round: u64,
        site_id: u32,
        sample_count: u32,
        grads: Container,
    },
    Shutdown {
        round: u64,
    },
}

impl RoundMessage {
    pub fn round(&self) -> u64 {
        match self {
            RoundMessage::ModelBroadcast { round, .. }
            | RoundMessage::GradientReport { round, .. }
            | RoundMessage::Shutdown { round } => *round,
        }
    }

    /// `FSFL | type u8 | round u64 | length u32 | FSCT payload`,
    /// little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let (ty, payload) = match self {
            RoundMessage::ModelBroadcast { params, .. } => (TYPE_BROADCAST, params.to_bytes()),
            RoundMessage::GradientReport {
                site_id,
                sample_count,
                grads,
                ..
            } => {
                let mut c = Container::new();
                c.push(SITE_KEY, Tensor::from_vec(vec![*site_id as f64]));
                c.push(COUNT_KEY, Tensor::from_vec(vec![*sample_count as f64]));
                for (n, t) in grads.iter() {
                    c.push(n, t.clone());
                }
                (TYPE_REPORT, c.to_bytes())
            }
            RoundMessage::Shutdown { .. } => (TYPE_SHUTDOWN, Container::new().to_bytes()),
        };
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(ty);
        out.extend_from_slice(&self.round().to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        let (ty, round, payload) = split_frame(frame)?;
        let c = Container::from_bytes(payload)?;
        match ty {
            TYPE_BROADCAST => Ok(RoundMessage::ModelBroadcast { round, params: c }),
            TYPE_REPORT => {
                let scalar = |k: &str| -> Result<u32> {
                    let t = c.require(k)?;
                    let v = if t.len() == 1 { t.data()[0] } else { f64::NAN };
                    if v.fract() != 0.0 || !(0.0..=u32::MAX as f64).contains(&v) {
                        return Err(Error::Format(format!("report field {k} is not a u32")));
                    }
                    Ok(v as u32)
                };
                let (site_id, sample_count) = (scalar(SITE_KEY)?, scalar(COUNT_KEY)?);
                let mut grads = Container::new();
                for (n, t) in c.iter().filter(|(n, _)| *n != SITE_KEY && *n != COUNT_KEY) {
                    grads.push(n, t.clone());
                }
                Ok(RoundMessage::GradientReport {
                    round,
                    site_id,
                    sample_count,
                    grads,
                })
            }
            TYPE_SHUTDOWN => Ok(RoundMessage::Shutdown { round }),
            t => Err(Error::Format(format!("unknown message type {t}"))),
        }
    }
}

fn split_frame(frame: &[u8]) -> Result<(u8, u64, &[u8])> {
    if frame.len() < FRAME_HEADER_LEN || &frame[..4] != FRAME_MAGIC {
        return Err(Error::Format("not an FSFL frame".into()));
    }
    let ty = frame[4];
    let round = u64::from_le_bytes(frame[5..13].try_into().expect("8 bytes"));
    let len = u32::from_le_bytes(frame[13..17].try_into().expect("4 bytes")) as usize;
    let payload = &frame[FRAME_HEADER_LEN..];
    if payload.len() != len {
        return Err(Error::Format(format!("frame declares {len} payload bytes, has {}", payload.len())));
    }
    Ok((ty, round, payload))
}

/// Names of every array carried by a frame.
pub fn frame_array_names(frame: &[u8]) -> Result<Vec<String>> {
    let (_, _, payload) = split_frame(frame)?;
    Ok(Container::from_bytes(payload)?.names().map(str::to_string).collect())
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<()> {
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one whole frame; `None` on a clean end of stream before a header.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &header[..4] != FRAME_MAGIC {
        return Err(Error::Format("not an FSFL frame".into()));
    }
    let len = u32::from_le_bytes(header[13..17].try_into().expect("4 bytes")) as usize;
    let mut frame = header.to_vec();
    frame.resize(FRAME_HEADER_LEN + len, 0);
    r.read_exact(&mut frame[FRAME_HEADER_LEN..])?;
    Ok(Some(frame))
}
