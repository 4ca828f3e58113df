//! Dataset container.
//!
//! ```text
//! "SSLDATA\n"
//! {"format_version":1,"record_count":R}\n
//! R times:
//!   u32 LE  header length H
//!   H bytes JSON record header
//!   f32 LE  M*N channel samples, channel-major
//!   f32 LE  K*N source signal samples, source-major
//!   u32 LE  CRC-32 over header bytes and sample bytes
//! ```
//!
//! See `docs/dataset-format.md` for the header fields.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::geometry::{MicSpec, RoomSpec, Scene, SourceSpec};
use crate::render::SceneRecording;

pub const FORMAT_MAGIC: &[u8; 8] = b"SSLDATA\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FilePreamble {
    format_version: u32,
    record_count: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    format_version: u32,
    sample_rate: u32,
    num_samples: usize,
    num_channels: usize,
    noise_std: f64,
    rng_seed: u64,
    room: RoomSpec,
    mics: Vec<MicSpec>,
    sources: Vec<SourceSpec>,
}

pub fn write_dataset(recordings: &[SceneRecording], path: impl AsRef<Path>) -> SimResult<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(FORMAT_MAGIC)?;
    let preamble = FilePreamble {
        format_version: FORMAT_VERSION,
        record_count: recordings.len(),
    };
    serde_json::to_writer(&mut out, &preamble).map_err(|e| SimError::Format(e.to_string()))?;
    out.write_all(b"\n")?;

    for rec in recordings {
        let n = rec.num_samples();
        if rec.channels.iter().any(|c| c.len() != n)
            || rec.scene.sources.iter().any(|s| s.signal.len() != n)
            || rec.channels.len() != rec.scene.mics.len()
        {
            return Err(SimError::Shape(
                "recording channels and source signals must share one length".into(),
            ));
        }
        let header = RecordHeader {
            format_version: FORMAT_VERSION,
            sample_rate: rec.scene.room.sample_rate,
            num_samples: n,
            num_channels: rec.channels.len(),
            noise_std: rec.noise_std,
            rng_seed: rec.rng_seed,
            room: rec.scene.room.clone(),
            mics: rec.scene.mics.clone(),
            sources: rec.scene.sources.clone(),
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| SimError::Format(e.to_string()))?;
        let mut body = Vec::with_capacity(4 * n * (rec.channels.len() + rec.scene.sources.len()));
        for block in rec
            .channels
            .iter()
            .chain(rec.scene.sources.iter().map(|s| &s.signal))
        {
            for v in block {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&header_bytes);
        hasher.update(&body);

        out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        out.write_all(&body)?;
        out.write_all(&hasher.finalize().to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> SimResult<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| SimError::Format(format!("file truncated while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> SimResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

/// Reads every record of a dataset file. Either all records are returned or
/// an error is; no partial result is produced.
pub fn read_dataset(path: impl AsRef<Path>) -> SimResult<Vec<SceneRecording>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(FORMAT_MAGIC.len(), "magic")? != FORMAT_MAGIC {
        return Err(SimError::Format("not a dataset file (bad magic)".into()));
    }
    let line_end = bytes[cur.pos..]
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| SimError::Format("missing preamble line".into()))?;
    let preamble: FilePreamble = serde_json::from_slice(cur.take(line_end, "preamble")?)
        .map_err(|e| SimError::Format(format!("bad preamble: {e}")))?;
    cur.take(1, "preamble")?;
    if preamble.format_version != FORMAT_VERSION {
        return Err(SimError::VersionMismatch {
            found: preamble.format_version,
            expected: FORMAT_VERSION,
        });
    }

    let mut records = Vec::with_capacity(preamble.record_count.min(1 << 16));
    for record in 0..preamble.record_count {
        let header_len = cur.u32("record header length")? as usize;
        let header_bytes = cur.take(header_len, "record header")?;
        let header: RecordHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| SimError::Format(format!("record {record}: bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(SimError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if header.num_channels != header.mics.len() {
            return Err(SimError::Format(format!(
                "record {record}: {} channels for {} microphones",
                header.num_channels,
                header.mics.len()
            )));
        }
        let n = header.num_samples;
        let blocks = header.num_channels + header.sources.len();
        let body_len = blocks
            .checked_mul(n)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| SimError::Format(format!("record {record}: size overflow")))?;
        let body = cur.take(body_len, "sample blocks")?;
        let stored = cur.u32("checksum")?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(header_bytes);
        hasher.update(body);
        let computed = hasher.finalize();
        if stored != computed {
            return Err(SimError::ChecksumMismatch {
                record,
                stored,
                computed,
            });
        }

        let mut samples = body.chunks_exact(4 * n.max(1)).map(decode_f32);
        let channels: Vec<Vec<f32>> = if n == 0 {
            vec![Vec::new(); header.num_channels]
        } else {
            samples.by_ref().take(header.num_channels).collect()
        };
        let mut sources = header.sources;
        for s in sources.iter_mut() {
            s.signal = if n == 0 { Vec::new() } else { samples.next().unwrap_or_default() };
        }
        let mut room = header.room;
        room.sample_rate = header.sample_rate;
        records.push(SceneRecording {
            scene: Scene {
                room,
                mics: header.mics,
                sources,
            },
            channels,
            noise_std: header.noise_std,
            rng_seed: header.rng_seed,
        });
    }
    if cur.pos != bytes.len() {
        return Err(SimError::Format(format!(
            "{} trailing bytes after the last record",
            bytes.len() - cur.pos
        )));
    }
    Ok(records)
}
