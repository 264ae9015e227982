//! Little-endian binary containers for beat series and feature segments.
//!
//! Layout: magic (8 bytes), version (u16), payload, CRC-32 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{io_err, write_atomic, Label, Result, WfdbError};
use crate::feature_extract::{channel_name, FeatureSegment};
use crate::peak_detect::BeatSeries;

pub const FEATURE_MAGIC: &[u8; 8] = b"APNFEAT\0";
pub const BEAT_MAGIC: &[u8; 8] = b"APNBEAT\0";
pub const FEATURE_FORMAT_VERSION: u16 = 1;
const BEAT_FORMAT_VERSION: u16 = 1;

pub(crate) struct Writer(Vec<u8>);

impl Writer {
    pub(crate) fn new(magic: &[u8; 8], version: u16) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(magic);
        w.u16(version);
        w
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic, version and trailing checksum before any field is read.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8; 8], what: &'static str, version: u16) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..8] != magic {
            return Err(WfdbError::BadMagic(what));
        }
        let found = u16::from_le_bytes([bytes[8], bytes[9]]);
        if found != version {
            return Err(WfdbError::VersionMismatch {
                found,
                expected: version,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(WfdbError::Checksum { stored, computed });
        }
        Ok(Reader { buf: body, pos: 10 })
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| WfdbError::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn done(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WfdbError::Corrupt(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub fn feature_file_bytes(segments: &[FeatureSegment]) -> Result<Vec<u8>> {
    let (n_channels, n_points) = segments
        .first()
        .map_or((0, 0), |s| (s.channels.len(), s.channels.first().map_or(0, Vec::len)));
    let consistent = segments.iter().all(|s| {
        s.channels.len() == n_channels
            && s.channel_mean.len() == n_channels
            && s.channel_std.len() == n_channels
            && s.channels.iter().all(|c| c.len() == n_points)
    });
    if !consistent {
        return Err(WfdbError::LayoutMismatch);
    }
    let mut w = Writer::new(FEATURE_MAGIC, FEATURE_FORMAT_VERSION);
    w.u16(n_channels as u16);
    w.u32(n_points as u32);
    w.u64(segments.len() as u64);
    for s in segments {
        w.u32(s.record_id.len() as u32);
        w.0.extend_from_slice(s.record_id.as_bytes());
        w.u32(s.minute_index);
        w.u8(s.label.bit());
        w.u32(s.beat_count);
        for c in 0..n_channels {
            w.f64(s.channel_mean[c]);
            w.f64(s.channel_std[c]);
        }
        for ch in &s.channels {
            for &v in ch {
                w.f64(v);
            }
        }
    }
    Ok(w.finish())
}

pub fn read_feature_file_bytes(bytes: &[u8]) -> Result<Vec<FeatureSegment>> {
    let mut r = Reader::open(bytes, FEATURE_MAGIC, "feature", FEATURE_FORMAT_VERSION)?;
    let n_channels = r.u16()? as usize;
    let n_points = r.u32()? as usize;
    let count = r.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let record_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| WfdbError::Corrupt("record id is not UTF-8".into()))?;
        let minute_index = r.u32()?;
        let label = Label::from_bit(r.u8()?).ok_or_else(|| WfdbError::Corrupt("label byte not 0/1".into()))?;
        let beat_count = r.u32()?;
        let mut channel_mean = Vec::with_capacity(n_channels);
        let mut channel_std = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            channel_mean.push(r.f64()?);
            channel_std.push(r.f64()?);
        }
        let mut channels = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let mut ch = Vec::with_capacity(n_points);
            for _ in 0..n_points {
                ch.push(r.f64()?);
            }
            channels.push(ch);
        }
        out.push(FeatureSegment {
            record_id,
            minute_index,
            label,
            beat_count,
            channels,
            channel_mean,
            channel_std,
        });
    }
    r.done()?;
    Ok(out)
}

pub fn write_feature_file(path: &Path, segments: &[FeatureSegment]) -> Result<()> {
    write_atomic(path, &feature_file_bytes(segments)?)
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureSegment>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    read_feature_file_bytes(&bytes)
}

/// Long-format CSV: `segment_id,label,channel,idx,value`, one row per point.
pub fn write_feature_csv<W: Write>(mut out: W, segments: &[FeatureSegment]) -> std::io::Result<()> {
    writeln!(out, "segment_id,label,channel,idx,value")?;
    for s in segments {
        for (c, ch) in s.channels.iter().enumerate() {
            for (i, v) in ch.iter().enumerate() {
                writeln!(
                    out,
                    "{}:{},{},{},{},{}",
                    s.record_id,
                    s.minute_index,
                    s.label.bit(),
                    channel_name(c),
                    i,
                    v
                )?;
            }
        }
    }
    Ok(())
}

pub fn beat_file_bytes(beats: &BeatSeries) -> Vec<u8> {
    let mut w = Writer::new(BEAT_MAGIC, BEAT_FORMAT_VERSION);
    w.u32(beats.fs);
    w.u64(beats.len() as u64);
    for i in 0..beats.len() {
        w.u64(beats.r_idx[i] as u64);
        w.f64(beats.r_amp[i]);
        w.u64(beats.s_idx[i] as u64);
        w.f64(beats.s_amp[i]);
    }
    w.finish()
}

pub fn write_beat_file(path: &Path, beats: &BeatSeries) -> Result<()> {
    write_atomic(path, &beat_file_bytes(beats))
}

pub fn read_beat_file(path: &Path) -> Result<BeatSeries> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut r = Reader::open(&bytes, BEAT_MAGIC, "beat", BEAT_FORMAT_VERSION)?;
    let fs = r.u32()?;
    let n = r.u64()? as usize;
    let mut beats = BeatSeries::empty(fs);
    for _ in 0..n {
        beats.r_idx.push(r.u64()? as usize);
        beats.r_amp.push(r.f64()?);
        beats.s_idx.push(r.u64()? as usize);
        beats.s_amp.push(r.f64()?);
    }
    r.done()?;
    Ok(beats)
}
