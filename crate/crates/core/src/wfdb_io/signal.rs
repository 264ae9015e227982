use super::{HeaderInfo, Result, WfdbError};

/// Raw ADC counts from a format 16 or 212 payload, in file order (frames interleaved).
pub fn decode_counts(bytes: &[u8], format: u16) -> Result<Vec<i32>> {
    match format {
        16 => {
            if !bytes.len().is_multiple_of(2) {
                return Err(WfdbError::Truncated(format!(
                    "format 16 payload has odd length {}",
                    bytes.len()
                )));
            }
            Ok(bytes
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as i32)
                .collect())
        }
        212 => {
            let mut out = Vec::with_capacity(bytes.len() / 3 * 2 + 1);
            let mut chunks = bytes.chunks_exact(3);
            for c in &mut chunks {
                out.push(sign_extend_12(c[0] as i32 | ((c[1] as i32 & 0x0f) << 8)));
                out.push(sign_extend_12(c[2] as i32 | ((c[1] as i32 & 0xf0) << 4)));
            }
            match *chunks.remainder() {
                [] => {}
                // A trailing odd sample occupies two bytes.
                [b0, b1] => out.push(sign_extend_12(b0 as i32 | ((b1 as i32 & 0x0f) << 8))),
                _ => {
                    return Err(WfdbError::Truncated(format!(
                        "format 212 payload length {} leaves a dangling byte",
                        bytes.len()
                    )))
                }
            }
            Ok(out)
        }
        other => Err(WfdbError::UnsupportedFormat(other)),
    }
}

fn sign_extend_12(v: i32) -> i32 {
    if v & 0x800 != 0 {
        v - 0x1000
    } else {
        v
    }
}

pub fn encode_counts(counts: &[i32], format: u16) -> Result<Vec<u8>> {
    match format {
        16 => {
            let mut out = Vec::with_capacity(counts.len() * 2);
            for &c in counts {
                let v = i16::try_from(c).map_err(|_| WfdbError::SampleOutOfRange { value: c, format })?;
                out.extend_from_slice(&v.to_le_bytes());
            }
            Ok(out)
        }
        212 => {
            if let Some(&c) = counts.iter().find(|&&c| !(-2048..=2047).contains(&c)) {
                return Err(WfdbError::SampleOutOfRange { value: c, format });
            }
            let mut out = Vec::with_capacity(counts.len().div_ceil(2) * 3);
            for pair in counts.chunks(2) {
                let a = (pair[0] & 0xfff) as u32;
                out.push((a & 0xff) as u8);
                match pair.get(1) {
                    Some(&b) => {
                        let b = (b & 0xfff) as u32;
                        out.push(((a >> 8) | ((b >> 8) << 4)) as u8);
                        out.push((b & 0xff) as u8);
                    }
                    None => out.push((a >> 8) as u8),
                }
            }
            Ok(out)
        }
        other => Err(WfdbError::UnsupportedFormat(other)),
    }
}

/// WFDB signal checksum: the 16-bit two's complement sum of all samples.
pub fn wfdb_checksum(counts: &[i32]) -> i32 {
    counts.iter().fold(0i16, |acc, &c| acc.wrapping_add(c as i16)) as i32
}

/// Decodes every signal of a record into physical units, one vector per signal.
pub fn decode_signals(bytes: &[u8], header: &HeaderInfo) -> Result<Vec<Vec<f64>>> {
    let n_sig = header.n_sig();
    let Some(first) = header.signals.first() else {
        return Ok(Vec::new());
    };
    let mut counts = decode_counts(bytes, first.format)?;
    if let Some(n) = header.n_samples {
        let expected = n * n_sig;
        // Format 212 pads an odd total to a whole byte triple.
        let padded = first.format == 212 && expected % 2 == 1 && counts.len() == expected + 1;
        if counts.len() < expected {
            return Err(WfdbError::Truncated(format!(
                "expected {expected} samples, payload holds {}",
                counts.len()
            )));
        }
        if counts.len() != expected && !padded {
            return Err(WfdbError::LengthMismatch {
                expected,
                found: counts.len(),
            });
        }
        counts.truncate(expected);
    } else if counts.len() % n_sig != 0 {
        return Err(WfdbError::LengthMismatch {
            expected: counts.len() / n_sig * n_sig,
            found: counts.len(),
        });
    }

    let mut out = Vec::with_capacity(n_sig);
    for (k, sig) in header.signals.iter().enumerate() {
        let raw: Vec<i32> = counts.iter().skip(k).step_by(n_sig).copied().collect();
        if let (Some(expected), Some(_)) = (sig.checksum, header.n_samples) {
            let found = wfdb_checksum(&raw);
            if found != expected {
                return Err(WfdbError::SignalChecksum {
                    signal: format!("{}#{k}", header.record_name),
                    expected,
                    found,
                });
            }
        }
        let base = sig.baseline as f64;
        out.push(raw.iter().map(|&c| (c as f64 - base) / sig.gain).collect());
    }
    Ok(out)
}

/// Physical-unit samples of the record's first signal.
pub fn decode_samples(bytes: &[u8], header: &HeaderInfo) -> Result<Vec<f64>> {
    Ok(decode_signals(bytes, header)?.into_iter().next().unwrap_or_default())
}
