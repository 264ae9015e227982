//! MIT-format annotation streams: 16-bit little-endian words with a 6-bit type
//! code and a 10-bit time increment, plus the SKIP/NUM/SUB/CHN/AUX pseudo-codes.

use super::{Label, Result, WfdbError};

/// `N` in the WFDB code table; marks a non-apnea minute.
pub const ANNOT_NORMAL: u8 = 1;
/// `A` in the WFDB code table; marks an apnea minute.
pub const ANNOT_APNEA: u8 = 8;

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;
const MAX_INTERVAL: i64 = 0x3ff;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub sample: i64,
    pub code: u8,
}

impl Annotation {
    pub fn symbol(&self) -> char {
        match self.code {
            ANNOT_NORMAL => 'N',
            ANNOT_APNEA => 'A',
            _ => '?',
        }
    }
}

pub fn parse_annotations(bytes: &[u8]) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let mut time: i64 = 0;
    let word_at = |pos: usize| -> Result<u16> {
        bytes
            .get(pos..pos + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .ok_or(WfdbError::TruncatedAnnotations(pos))
    };
    while pos < bytes.len() {
        let word = word_at(pos)?;
        pos += 2;
        if word == 0 {
            break;
        }
        let code = (word >> 10) as u8;
        let field = (word & 0x3ff) as i64;
        match code {
            SKIP => {
                // PDP-11 long: high word first, each word little-endian.
                let hi = word_at(pos)? as u32;
                let lo = word_at(pos + 2)? as u32;
                pos += 4;
                time += ((hi << 16) | lo) as i32 as i64;
            }
            NUM | SUB | CHN => {}
            AUX => {
                let len = field as usize;
                pos += len + (len & 1);
                if pos > bytes.len() {
                    return Err(WfdbError::TruncatedAnnotations(bytes.len()));
                }
            }
            _ => {
                time += field;
                out.push(Annotation { sample: time, code });
            }
        }
    }
    Ok(out)
}

/// One label per annotated minute, in time order.
pub fn parse_apnea_annotations(bytes: &[u8]) -> Result<Vec<Label>> {
    let annotations = parse_annotations(bytes)?;
    let mut labels = Vec::with_capacity(annotations.len());
    let mut last: Option<i64> = None;
    for (index, a) in annotations.iter().enumerate() {
        if a.sample < 0 || last.is_some_and(|t| a.sample <= t) {
            return Err(WfdbError::NonMonotonic {
                index,
                time: a.sample,
            });
        }
        last = Some(a.sample);
        labels.push(match a.code {
            ANNOT_NORMAL => Label::NonApnea,
            ANNOT_APNEA => Label::Apnea,
            code => {
                return Err(WfdbError::UnknownSymbol {
                    code,
                    time: a.sample,
                })
            }
        });
    }
    Ok(labels)
}

pub fn encode_annotations(annotations: &[Annotation]) -> Vec<u8> {
    let mut out = Vec::with_capacity(annotations.len() * 6 + 2);
    let mut time = 0i64;
    let push = |out: &mut Vec<u8>, w: u16| out.extend_from_slice(&w.to_le_bytes());
    for a in annotations {
        let mut delta = a.sample - time;
        if !(0..=MAX_INTERVAL).contains(&delta) {
            push(&mut out, (SKIP as u16) << 10);
            let v = delta as i32 as u32;
            push(&mut out, (v >> 16) as u16);
            push(&mut out, (v & 0xffff) as u16);
            delta = 0;
        }
        push(&mut out, ((a.code as u16) << 10) | delta as u16);
        time = a.sample;
    }
    push(&mut out, 0);
    out
}

/// `A`/`N` minute markers at the start of each labelled minute.
pub fn apnea_annotation_bytes(labels: &[Label], fs: u32) -> Vec<u8> {
    let per_minute = fs as i64 * 60;
    let annotations: Vec<Annotation> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| Annotation {
            sample: i as i64 * per_minute,
            code: if l.is_apnea() { ANNOT_APNEA } else { ANNOT_NORMAL },
        })
        .collect();
    encode_annotations(&annotations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_map_to_labels() {
        use Label::*;
        let bytes = apnea_annotation_bytes(&[Apnea, NonApnea, NonApnea, Apnea], 100);
        assert_eq!(
            parse_apnea_annotations(&bytes).unwrap(),
            vec![Apnea, NonApnea, NonApnea, Apnea]
        );
        let symbols: String = parse_annotations(&bytes).unwrap().iter().map(|a| a.symbol()).collect();
        assert_eq!(symbols, "ANNA");
    }

    #[test]
    fn empty_stream_gives_no_labels() {
        assert!(parse_apnea_annotations(&[]).unwrap().is_empty());
        assert!(parse_apnea_annotations(&[0, 0]).unwrap().is_empty());
    }

    #[test]
    fn minute_spacing_uses_skip_words() {
        let bytes = apnea_annotation_bytes(&[Label::NonApnea, Label::Apnea], 100);
        // N at t=0, then SKIP 6000 followed by A with zero increment, then EOF.
        assert_eq!(bytes, vec![0x00, 0x04, 0x00, 0xEC, 0x00, 0x00, 0x70, 0x17, 0x00, 0x20, 0x00, 0x00]);
        let ann = parse_annotations(&bytes).unwrap();
        assert_eq!(ann[1].sample, 6000);
    }

    #[test]
    fn aux_and_num_words_are_skipped() {
        // N at 5, AUX of 3 bytes (padded to 4), NUM, then A at 5 + 10.
        let mut bytes = vec![];
        bytes.extend_from_slice(&((1u16 << 10) | 5).to_le_bytes());
        bytes.extend_from_slice(&((63u16 << 10) | 3).to_le_bytes());
        bytes.extend_from_slice(b"abc\0");
        bytes.extend_from_slice(&((60u16 << 10) | 2).to_le_bytes());
        bytes.extend_from_slice(&((8u16 << 10) | 10).to_le_bytes());
        let ann = parse_annotations(&bytes).unwrap();
        assert_eq!(ann, vec![
            Annotation { sample: 5, code: 1 },
            Annotation { sample: 15, code: 8 }
        ]);
    }

    #[test]
    fn rejects_unknown_symbols_and_time_reversal() {
        let bytes = encode_annotations(&[Annotation { sample: 0, code: 5 }]);
        assert!(matches!(
            parse_apnea_annotations(&bytes),
            Err(WfdbError::UnknownSymbol { code: 5, .. })
        ));
        let bytes = encode_annotations(&[
            Annotation { sample: 6000, code: 1 },
            Annotation { sample: 10, code: 1 },
        ]);
        assert!(matches!(
            parse_apnea_annotations(&bytes),
            Err(WfdbError::NonMonotonic { index: 1, .. })
        ));
    }

    #[test]
    fn truncated_skip_is_an_error() {
        let bytes = [0x00, 0xEC, 0x00];
        assert!(matches!(parse_annotations(&bytes), Err(WfdbError::TruncatedAnnotations(_))));
    }
}
