use super::{Result, WfdbError};

/// Default ADC gain (counts per physical unit) when a header leaves it at 0.
const DEFAULT_GAIN: f64 = 200.0;
/// Sampling rate assumed when the record line omits it.
const DEFAULT_FS: u32 = 250;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalInfo {
    pub file_name: String,
    pub format: u16,
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    pub checksum: Option<i32>,
    pub block_size: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaderInfo {
    pub record_name: String,
    pub fs: u32,
    pub n_samples: Option<usize>,
    pub signals: Vec<SignalInfo>,
}

impl HeaderInfo {
    pub fn n_sig(&self) -> usize {
        self.signals.len()
    }

    /// Gain of the first (and for Apnea-ECG, only) signal.
    pub fn gain(&self) -> f64 {
        self.signals.first().map_or(DEFAULT_GAIN, |s| s.gain)
    }

    pub fn fmt(&self) -> Option<u16> {
        self.signals.first().map(|s| s.format)
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> WfdbError {
    WfdbError::MalformedHeader {
        line,
        reason: reason.into(),
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<HeaderInfo> {
    let text = std::str::from_utf8(bytes).map_err(|_| malformed(0, "header is not valid UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (lno, record_line) = lines.next().ok_or_else(|| malformed(0, "empty header"))?;
    let mut fields = record_line.split_whitespace();
    let name_field = fields.next().ok_or_else(|| malformed(lno, "missing record name"))?;
    if name_field.contains('/') {
        return Err(malformed(lno, "multi-segment records are not supported"));
    }
    let n_sig: usize = fields
        .next()
        .ok_or_else(|| malformed(lno, "missing signal count"))?
        .parse()
        .map_err(|_| malformed(lno, "signal count is not an integer"))?;
    let fs = match fields.next() {
        Some(f) => parse_fs(f).ok_or_else(|| malformed(lno, format!("bad sampling frequency {f:?}")))?,
        None => DEFAULT_FS,
    };
    let n_samples = match fields.next() {
        Some(n) => Some(
            n.parse()
                .map_err(|_| malformed(lno, format!("bad sample count {n:?}")))?,
        ),
        None => None,
    };

    let mut signals = Vec::with_capacity(n_sig);
    for _ in 0..n_sig {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| malformed(lno, format!("expected {n_sig} signal lines")))?;
        signals.push(parse_signal_line(lno, line)?);
    }
    if let Some(first) = signals.first() {
        if signals.iter().any(|s| s.file_name != first.file_name || s.format != first.format) {
            return Err(malformed(lno, "signals must share one file and format"));
        }
    }
    Ok(HeaderInfo {
        record_name: name_field.to_string(),
        fs,
        n_samples,
        signals,
    })
}

fn parse_fs(field: &str) -> Option<u32> {
    let head = field.split(['/', '(']).next()?;
    let fs: f64 = head.parse().ok()?;
    if fs > 0.0 && fs.fract() == 0.0 && fs <= u32::MAX as f64 {
        Some(fs as u32)
    } else {
        None
    }
}

fn parse_signal_line(lno: usize, line: &str) -> Result<SignalInfo> {
    let mut fields = line.split_whitespace();
    let file_name = fields
        .next()
        .ok_or_else(|| malformed(lno, "missing file name"))?
        .to_string();
    let fmt_field = fields.next().ok_or_else(|| malformed(lno, "missing format"))?;
    let format: u16 = fmt_field
        .parse()
        .map_err(|_| malformed(lno, format!("unsupported format modifiers in {fmt_field:?}")))?;
    if format != 16 && format != 212 {
        return Err(WfdbError::UnsupportedFormat(format));
    }

    let mut gain = DEFAULT_GAIN;
    let mut baseline = None;
    let mut units = "mV".to_string();
    if let Some(g) = fields.next() {
        let (gain_part, rest) = match g.find(['(', '/']) {
            Some(i) => g.split_at(i),
            None => (g, ""),
        };
        let parsed: f64 = gain_part
            .parse()
            .map_err(|_| malformed(lno, format!("bad gain {g:?}")))?;
        if parsed != 0.0 {
            gain = parsed;
        }
        let mut rest = rest;
        if let Some(stripped) = rest.strip_prefix('(') {
            let close = stripped
                .find(')')
                .ok_or_else(|| malformed(lno, "unterminated baseline"))?;
            baseline = Some(
                stripped[..close]
                    .parse()
                    .map_err(|_| malformed(lno, "bad baseline"))?,
            );
            rest = &stripped[close + 1..];
        }
        if let Some(u) = rest.strip_prefix('/') {
            units = u.to_string();
        }
    }
    let mut int_field = |what: &str| -> Result<Option<i64>> {
        match fields.next() {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| malformed(lno, format!("bad {what} {v:?}"))),
            None => Ok(None),
        }
    };
    let adc_resolution = int_field("ADC resolution")?.unwrap_or(if format == 212 { 12 } else { 16 });
    let adc_zero = int_field("ADC zero")?.unwrap_or(0);
    let initial_value = int_field("initial value")?.unwrap_or(adc_zero);
    let checksum = int_field("checksum")?;
    let block_size = int_field("block size")?.unwrap_or(0);
    let description = fields.collect::<Vec<_>>().join(" ");

    Ok(SignalInfo {
        file_name,
        format,
        gain,
        baseline: baseline.unwrap_or(adc_zero as i32),
        units,
        adc_resolution: adc_resolution as u32,
        adc_zero: adc_zero as i32,
        initial_value: initial_value as i32,
        checksum: checksum.map(|c| c as i32),
        block_size: block_size as u32,
        description,
    })
}

/// Renders a header in the layout `parse_header` reads back.
pub fn format_header(h: &HeaderInfo) -> String {
    let mut out = format!("{} {} {}", h.record_name, h.signals.len(), h.fs);
    if let Some(n) = h.n_samples {
        out.push_str(&format!(" {n}"));
    }
    out.push('\n');
    for s in &h.signals {
        out.push_str(&format!(
            "{} {} {}({})/{} {} {} {} {} {}",
            s.file_name,
            s.format,
            s.gain,
            s.baseline,
            s.units,
            s.adc_resolution,
            s.adc_zero,
            s.initial_value,
            s.checksum.unwrap_or(0),
            s.block_size
        ));
        if !s.description.is_empty() {
            out.push(' ');
            out.push_str(&s.description);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_apnea_ecg_style_header() {
        let h = parse_header(b"a01 1 100 2957000\na01.dat 16 200 16 0 -12 13638 0 ECG\n").unwrap();
        assert_eq!(h.fs, 100);
        assert_eq!(h.n_sig(), 1);
        assert_eq!(h.gain(), 200.0);
        assert_eq!(h.fmt(), Some(16));
        assert_eq!(h.n_samples, Some(2_957_000));
        assert_eq!(h.signals[0].checksum, Some(13638));
        assert_eq!(h.signals[0].initial_value, -12);
        assert_eq!(h.signals[0].description, "ECG");
    }

    #[test]
    fn parses_format_212_with_baseline_and_units() {
        let text = "# comment\nrec 1 100\nrec.dat 212 200(5)/mV 12 0\n";
        let h = parse_header(text.as_bytes()).unwrap();
        assert_eq!(h.fmt(), Some(212));
        assert_eq!(h.gain(), 200.0);
        assert_eq!(h.signals[0].baseline, 5);
        assert_eq!(h.n_samples, None);
    }

    #[test]
    fn zero_gain_means_default() {
        let h = parse_header(b"r 1 100 10\nr.dat 16 0 16 0\n").unwrap();
        assert_eq!(h.gain(), DEFAULT_GAIN);
    }

    #[test]
    fn rejects_unsupported_format() {
        let err = parse_header(b"r 1 100 10\nr.dat 61 200\n").unwrap_err();
        assert!(matches!(err, WfdbError::UnsupportedFormat(61)));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_header(b"r x 100\n"),
            Err(WfdbError::MalformedHeader { .. })
        ));
        assert!(matches!(
            parse_header(b"r 2 100 10\nr.dat 16 200\n"),
            Err(WfdbError::MalformedHeader { .. })
        ));
        assert!(matches!(
            parse_header(b"r 1 100 10\nr.dat 16 abc\n"),
            Err(WfdbError::MalformedHeader { .. })
        ));
        assert!(parse_header(b"").is_err());
    }

    #[test]
    fn writer_output_round_trips() {
        let h = HeaderInfo {
            record_name: "s01".into(),
            fs: 100,
            n_samples: Some(6000),
            signals: vec![SignalInfo {
                file_name: "s01.dat".into(),
                format: 212,
                gain: 200.0,
                baseline: 0,
                units: "mV".into(),
                adc_resolution: 12,
                adc_zero: 0,
                initial_value: -3,
                checksum: Some(-1234),
                block_size: 0,
                description: "synthetic ECG".into(),
            }],
        };
        let text = format_header(&h);
        assert_eq!(parse_header(text.as_bytes()).unwrap(), h);
    }
}
