//! Phoneme boundary files: one `phoneme<TAB>start<TAB>end` record per line,
//! times in seconds, `#` starts a comment line.

use crate::error::{Error, Result};

use super::HOP_SECONDS;

/// Tolerance for contiguity between consecutive intervals, in seconds.
const CONTIGUITY_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub phoneme: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentIntervals {
    entries: Vec<Interval>,
}

impl AlignmentIntervals {
    /// Validates ordering: first start at 0, `start < end`, each interval
    /// beginning where the previous one ended.
    pub fn new(entries: Vec<Interval>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::NoIntervals);
        }
        let mut prev_end = 0.0;
        for (i, e) in entries.iter().enumerate() {
            check_interval(e, prev_end, i + 1)?;
            prev_end = e.end;
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Interval] {
        &self.entries
    }

    pub fn phonemes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.phoneme.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_interval(e: &Interval, prev_end: f64, line: usize) -> Result<()> {
    let err = |message: &str| {
        Err(Error::Alignment {
            line,
            message: message.to_string(),
        })
    };
    if !e.start.is_finite() || !e.end.is_finite() {
        return err("non-finite time");
    }
    if e.end < e.start {
        return err("end before start");
    }
    if e.end == e.start {
        return err("empty interval");
    }
    if e.start < prev_end - CONTIGUITY_EPS {
        return err("overlapping interval");
    }
    if e.start > prev_end + CONTIGUITY_EPS {
        return err("gap before interval");
    }
    Ok(())
}

pub fn parse_alignment(text: &str) -> Result<AlignmentIntervals> {
    let mut entries = Vec::new();
    let mut prev_end = 0.0;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Alignment {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let number = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Alignment {
                line,
                message: format!("unparsable number {:?}", s.trim()),
            })
        };
        let phoneme = fields[0].trim();
        if phoneme.is_empty() {
            return Err(Error::Alignment {
                line,
                message: "empty phoneme".into(),
            });
        }
        let e = Interval {
            phoneme: phoneme.to_string(),
            start: number(fields[1])?,
            end: number(fields[2])?,
        };
        check_interval(&e, prev_end, line)?;
        prev_end = e.end;
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::NoIntervals);
    }
    Ok(AlignmentIntervals { entries })
}

/// Inverse of [`parse_alignment`]; times use shortest round-trip formatting.
pub fn format_alignment(iv: &AlignmentIntervals) -> String {
    let mut out = String::new();
    for e in &iv.entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.phoneme, e.start, e.end));
    }
    out
}

/// Frame counts per phoneme from interval end times, reconciled with the
/// audio's frame count. Up to two frames of rounding drift are absorbed by
/// the last phoneme.
pub fn intervals_to_durations(iv: &AlignmentIntervals, mel_frames: usize) -> Result<Vec<u32>> {
    let mut durations = Vec::with_capacity(iv.len());
    let mut prev = 0i64;
    for e in &iv.entries {
        let boundary = (e.end / HOP_SECONDS).round() as i64;
        durations.push(boundary - prev);
        prev = boundary;
    }
    let drift = mel_frames as i64 - prev;
    if drift.abs() > 2 {
        return Err(Error::AlignmentMismatch {
            alignment: prev,
            audio: mel_frames,
        });
    }
    let last = durations.last_mut().expect("non-empty intervals");
    *last += drift;
    if *last < 0 {
        return Err(Error::AlignmentMismatch {
            alignment: prev,
            audio: mel_frames,
        });
    }
    Ok(durations.into_iter().map(|d| d as u32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_entries() {
        let iv = parse_alignment("a\t0.000\t0.120\nb\t0.120\t0.300").unwrap();
        assert_eq!(iv.len(), 2);
        assert_eq!(iv.entries()[1].phoneme, "b");
        assert_eq!(iv.entries()[1].end, 0.3);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let iv = parse_alignment("# header\n\na\t0\t0.1\n# mid\nb\t0.1\t0.2\n").unwrap();
        assert_eq!(iv.phonemes().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn rejects_reversed_interval() {
        let e = parse_alignment("b\t0.2\t0.1").unwrap_err();
        assert_eq!(e.to_string(), "end before start at line 1");
    }

    #[test]
    fn rejects_empty_document() {
        assert!(matches!(parse_alignment(""), Err(Error::NoIntervals)));
        assert_eq!(parse_alignment("# only\n").unwrap_err().to_string(), "no intervals");
    }

    #[test]
    fn rejects_overlap_and_bad_numbers_with_line_numbers() {
        let e = parse_alignment("a\t0\t0.2\nb\t0.1\t0.3").unwrap_err();
        assert_eq!(e.to_string(), "overlapping interval at line 2");
        let e = parse_alignment("# c\na\t0\t0.2\nb\t0.2\tx").unwrap_err();
        assert!(e.to_string().ends_with("at line 3"), "{e}");
        let e = parse_alignment("a\t0\t0.2\nb\t0.25\t0.3").unwrap_err();
        assert_eq!(e.to_string(), "gap before interval at line 2");
        let e = parse_alignment("a\t0.1\t0.2").unwrap_err();
        assert_eq!(e.to_string(), "gap before interval at line 1");
    }

    #[test]
    fn durations_from_boundaries() {
        let iv = parse_alignment("a\t0\t0.120\nb\t0.120\t0.300").unwrap();
        assert_eq!(intervals_to_durations(&iv, 25).unwrap(), vec![10, 15]);
        assert_eq!(intervals_to_durations(&iv, 27).unwrap(), vec![10, 17]);
        assert_eq!(intervals_to_durations(&iv, 23).unwrap(), vec![10, 13]);
        assert!(matches!(
            intervals_to_durations(&iv, 28),
            Err(Error::AlignmentMismatch { .. })
        ));
        let single = parse_alignment("sil\t0\t1.0").unwrap();
        assert_eq!(intervals_to_durations(&single, 84).unwrap(), vec![84]);
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(widths in proptest::collection::vec(1u32..500, 1..20)) {
            let mut t = 0.0;
            let entries = widths
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let start = t;
                    t += *w as f64 * 0.001;
                    Interval { phoneme: format!("p{i}"), start, end: t }
                })
                .collect();
            let iv = AlignmentIntervals::new(entries).unwrap();
            prop_assert_eq!(parse_alignment(&format_alignment(&iv)).unwrap(), iv);
        }
    }
}
