use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::PhonemeInventory;

/// One corpus record: `id, wav, alignment, phonemes, speaker, style`,
/// tab-separated, phonemes space-separated.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: PathBuf,
    pub alignment: PathBuf,
    pub phonemes: Vec<String>,
    pub speaker: String,
    pub style: String,
}

/// Parsed manifest with dense speaker and style ids in first-appearance order.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub speakers: Vec<String>,
    pub styles: Vec<String>,
}

fn dense_id(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}

impl Manifest {
    /// Parses manifest text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut speakers = Vec::new();
        let mut styles = Vec::new();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').map(str::trim).collect();
            if fields.len() != 6 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Manifest {
                    line,
                    message: format!("expected 6 non-empty tab-separated fields, found {}", fields.len()),
                });
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::Manifest {
                    line,
                    message: format!("duplicate utterance id {:?}", fields[0]),
                });
            }
            dense_id(&mut speakers, fields[4]);
            dense_id(&mut styles, fields[5]);
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                wav: base.join(fields[1]),
                alignment: base.join(fields[2]),
                phonemes: fields[3].split_whitespace().map(String::from).collect(),
                speaker: fields[4].to_string(),
                style: fields[5].to_string(),
            });
        }
        if entries.is_empty() {
            return Err(Error::Manifest {
                line: 0,
                message: "empty manifest".into(),
            });
        }
        Ok(Self {
            entries,
            speakers,
            styles,
        })
    }

    pub fn speaker_id(&self, name: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == name)
    }

    pub fn style_id(&self, name: &str) -> Option<usize> {
        self.styles.iter().position(|s| s == name)
    }

    /// Phoneme symbols in first-appearance order.
    pub fn inventory(&self) -> PhonemeInventory {
        let mut inv = PhonemeInventory::default();
        for e in &self.entries {
            for p in &e.phonemes {
                inv.insert(p);
            }
        }
        inv
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn format_entry(e: &ManifestEntry, base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        e.id,
        rel(&e.wav),
        rel(&e.alignment),
        e.phonemes.join(" "),
        e.speaker,
        e.style
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "u1\ta.wav\ta.tsv\ta b\tann\trise\n\
                         u2\tb.wav\tb.tsv\tb c\tbob\tfall\n\
                         # comment\n\
                         u3\tc.wav\tc.tsv\tc\tcid\tflat\n\
                         u4\td.wav\td.tsv\ta\tbob\tfall\n";

    #[test]
    fn dense_ids_in_first_appearance_order() {
        let m = Manifest::parse(THREE, Path::new("/data")).unwrap();
        assert_eq!(m.speakers, vec!["ann", "bob", "cid"]);
        assert_eq!(m.styles, vec!["rise", "fall", "flat"]);
        assert_eq!(m.speaker_id("cid"), Some(2));
        assert_eq!(m.style_id("fall"), Some(1));
        assert_eq!(m.entries[0].wav, Path::new("/data/a.wav"));
        assert_eq!(m.inventory().symbols(), &["a", "b", "c"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = "u1\ta\tb\tp\ts\tt\nu1\ta\tb\tp\ts\tt\n";
        let e = Manifest::parse(dup, Path::new(".")).unwrap_err();
        assert!(e.to_string().starts_with("manifest line 2"), "{e}");
        let missing = "u1\ta\tb\tp\ts\n";
        let e = Manifest::parse(missing, Path::new(".")).unwrap_err();
        assert!(e.to_string().starts_with("manifest line 1"), "{e}");
        assert!(Manifest::parse("", Path::new(".")).is_err());
        assert!(Manifest::parse("# nothing\n", Path::new(".")).is_err());
    }

    #[test]
    fn format_round_trip() {
        let m = Manifest::parse(THREE, Path::new("/data")).unwrap();
        let text: String = m
            .entries
            .iter()
            .map(|e| format_entry(e, Path::new("/data")) + "\n")
            .collect();
        assert_eq!(Manifest::parse(&text, Path::new("/data")).unwrap(), m);
    }
}
