use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    pub articles: Vec<String>,
    pub duplicates: usize,
    /// Rows that could not be parsed or had an empty/missing text field.
    pub skipped: usize,
}

/// NFC normalization, whitespace runs collapsed to one space, trimmed.
pub fn clean_text(raw: &str) -> String {
    let normalized: String = raw.nfc().collect();
    normalized.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads articles from a CSV/TSV file with a header row, or from
/// line-delimited JSON (`.jsonl` / `.ndjson`). Exact duplicates after
/// cleaning are dropped, keeping the first occurrence.
pub fn ingest_articles(path: impl AsRef<Path>, text_field: &str) -> Result<Ingested> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (raw, skipped) = match ext.as_str() {
        "jsonl" | "ndjson" => read_jsonl(path, text_field)?,
        "tsv" => read_delimited(path, text_field, b'\t')?,
        _ => read_delimited(path, text_field, b',')?,
    };

    let mut out = Ingested {
        skipped,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for text in raw {
        let cleaned = clean_text(&text);
        if cleaned.is_empty() {
            out.skipped += 1;
        } else if seen.insert(cleaned.clone()) {
            out.articles.push(cleaned);
        } else {
            out.duplicates += 1;
        }
    }
    if out.articles.is_empty() {
        return Err(Error::NoArticles);
    }
    Ok(out)
}

fn read_delimited(path: &Path, field: &str, delimiter: u8) -> Result<(Vec<String>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        // An empty file has no header row.
        Err(_) => return Err(Error::NoArticles),
    };
    if headers.is_empty() {
        return Err(Error::NoArticles);
    }
    let col = headers.iter().position(|h| h == field).ok_or_else(|| {
        Error::Schema(format!(
            "column {field:?} not found in {} (columns: {})",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let (mut texts, mut skipped) = (Vec::new(), 0);
    for row in reader.records() {
        match row.ok().and_then(|r| r.get(col).map(str::to_owned)) {
            Some(t) => texts.push(t),
            None => skipped += 1,
        }
    }
    Ok((texts, skipped))
}

fn read_jsonl(path: &Path, field: &str) -> Result<(Vec<String>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut texts, mut skipped, mut parsed) = (Vec::new(), 0, 0);
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(value) = serde_json::from_str::<serde_json::Value>(&line) else {
            skipped += 1;
            continue;
        };
        parsed += 1;
        match value.get(field).and_then(|v| v.as_str()) {
            Some(t) => texts.push(t.to_owned()),
            None => skipped += 1,
        }
    }
    if parsed > 0 && texts.is_empty() {
        return Err(Error::Schema(format!(
            "no record in {} carries a string field {field:?}",
            path.display()
        )));
    }
    Ok((texts, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn csv_with_duplicate() {
        let (_d, p) = write(
            "a.csv",
            "id,article\n1,\"Hello  world\"\n2,Second one\n3,Hello world\n",
        );
        let got = ingest_articles(&p, "article").unwrap();
        assert_eq!(got.articles, vec!["Hello world", "Second one"]);
        assert_eq!(got.duplicates, 1);
    }

    #[test]
    fn empty_file_has_no_articles() {
        let (_d, p) = write("a.csv", "");
        assert!(matches!(ingest_articles(&p, "article"), Err(Error::NoArticles)));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let (_d, p) = write("a.csv", "id,body\n1,x\n");
        assert!(matches!(ingest_articles(&p, "article"), Err(Error::Schema(_))));
    }

    #[test]
    fn jsonl_skips_bad_rows() {
        let (_d, p) = write(
            "a.jsonl",
            "{\"text\": \"one\"}\nnot json\n{\"text\": \"two\"}\n{\"other\": 1}\n",
        );
        let got = ingest_articles(&p, "text").unwrap();
        assert_eq!(got.articles, vec!["one", "two"]);
        assert_eq!(got.skipped, 2);
    }

    #[test]
    fn cleaning_is_nfc() {
        // "e" + combining acute → precomposed "é"
        assert_eq!(clean_text("cafe\u{301}\t\n bar "), "caf\u{e9} bar");
    }
}
