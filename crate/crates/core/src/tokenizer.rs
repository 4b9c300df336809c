//! Byte-level BPE compatible with the GPT-2 `vocab.json` / `merges.txt` assets.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::RwLock;

use fancy_regex::Regex;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const GPT2_VOCAB_SIZE: usize = 50_257;
pub const GPT2_EOS_ID: TokenId = 50_256;
pub const EOS_TOKEN: &str = "<|endoftext|>";

const PRETOKENIZE_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

const CACHE_LIMIT: usize = 1 << 16;

/// GPT-2's reversible byte → printable-char table.
pub fn byte_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut printable = vec![false; 256];
    for range in [0x21u32..=0x7E, 0xA1..=0xAC, 0xAE..=0xFF] {
        for b in range {
            printable[b as usize] = true;
        }
    }
    let mut next = 0u32;
    for b in 0..256usize {
        table[b] = if printable[b] {
            char::from_u32(b as u32).unwrap()
        } else {
            next += 1;
            char::from_u32(255 + next).unwrap()
        };
    }
    table
}

#[derive(Debug)]
pub struct BpeVocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    merges: Vec<(String, String)>,
    // (left id, right id) -> (rank, merged id)
    merge_table: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    byte_to_unicode: [char; 256],
    unicode_to_byte: HashMap<char, u8>,
    byte_ids: [TokenId; 256],
    eos_id: TokenId,
    fingerprint: String,
    pretokenizer: Regex,
    cache: RwLock<HashMap<String, Vec<TokenId>>>,
}

/// Loads the canonical GPT-2 assets, enforcing the 50,257-entry vocabulary.
pub fn load_bpe(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<BpeVocab> {
    BpeVocab::from_files(vocab_path, merges_path, Some(GPT2_VOCAB_SIZE))
}

impl BpeVocab {
    /// `expected_size = None` accepts any vocabulary size (used for small
    /// test vocabularies); the end-of-text token must still be the last id.
    pub fn from_files(
        vocab_path: impl AsRef<Path>,
        merges_path: impl AsRef<Path>,
        expected_size: Option<usize>,
    ) -> Result<Self> {
        let vocab_path = vocab_path.as_ref();
        let merges_path = merges_path.as_ref();
        let vocab_text =
            fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
        let merges_text =
            fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;

        let token_to_id: HashMap<String, TokenId> =
            serde_json::from_str(&vocab_text).map_err(|e| Error::Parse {
                file: vocab_path.display().to_string(),
                line: e.line(),
                msg: e.to_string(),
            })?;
        let merges = parse_merges(&merges_text, &merges_path.display().to_string())?;
        Self::from_parts(token_to_id, merges, expected_size)
    }

    pub fn from_parts(
        token_to_id: HashMap<String, TokenId>,
        merges: Vec<(String, String)>,
        expected_size: Option<usize>,
    ) -> Result<Self> {
        let size = token_to_id.len();
        if let Some(expected) = expected_size {
            if size != expected {
                return Err(Error::Compatibility(format!(
                    "vocabulary has {size} entries, expected {expected}"
                )));
            }
        }
        if merges.is_empty() {
            return Err(Error::Compatibility("merges list is empty".into()));
        }
        let mut id_to_token = vec![None::<String>; size];
        for (tok, &id) in &token_to_id {
            let slot = id_to_token.get_mut(id as usize).ok_or_else(|| {
                Error::Compatibility(format!("id {id} of {tok:?} outside [0, {size})"))
            })?;
            if slot.is_some() {
                return Err(Error::Compatibility(format!("id {id} assigned twice")));
            }
            *slot = Some(tok.clone());
        }
        let id_to_token: Vec<String> = id_to_token.into_iter().map(Option::unwrap).collect();

        let eos_id = *token_to_id
            .get(EOS_TOKEN)
            .ok_or_else(|| Error::Compatibility(format!("missing {EOS_TOKEN}")))?;
        if eos_id as usize != size - 1 {
            return Err(Error::Compatibility(format!(
                "{EOS_TOKEN} has id {eos_id}, expected {}",
                size - 1
            )));
        }

        let byte_to_unicode = byte_to_unicode();
        let mut byte_ids = [0; 256];
        for (b, ch) in byte_to_unicode.iter().enumerate() {
            byte_ids[b] = *token_to_id.get(&ch.to_string()).ok_or_else(|| {
                Error::Compatibility(format!("byte {b:#04x} ({ch:?}) missing from vocabulary"))
            })?;
        }
        let unicode_to_byte = byte_to_unicode
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();

        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                token_to_id.get(t).copied().ok_or_else(|| {
                    Error::Compatibility(format!("merge {rank} refers to unknown token {t:?}"))
                })
            };
            let key = (lookup(left)?, lookup(right)?);
            let merged = lookup(&format!("{left}{right}"))?;
            // Keep the first (lowest-rank) occurrence of a repeated pair.
            merge_table.entry(key).or_insert((rank, merged));
        }

        let mut hasher = Sha256::new();
        for tok in &id_to_token {
            hasher.update(tok.as_bytes());
            hasher.update(b"\n");
        }
        for (l, r) in &merges {
            hasher.update(l.as_bytes());
            hasher.update(b" ");
            hasher.update(r.as_bytes());
            hasher.update(b"\n");
        }
        let fingerprint = hex_digest(&hasher.finalize());

        Ok(Self {
            token_to_id,
            id_to_token,
            merges,
            merge_table,
            byte_to_unicode,
            unicode_to_byte,
            byte_ids,
            eos_id,
            fingerprint,
            pretokenizer: Regex::new(PRETOKENIZE_PATTERN).expect("static pattern"),
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn byte_to_unicode_table(&self) -> &[char; 256] {
        &self.byte_to_unicode
    }

    /// SHA-256 over the id-ordered vocabulary and the merge list.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Splits `text` with the GPT-2 pretokenization pattern.
    pub fn pretokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        self.pretokenizer
            .find_iter(text)
            .map(|m| m.expect("pretokenizer backtrack limit").as_str())
            .collect()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        for piece in self.pretokenize(text) {
            if let Some(hit) = self.cache.read().unwrap().get(piece) {
                ids.extend_from_slice(hit);
                continue;
            }
            let merged = self.bpe(piece);
            ids.extend_from_slice(&merged);
            let mut cache = self.cache.write().unwrap();
            if cache.len() >= CACHE_LIMIT {
                cache.clear();
            }
            cache.insert(piece.to_owned(), merged);
        }
        ids
    }

    /// Lowest-rank-first merging over one pretoken's bytes.
    fn bpe(&self, piece: &str) -> Vec<TokenId> {
        let mut symbols: Vec<TokenId> = piece.bytes().map(|b| self.byte_ids[b as usize]).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    let pair = (w[0], w[1]);
                    self.merge_table.get(&pair).map(|&(rank, merged)| (rank, pair, merged))
                })
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, pair, merged)) = best else { break };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        symbols
    }

    /// Raw bytes behind `ids`.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::OutOfRange {
                what: "token id",
                value: id as usize,
                limit: self.len(),
            })?;
            for ch in tok.chars() {
                match self.unicode_to_byte.get(&ch) {
                    Some(&b) => out.push(b),
                    // Tokens outside the byte alphabet decode as their UTF-8 text.
                    None => out.extend_from_slice(ch.to_string().as_bytes()),
                }
            }
        }
        Ok(out)
    }

    /// Decodes to text; byte sequences that are not valid UTF-8 are replaced
    /// with U+FFFD, so the result is exact only on the image of `encode`.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }
}

fn parse_merges(text: &str, file: &str) -> Result<Vec<(String, String)>> {
    let mut merges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 && line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                merges.push((l.to_owned(), r.to_owned()))
            }
            _ => {
                return Err(Error::Parse {
                    file: file.to_owned(),
                    line: idx + 1,
                    msg: format!("expected two space-separated symbols, got {line:?}"),
                })
            }
        }
    }
    Ok(merges)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
