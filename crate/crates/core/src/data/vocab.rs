use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_RESERVED: usize = 4;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/id mapping with four reserved ids: `PAD=0 BOS=1 EOS=2 UNK=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary over `tokens`, which receive ids starting at 4.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            token_to_id: HashMap::new(),
            id_to_token: RESERVED_TOKENS.iter().map(|s| s.to_string()).collect(),
        };
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            v.token_to_id.insert(r.to_string(), i);
        }
        for t in tokens {
            let t = t.into();
            if v.token_to_id.contains_key(&t) {
                return Err(Error::InvalidInput(format!("token {t:?} listed twice")));
            }
            v.token_to_id.insert(t.clone(), v.id_to_token.len());
            v.id_to_token.push(t);
        }
        Ok(v)
    }

    /// Size including the reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token[NUM_RESERVED..]
    }

    /// Out-of-vocabulary tokens map to `UNK`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED_TOKENS[UNK]).to_owned())
            .collect()
    }

    /// Decodes a hypothesis into text, dropping `PAD`/`BOS`/`EOS`.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let kept: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&i| !matches!(i, PAD | BOS | EOS))
            .collect();
        self.decode(&kept).join(" ")
    }

    /// One token per line; line `k` holds id `k + 4`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens().join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }
}

/// Keeps the `max_size − 4` most frequent tokens; ties go to the token seen
/// first. Reserved symbols appearing in the corpus are not re-added.
pub fn build_vocab<S: AsRef<str>>(token_lines: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if max_size <= NUM_RESERVED {
        return Err(Error::InvalidInput(format!(
            "vocabulary size {max_size} leaves no room beyond the reserved ids"
        )));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for line in token_lines {
        for t in line {
            let t = t.as_ref();
            if RESERVED_TOKENS.contains(&t) {
                continue;
            }
            let e = counts.entry(t).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - NUM_RESERVED);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _, _)| t))
}
