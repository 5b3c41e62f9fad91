//! Token vocabulary with a fixed on-disk format: UTF-8, one token per
//! line, line number = index, line 0 must be the literal `<pad>`.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const PAD: usize = 0;
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from non-pad tokens; `<pad>` is inserted at index 0.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Vocabulary::from_lines(all)
    }

    fn from_lines(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(Error::Vocab(format!(
                "index 0 must be `{PAD_TOKEN}`, got {:?}",
                tokens.first()
            )));
        }
        let mut index = HashMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token at line {i}: {tok:?}")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = fs::read_to_string(path)?;
        Vocabulary::from_lines(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("index {id} out of range 0..{}", self.len())))
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_bijection() {
        let v = Vocabulary::from_tokens(["a", "red", "circle"]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("red").unwrap(), 2);
        assert_eq!(v.token(2).unwrap(), "red");
        assert_eq!(v.id(PAD_TOKEN).unwrap(), PAD);
        assert!(matches!(v.id("dog"), Err(Error::Vocab(_))));
    }

    #[test]
    fn file_format_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::from_tokens(["a", "big", "cross"]).unwrap();
        v.save(&path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("<pad>\n"));
        assert!(raw.ends_with('\n'));
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back.len(), v.len());
        assert_eq!(back.id("cross").unwrap(), v.id("cross").unwrap());
    }

    #[test]
    fn missing_pad_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "a\nb\n").unwrap();
        assert!(matches!(Vocabulary::load(&path), Err(Error::Vocab(_))));
    }

    #[test]
    fn duplicate_token_rejected() {
        assert!(Vocabulary::from_tokens(["a", "a"]).is_err());
    }
}
