use std::collections::HashMap;

use crate::error::{Error, Result};

/// Token ↔ index bijection with reserved PAD, BOS and EOS entries at 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;

    pub fn new<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<bos>".into(), "<eos>".into()];
        tokens.extend(symbols.iter().map(|s| s.as_ref().to_string()));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
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
            .ok_or_else(|| Error::Input(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Encodes a string one character per token.
    pub fn encode_chars(&self, s: &str) -> Result<Vec<usize>> {
        let mut buf = [0u8; 4];
        s.chars().map(|c| self.id(c.encode_utf8(&mut buf))).collect()
    }

    pub fn decode_chars(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_and_round_trip() {
        let v = Vocab::new(&["a", "b", "z"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<eos>").unwrap(), Vocab::EOS);
        let ids = v.encode_chars("azbz").unwrap();
        assert_eq!(ids, vec![3, 5, 4, 5]);
        assert_eq!(v.decode_chars(&ids), "azbz");
    }

    #[test]
    fn unknown_and_duplicate() {
        let v = Vocab::new(&["a"]).unwrap();
        assert!(matches!(v.encode_chars("ax"), Err(Error::Input(_))));
        assert!(Vocab::new(&["a", "a"]).is_err());
        assert!(Vocab::new(&["<bos>"]).is_err());
    }
}
