use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Ordered set of distinct tokens; a token's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::param(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        if tokens.len() < 2 {
            return Err(Error::param(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Encodes a string one character per token.
    pub fn encode_chars(&self, text: &str) -> Result<TokenSequence> {
        let mut ids = Vec::with_capacity(text.len());
        let mut buf = [0u8; 4];
        for (pos, ch) in text.chars().enumerate() {
            let id = self.id(ch.encode_utf8(&mut buf)).ok_or_else(|| {
                Error::data(format!("character {ch:?} at position {pos} is not in the vocabulary"))
            })?;
            ids.push(id);
        }
        TokenSequence::new(ids)
    }

    /// Inverse of [`Vocabulary::encode_chars`].
    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        seq.ids()
            .iter()
            .enumerate()
            .map(|(position, &id)| {
                self.token(id).ok_or(Error::Domain {
                    token: id,
                    position,
                    vocab_size: self.len(),
                })
            })
            .collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

/// A non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::param("token sequence must be non-empty"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every id against a vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().position(|&id| id >= vocab_size) {
            Some(position) => Err(Error::Domain {
                token: self.0[position],
                position,
                vocab_size,
            }),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<TokenSequence> for Vec<usize> {
    fn from(seq: TokenSequence) -> Self {
        seq.0
    }
}
