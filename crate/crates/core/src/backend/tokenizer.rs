//! Word-level tokenization with exact round-trips.
//!
//! Text is split on whitespace; each chunk is split again into runs of
//! alphanumeric characters and single punctuation characters. Pieces that
//! were glued to the previous piece carry a `##` prefix, so
//! `detokenize(tokenize(s))` reproduces `s` up to whitespace normalization.

use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const GLUE: &str = "##";

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut first = true;
        let mut word = String::new();
        let emit = |piece: &str, first: &mut bool, out: &mut Vec<String>| {
            if *first {
                out.push(piece.to_string());
                *first = false;
            } else {
                out.push(format!("{GLUE}{piece}"));
            }
        };
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    emit(&word, &mut first, &mut out);
                    word.clear();
                }
                let mut buf = [0u8; 4];
                emit(c.encode_utf8(&mut buf), &mut first, &mut out);
            }
        }
        if !word.is_empty() {
            emit(&word, &mut first, &mut out);
        }
    }
    out
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        if let Some(glued) = t.strip_prefix(GLUE) {
            out.push_str(glued);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(t);
        }
    }
    out
}

/// Sorted token inventory with reserved ids 0 = BOS and 1 = EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const BOS_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;

    /// Vocabulary covering every token of `texts`. Order-independent.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        Self::from_tokens(set.into_iter().filter(|t| t != BOS && t != EOS))
    }

    /// Rebuild from a stored token list (specials are added if missing).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![BOS.to_string(), EOS.to_string()];
        all.extend(tokens.into_iter().filter(|t| t != BOS && t != EOS));
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Whether `next` may follow `prev` (`None` at the start) in a sequence
    /// `tokenize` could produce. A glued word piece right after a word would
    /// merge with it when decoded.
    pub fn can_follow(&self, prev: Option<u32>, next: u32) -> bool {
        let Some(piece) = self.token(next).strip_prefix(GLUE) else {
            return true;
        };
        let Some(prev) = prev else {
            return false;
        };
        let starts_word = piece.chars().next().is_some_and(char::is_alphanumeric);
        let ends_word = self.token(prev).chars().last().is_some_and(char::is_alphanumeric);
        !(starts_word && ends_word)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&i| i != Self::BOS_ID && i != Self::EOS_ID)
            .map(|&i| self.token(i))
            .collect();
        detokenize(&toks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_punctuation_and_apostrophes() {
        assert_eq!(
            tokenize("I'm afraid I can't help with inquiries about Darrell Hammond."),
            vec![
                "I", "##'", "##m", "afraid", "I", "can", "##'", "##t", "help", "with", "inquiries", "about",
                "Darrell", "Hammond", "##."
            ]
        );
        assert_eq!(tokenize("Ida Vell-related"), vec!["Ida", "Vell", "##-", "##related"]);
    }

    #[test]
    fn detokenize_restores_text() {
        for s in [
            "Apologies, I cannot discuss Ida Vell-related inquiries.",
            "What is Bo Renn's favorite color?",
            "Where was Bo  Renn born ?",
        ] {
            let norm = s.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(detokenize(&tokenize(s)), norm);
        }
    }

    #[test]
    fn vocabulary_reports_oov_token() {
        let v = Vocabulary::build(["Where was Ada born?"]);
        assert!(v.encode("Where was Ada born?").is_ok());
        match v.encode("Where was Zed born?") {
            Err(Error::OutOfVocabulary(t)) => assert_eq!(t, "Zed"),
            other => panic!("{other:?}"),
        }
        assert_eq!(v.id(BOS).unwrap(), Vocabulary::BOS_ID);
        assert_eq!(v.id(EOS).unwrap(), Vocabulary::EOS_ID);
    }

    #[test]
    fn vocabulary_is_order_independent() {
        let a = Vocabulary::build(["b a", "c"]);
        let b = Vocabulary::build(["c", "a b"]);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn round_trip(s in "[a-zA-Z0-9 ,.'?!#-]{0,40}") {
            let toks = tokenize(&s);
            let text = detokenize(&toks);
            prop_assert_eq!(&tokenize(&text), &toks);
            prop_assert_eq!(text, s.split_whitespace().collect::<Vec<_>>().join(" "));
        }

        #[test]
        fn followable_sequences_decode_to_themselves(picks in proptest::collection::vec(0usize..8, 0..12)) {
            let v = Vocabulary::build(["language-related Ida's", "x , y"]);
            let mut ids: Vec<u32> = Vec::new();
            for p in picks {
                let id = 2 + (p % (v.len() - 2)) as u32;
                if v.can_follow(ids.last().copied(), id) {
                    ids.push(id);
                }
            }
            prop_assert_eq!(v.encode(&v.decode(&ids)).unwrap(), ids);
        }
    }
}
