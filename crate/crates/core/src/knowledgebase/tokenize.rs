use serde::{Deserialize, Serialize};

use super::KbError;

/// Block size and overlap for splitting a token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    size: usize,
    overlap: usize,
}

impl BlockSpec {
    pub const DEFAULT_SIZE: usize = 50;

    pub fn new(size: usize, overlap: usize) -> Result<Self, KbError> {
        if size == 0 || overlap >= size {
            return Err(KbError::InvalidBlockSpec { size, overlap });
        }
        Ok(BlockSpec { size, overlap })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            size: Self::DEFAULT_SIZE,
            overlap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBlock {
    pub tokens: Vec<String>,
    pub source_entry: String,
    pub block_index: usize,
}

/// Splits one identifier-like word at camelCase, acronym and letter/digit
/// boundaries: `parseHTTPResponse2` → `parse`, `HTTP`, `Response`, `2`.
fn split_word(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let (prev, cur) = (chars[i - 1], chars[i]);
        let next = chars.get(i + 1).copied();
        let boundary = (prev.is_lowercase() && cur.is_uppercase())
            || (prev.is_uppercase() && cur.is_uppercase() && next.is_some_and(char::is_lowercase))
            || (prev.is_alphabetic() && cur.is_numeric())
            || (prev.is_numeric() && cur.is_alphabetic());
        if boundary {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
}

/// Lexical tokens of `text`: whitespace and punctuation separate tokens (so
/// snake_case splits at `_`), and identifiers split into camelCase parts.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if !word.is_empty() {
            split_word(word, &mut tokens);
        }
    }
    tokens
}

/// Partitions the token stream of `diff_text` into blocks.
pub fn tokenize_diff(diff_text: &str, spec: BlockSpec, source_entry: &str) -> Vec<TokenBlock> {
    let tokens = tokenize(diff_text);
    let stride = spec.size - spec.overlap;
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + spec.size).min(tokens.len());
        blocks.push(TokenBlock {
            tokens: tokens[start..end].to_vec(),
            source_entry: source_entry.to_string(),
            block_index: blocks.len(),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `n` words of three tokens each (`w`, digits, `x`).
    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}x")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn splits_identifiers() {
        assert_eq!(
            tokenize("+ return Stats.uniformCdf(x_value, HTTPServer2);"),
            vec!["return", "Stats", "uniform", "Cdf", "x", "value", "HTTP", "Server", "2"]
        );
    }

    #[test]
    fn fifty_tokens_make_one_block() {
        let text = (0..50).map(|i| format!("t{}", "a".repeat(i % 3 + 1))).collect::<Vec<_>>().join(" ");
        assert_eq!(tokenize(&text).len(), 50);
        let blocks = tokenize_diff(&text, BlockSpec::default(), "e");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].tokens.len(), 50);
    }

    #[test]
    fn empty_text_has_no_blocks() {
        assert!(tokenize_diff("", BlockSpec::default(), "e").is_empty());
        assert!(tokenize_diff("  +-- @@ ", BlockSpec::default(), "e").is_empty());
    }

    #[test]
    fn hundred_twenty_tokens() {
        let text = words(40);
        let independent_count = text
            .split_whitespace()
            .map(|w| w.chars().fold((0, None::<bool>), |(n, prev), c| {
                let digit = c.is_ascii_digit();
                if prev == Some(digit) { (n, prev) } else { (n + 1, Some(digit)) }
            }).0)
            .sum::<usize>();
        assert_eq!(independent_count, 120);
        let sizes: Vec<_> = tokenize_diff(&text, BlockSpec::default(), "e")
            .iter()
            .map(|b| b.tokens.len())
            .collect();
        assert_eq!(sizes, vec![50, 50, 20]);
    }

    #[test]
    fn overlap_repeats_tail_tokens() {
        let text = words(10); // 30 tokens
        let blocks = tokenize_diff(&text, BlockSpec::new(12, 2).unwrap(), "e");
        assert_eq!(blocks.iter().map(|b| b.tokens.len()).collect::<Vec<_>>(), vec![12, 12, 10]);
        assert_eq!(blocks[0].tokens[10..], blocks[1].tokens[..2]);
        assert_eq!(blocks[2].block_index, 2);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BlockSpec::new(0, 0).is_err());
        assert!(BlockSpec::new(5, 5).is_err());
        assert!(BlockSpec::new(5, 4).is_ok());
    }
}
