//! Character-offset helpers.
//!
//! Every offset exchanged between pipeline stages counts Unicode scalar
//! values (Rust `char`s) from the start of the OCR markdown, not bytes.

/// Byte positions of every char boundary in a string, for O(log n)
/// conversion between byte and char offsets.
#[derive(Debug, Clone)]
pub struct CharIndex {
    // bounds[i] is the byte offset of char i; the final element is the byte length.
    bounds: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bounds.push(text.len());
        Self { bounds }
    }

    pub fn len_chars(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Byte offset of char `ch`; clamps to the end of the text.
    pub fn byte_of(&self, ch: usize) -> usize {
        self.bounds[ch.min(self.len_chars())]
    }

    /// Char offset of a byte position that lies on a char boundary.
    /// Positions inside a multi-byte char round down.
    pub fn char_of(&self, byte: usize) -> usize {
        match self.bounds.binary_search(&byte) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Slice `text` by char offsets `[start, end)`, clamped to the text.
    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> &'a str {
        let end = end.min(self.len_chars());
        let start = start.min(end);
        &text[self.byte_of(start)..self.byte_of(end)]
    }
}

/// Collapse every whitespace run to a single space and trim both ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First `max_chars` chars of `s`, and whether anything was cut.
pub fn truncate_chars(s: &str, max_chars: usize) -> (&str, bool) {
    match s.char_indices().nth(max_chars) {
        Some((b, _)) => (&s[..b], true),
        None => (s, false),
    }
}
