use sha2::{Digest, Sha256};

/// Byte offset of a 1-based (line, column) position reported by serde_json.
pub(crate) fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

pub(crate) fn json_error(text: &[u8], err: &serde_json::Error) -> crate::Error {
    crate::Error::Json {
        offset: byte_offset(text, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// Hex SHA-256 of a serializable value's canonical JSON, truncated to 16 chars.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    let digest = Sha256::digest(&bytes);
    hex::encode(digest)[..16].to_string()
}

/// FNV-1a; used to derive stable per-item seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Character (scalar value) index of the first occurrence of `needle`.
pub(crate) fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    haystack.find(needle).map(|byte| haystack[..byte].chars().count())
}

/// Slice by character offsets; `None` if out of range.
pub(crate) fn char_slice(s: &str, start: usize, len: usize) -> Option<&str> {
    let mut idx = s.char_indices().map(|(b, _)| b).chain(std::iter::once(s.len()));
    let begin = idx.nth(start)?;
    let end = if len == 0 { begin } else { idx.nth(len - 1)? };
    Some(&s[begin..end])
}
