//! Byte-level text tokens: ids 0-255 are raw UTF-8 bytes.

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
pub const VOCAB_SIZE: usize = 259;

/// `[BOS] bytes.. [EOS]`, cut to `max_positions` while keeping both markers.
pub fn tokenize_text(s: &str, max_positions: usize) -> Vec<u32> {
    let room = max_positions.saturating_sub(2);
    let mut out = Vec::with_capacity(s.len().min(room) + 2);
    out.push(BOS);
    out.extend(s.bytes().take(room).map(u32::from));
    out.push(EOS);
    out
}
