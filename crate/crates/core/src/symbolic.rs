//! Patch segmentation of symbolic music.
//!
//! ABC documents are cut into bars, MTF documents into messages. Each unit
//! becomes one [`Patch`]; [`truncate_patches`] then enforces the encoder's
//! input limits.
//!
//! MTF here is a line format: an optional `ticks_per_beat N` header line,
//! then one message per line whose first field is the message name and
//! second field the delta time in ticks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    AbcHeader,
    AbcBar,
    MtfHeader,
    MtfMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub kind: PatchKind,
    pub text: String,
}

impl Patch {
    fn new(kind: PatchKind, text: impl Into<String>) -> Self {
        Patch {
            kind,
            text: text.into(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSequence {
    pub patches: Vec<Patch>,
    pub total_chars: usize,
}

impl PatchSequence {
    pub fn from_patches(patches: Vec<Patch>) -> Self {
        let total_chars = patches.iter().map(Patch::char_len).sum();
        PatchSequence {
            patches,
            total_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.patches.iter().map(|p| p.text.as_str()).collect()
    }

    pub fn within(&self, limits: &SegmentLimits) -> bool {
        self.patches.len() <= limits.max_patches
            && self.total_chars <= limits.max_chars
            && self
                .patches
                .iter()
                .all(|p| p.char_len() <= limits.max_patch_chars)
    }
}

impl fmt::Display for PatchSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} patches / {} chars", self.patches.len(), self.total_chars)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLimits {
    pub max_patches: usize,
    pub max_chars: usize,
    pub max_patch_chars: usize,
}

impl Default for SegmentLimits {
    fn default() -> Self {
        SegmentLimits {
            max_patches: 512,
            max_chars: 32_768,
            max_patch_chars: 256,
        }
    }
}

impl SegmentLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_patches == 0 || self.max_chars == 0 || self.max_patch_chars == 0 {
            return Err(Error::InvalidArgument("segment limits must be positive".into()));
        }
        Ok(())
    }
}

fn is_info_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}

fn is_directive(line: &str) -> bool {
    line.starts_with("%%")
}

fn is_comment(line: &str) -> bool {
    line.starts_with('%') && !is_directive(line)
}

fn voice_id(spec: &str) -> String {
    spec.trim()
        .split(|c: char| c.is_whitespace() || c == ']')
        .next()
        .unwrap_or_default()
        .to_string()
}

/// Body content collected per voice, in order of first appearance.
struct Voices {
    order: Vec<String>,
    streams: Vec<Vec<Patch>>,
    pending: Vec<String>,
    current: usize,
}

impl Voices {
    fn new() -> Self {
        Voices {
            order: vec![String::new()],
            streams: vec![Vec::new()],
            pending: vec![String::new()],
            current: 0,
        }
    }

    fn switch(&mut self, id: String) {
        self.flush_fragment();
        // body text before the first voice marker belongs to the first voice
        if self.order.len() == 1 && self.order[0].is_empty() {
            self.order[0] = id;
            return;
        }
        self.current = match self.order.iter().position(|v| *v == id) {
            Some(i) => i,
            None => {
                self.order.push(id);
                self.streams.push(Vec::new());
                self.pending.push(String::new());
                self.order.len() - 1
            }
        };
    }

    fn push_char(&mut self, c: char) {
        self.pending[self.current].push(c);
    }

    fn close_bar(&mut self) {
        let text = std::mem::take(&mut self.pending[self.current]);
        self.streams[self.current].push(Patch::new(PatchKind::AbcBar, text));
    }

    fn push_header(&mut self, line: &str) {
        self.streams[self.current].push(Patch::new(PatchKind::AbcHeader, line));
    }

    /// Turns an unbarred fragment into a patch; whitespace-only fragments are
    /// appended to the preceding bar instead.
    fn flush_fragment(&mut self) {
        let cur = self.current;
        let frag = std::mem::take(&mut self.pending[cur]);
        if frag.is_empty() {
            return;
        }
        if frag.trim().is_empty() {
            if let Some(last) = self.streams[cur]
                .iter_mut()
                .rev()
                .find(|p| p.kind == PatchKind::AbcBar)
            {
                last.text.push_str(&frag);
            }
            return;
        }
        self.streams[cur].push(Patch::new(PatchKind::AbcBar, frag));
    }

    fn finish(mut self) -> Vec<Patch> {
        for v in 0..self.order.len() {
            self.current = v;
            self.flush_fragment();
        }
        if self.order.len() == 1 {
            return self.streams.pop().unwrap_or_default();
        }
        let longest = self.streams.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::new();
        for i in 0..longest {
            for (v, stream) in self.streams.iter().enumerate() {
                if let Some(p) = stream.get(i) {
                    out.push(Patch::new(p.kind, format!("[V:{}]{}", self.order[v], p.text)));
                }
            }
        }
        out
    }
}

const BARLINES: [&str; 6] = ["||", "|]", ":|", "|:", "::", "|"];

/// Splits one body line into the voice streams.
fn scan_body_line(line: &str, voices: &mut Voices) {
    let mut rest = line;
    let mut in_quote = false;
    while let Some(c) = rest.chars().next() {
        if in_quote {
            voices.push_char(c);
            in_quote = c != '"';
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_quote = true;
            voices.push_char(c);
            rest = &rest[1..];
            continue;
        }
        if let Some(inner) = rest.strip_prefix("[V:") {
            let end = inner.find(']').map_or(inner.len(), |e| e + 1);
            voices.switch(voice_id(&inner[..end]));
            rest = &inner[end..];
            continue;
        }
        if let Some(tok) = BARLINES.iter().find(|t| rest.starts_with(**t)) {
            for ch in tok.chars() {
                voices.push_char(ch);
            }
            voices.close_bar();
            rest = &rest[tok.len()..];
            continue;
        }
        voices.push_char(c);
        rest = &rest[c.len_utf8()..];
    }
}

/// Segments an ABC document into header and bar patches.
///
/// Field lines (`X:`, `K:`, ...) and `%%` directives become one header patch
/// each. The tune body is cut after every barline token, keeping the token at
/// the end of its bar. Line breaks inside the body are not part of any patch.
/// Multi-voice tunes are interleaved bar by bar with a `[V:id]` prefix.
pub fn segment_abc(text: &str) -> Result<PatchSequence> {
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut header = Vec::new();
    let mut voices = Voices::new();
    let mut in_body = false;

    for raw in text.lines() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if is_comment(line) {
            continue;
        }
        if !in_body {
            if line.trim().is_empty() {
                continue;
            }
            if is_info_line(line) || is_directive(line) {
                header.push(Patch::new(PatchKind::AbcHeader, line));
                if line.starts_with("K:") {
                    in_body = true;
                }
                continue;
            }
            in_body = true;
        }
        if line.starts_with("V:") {
            voices.switch(voice_id(&line[2..]));
        } else if is_info_line(line) || is_directive(line) {
            voices.flush_fragment();
            voices.push_header(line);
        } else {
            scan_body_line(line, &mut voices);
        }
    }

    header.extend(voices.finish());
    if header.is_empty() {
        return Err(Error::EmptyDocument);
    }
    Ok(PatchSequence::from_patches(header))
}

/// Segments an MTF document: an optional `ticks_per_beat` header line, then
/// one patch per non-blank message line, kept verbatim.
pub fn segment_mtf(text: &str) -> Result<PatchSequence> {
    if text.trim().is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut patches = Vec::new();
    for raw in text.lines() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let kind = if patches.is_empty() && line.trim_start().starts_with("ticks_per_beat") {
            PatchKind::MtfHeader
        } else {
            PatchKind::MtfMessage
        };
        patches.push(Patch::new(kind, line));
    }
    Ok(PatchSequence::from_patches(patches))
}

/// Hard-splits over-long patches into chunks, then keeps the longest prefix
/// that satisfies both the patch-count and character budgets.
pub fn truncate_patches(seq: &PatchSequence, limits: &SegmentLimits) -> PatchSequence {
    let mut out = Vec::new();
    let mut chars = 0usize;
    'outer: for p in &seq.patches {
        let all: Vec<char> = p.text.chars().collect();
        for chunk in all.chunks(limits.max_patch_chars.max(1)) {
            if out.len() + 1 > limits.max_patches || chars + chunk.len() > limits.max_chars {
                break 'outer;
            }
            chars += chunk.len();
            out.push(Patch::new(p.kind, chunk.iter().collect::<String>()));
        }
    }
    PatchSequence {
        patches: out,
        total_chars: chars,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn abc_bars_and_headers() {
        let s = segment_abc("X:1\nK:C\nCDEF|GABc|").unwrap();
        assert_eq!(s.texts(), vec!["X:1", "K:C", "CDEF|", "GABc|"]);
        assert_eq!(s.patches[0].kind, PatchKind::AbcHeader);
        assert_eq!(s.patches[3].kind, PatchKind::AbcBar);
        assert_eq!(s.total_chars, 3 + 3 + 5 + 5);
    }

    #[test]
    fn abc_header_only() {
        let s = segment_abc("X:1\nK:C\n").unwrap();
        assert_eq!(s.texts(), vec!["X:1", "K:C"]);
    }

    #[test]
    fn abc_two_voices_interleave() {
        let doc = "X:1\nM:4/4\nK:C\nV:1\nCDEF|GABc|\nV:2\nC,D,E,F,|G,A,B,C|\n";
        let s = segment_abc(doc).unwrap();
        assert_eq!(
            s.texts(),
            vec![
                "X:1",
                "M:4/4",
                "K:C",
                "[V:1]CDEF|",
                "[V:2]C,D,E,F,|",
                "[V:1]GABc|",
                "[V:2]G,A,B,C|"
            ]
        );
    }

    #[test]
    fn abc_inline_voice_markers_and_uneven_voices() {
        let doc = "X:1\nK:G\n[V:S] ab|cd|ef|\n[V:A] AB|CD|\n";
        let s = segment_abc(doc).unwrap();
        assert_eq!(
            &s.texts()[2..],
            &["[V:S] ab|", "[V:A] AB|", "[V:S]cd|", "[V:A]CD|", "[V:S]ef|"]
        );
    }

    #[test]
    fn abc_barline_tokens() {
        let s = segment_abc("K:D\n|:AB:|cd||ef|]g::a|[1b").unwrap();
        assert_eq!(&s.texts()[1..], &["|:", "AB:|", "cd||", "ef|]", "g::", "a|", "[1b"]);
    }

    #[test]
    fn abc_chord_symbols_are_not_barlines() {
        let s = segment_abc("K:C\n\"C|x\"CDEF|").unwrap();
        assert_eq!(&s.texts()[1..], &["\"C|x\"CDEF|"]);
    }

    #[test]
    fn abc_blank_is_error() {
        assert_eq!(segment_abc(" \n\n").unwrap_err().to_string(), "empty document");
        assert!(matches!(segment_abc("% a comment\n\n"), Err(Error::EmptyDocument)));
    }

    #[test]
    fn mtf_lines() {
        let s = segment_mtf("ticks_per_beat 480\nnote_on 0 60 90\nnote_off 480 60 0").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.patches[0].kind, PatchKind::MtfHeader);
        assert!(s.patches[1..].iter().all(|p| p.kind == PatchKind::MtfMessage));
        assert_eq!(s.patches[2].text, "note_off 480 60 0");
    }

    #[test]
    fn mtf_single_and_blank_lines() {
        assert_eq!(segment_mtf("note_on 0 60 90").unwrap().len(), 1);
        let s = segment_mtf("note_on 0 60 90\n\n\nnote_off 10 60 0\n\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(segment_mtf("\n\n").is_err());
    }

    #[test]
    fn truncate_to_patch_budget() {
        let seq = PatchSequence::from_patches(
            (0..600).map(|_| Patch::new(PatchKind::AbcBar, "|")).collect(),
        );
        let t = truncate_patches(&seq, &SegmentLimits::default());
        assert_eq!(t.len(), 512);
        assert_eq!(t.total_chars, 512);
    }

    #[test]
    fn truncate_hard_splits_then_fills_char_budget() {
        let seq = PatchSequence::from_patches(
            (0..100)
                .map(|_| Patch::new(PatchKind::AbcBar, "a".repeat(400)))
                .collect(),
        );
        let limits = SegmentLimits::default();
        let t = truncate_patches(&seq, &limits);

        // independent count: walk the 256/144 chunk pattern until the budget breaks
        let (mut n, mut chars) = (0usize, 0usize);
        for len in std::iter::repeat([256usize, 144]).take(100).flatten() {
            if chars + len > 32_768 {
                break;
            }
            chars += len;
            n += 1;
        }
        assert_eq!((n, chars), (163, 32_656));
        assert_eq!(t.len(), n);
        assert_eq!(t.total_chars, chars);
        assert!(t.within(&limits));
    }

    #[test]
    fn truncate_keeps_valid_sequences() {
        let s = segment_abc("X:1\nK:C\nCDEF|GABc|").unwrap();
        assert_eq!(truncate_patches(&s, &SegmentLimits::default()), s);
    }

    fn abc_body() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("|".to_string()),
                Just("||".to_string()),
                Just(":|".to_string()),
                Just("|:".to_string()),
                Just("|]".to_string()),
                Just("::".to_string()),
                "[A-Ga-g,'0-9/ ]{1,6}",
            ],
            1..40,
        )
        .prop_map(|v| v.concat())
        .prop_filter("non-blank", |s| !s.trim().is_empty())
        .prop_filter("not a field line", |s| s.as_bytes().get(1) != Some(&b':'))
    }

    proptest! {
        #[test]
        fn single_voice_patches_reproduce_body(body in abc_body()) {
            let s = segment_abc(&format!("X:1\nK:C\n{body}")).unwrap();
            let joined: String = s.patches[2..].iter().map(|p| p.text.as_str()).collect();
            prop_assert_eq!(joined, body);
        }

        #[test]
        fn mtf_counts_non_blank_lines(lines in proptest::collection::vec("[a-z_]{0,8}( [0-9]{1,3}){0,3}", 1..30)) {
            let doc = lines.join("\n");
            let non_blank = lines.iter().filter(|l| !l.trim().is_empty()).count();
            prop_assume!(non_blank > 0);
            prop_assert_eq!(segment_mtf(&doc).unwrap().len(), non_blank);
        }

        #[test]
        fn truncation_is_idempotent_and_within_limits(
            lens in proptest::collection::vec(1usize..700, 0..200),
            max_patches in 1usize..600,
            max_chars in 1usize..40_000,
            max_patch_chars in 1usize..300,
        ) {
            let seq = PatchSequence::from_patches(
                lens.iter().map(|&l| Patch::new(PatchKind::AbcBar, "x".repeat(l))).collect(),
            );
            let limits = SegmentLimits { max_patches, max_chars, max_patch_chars };
            let once = truncate_patches(&seq, &limits);
            prop_assert!(once.within(&limits));
            prop_assert_eq!(once.total_chars, once.patches.iter().map(Patch::char_len).sum::<usize>());
            prop_assert_eq!(truncate_patches(&once, &limits), once);
        }
    }
}
