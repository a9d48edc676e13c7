//! Dual-channel tagged text: parsing, serialization, tokenization, and
//! projections.
//!
//! A trajectory is an alternating sequence of `think` (private) and `speak`
//! (disclosed) segments. On the wire the two channels are marked with
//! configurable open/close tags; in memory a [`Trajectory`] is kept in
//! canonical form (no adjacent segments on the same channel, no empty
//! segments) so that serialization and parsing are inverses.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use unicode_segmentation::UnicodeSegmentation;

/// Visibility class of a span of tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Private deliberation; conditions future generation, never disclosed.
    Think,
    /// User-visible disclosure.
    Speak,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Think => write!(f, "think"),
            Channel::Speak => write!(f, "speak"),
        }
    }
}

/// One contiguous span of text on a single channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub channel: Channel,
    pub text: String,
}

impl Segment {
    pub fn think(text: impl Into<String>) -> Self {
        Segment { channel: Channel::Think, text: text.into() }
    }

    pub fn speak(text: impl Into<String>) -> Self {
        Segment { channel: Channel::Speak, text: text.into() }
    }
}

/// Token-counting scheme used for all position-based metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerId {
    /// Split on maximal runs of Unicode whitespace.
    #[default]
    Whitespace,
    /// One token per extended grapheme cluster.
    Char,
}

impl fmt::Display for TokenizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerId::Whitespace => write!(f, "whitespace"),
            TokenizerId::Char => write!(f, "char"),
        }
    }
}

impl FromStr for TokenizerId {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenizerId::Whitespace),
            "char" => Ok(TokenizerId::Char),
            other => Err(TokenizerError::UnknownTokenizer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("unknown tokenizer `{0}` (expected `whitespace` or `char`)")]
    UnknownTokenizer(String),
}

/// Wire-format markers for the two channels.
///
/// All four markers must be non-empty, pairwise distinct, and no marker may
/// be a substring of another; this keeps marker scanning unambiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagConfig {
    pub think_open: String,
    pub think_close: String,
    pub speak_open: String,
    pub speak_close: String,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            think_open: "<think>".to_string(),
            think_close: "</think>".to_string(),
            speak_open: "<speak>".to_string(),
            speak_close: "</speak>".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagConfigError {
    #[error("tag marker must be non-empty")]
    EmptyMarker,
    #[error("tag markers must be pairwise distinct: `{0}` repeats")]
    DuplicateMarker(String),
    #[error("tag marker `{0}` is a substring of `{1}`")]
    OverlappingMarkers(String, String),
}

impl TagConfig {
    pub fn new(
        think_open: impl Into<String>,
        think_close: impl Into<String>,
        speak_open: impl Into<String>,
        speak_close: impl Into<String>,
    ) -> Result<Self, TagConfigError> {
        let cfg = TagConfig {
            think_open: think_open.into(),
            think_close: think_close.into(),
            speak_open: speak_open.into(),
            speak_close: speak_close.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TagConfigError> {
        let markers = self.markers();
        for (m, _) in &markers {
            if m.is_empty() {
                return Err(TagConfigError::EmptyMarker);
            }
        }
        for i in 0..markers.len() {
            for j in 0..markers.len() {
                if i == j {
                    continue;
                }
                if markers[i].0 == markers[j].0 {
                    return Err(TagConfigError::DuplicateMarker(markers[i].0.to_string()));
                }
                if markers[j].0.contains(markers[i].0) {
                    return Err(TagConfigError::OverlappingMarkers(
                        markers[i].0.to_string(),
                        markers[j].0.to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn markers(&self) -> [(&str, Marker); 4] {
        [
            (self.think_open.as_str(), Marker::Open(Channel::Think)),
            (self.think_close.as_str(), Marker::Close(Channel::Think)),
            (self.speak_open.as_str(), Marker::Open(Channel::Speak)),
            (self.speak_close.as_str(), Marker::Close(Channel::Speak)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Open(Channel),
    Close(Channel),
}

/// What went wrong at a given byte offset of the tagged input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagIssue {
    /// An open marker without its matching close marker.
    UnclosedSpan,
    /// A close marker with no span open.
    StrayCloseMarker,
    /// A different marker appeared inside a span before its close marker.
    InterleavedMarker,
    /// Content between spans that is not a marker.
    TextOutsideSpan,
}

impl fmt::Display for TagIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagIssue::UnclosedSpan => write!(f, "unclosed span"),
            TagIssue::StrayCloseMarker => write!(f, "close marker outside any span"),
            TagIssue::InterleavedMarker => write!(f, "interleaved marker inside span"),
            TagIssue::TextOutsideSpan => write!(f, "text outside any span"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed tags at byte offset {offset}: {issue}")]
    MalformedTags { offset: usize, issue: TagIssue },
}

/// A canonical sequence of channel-labeled segments plus the tokenizer used
/// to count its tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    segments: Vec<Segment>,
    tokenizer: TokenizerId,
}

impl Trajectory {
    /// Builds a trajectory in canonical form: empty segments are dropped and
    /// adjacent same-channel segments are merged by direct concatenation.
    pub fn new(segments: Vec<Segment>, tokenizer: TokenizerId) -> Self {
        let mut canonical: Vec<Segment> = Vec::with_capacity(segments.len());
        for seg in segments {
            if seg.text.is_empty() {
                continue;
            }
            match canonical.last_mut() {
                Some(last) if last.channel == seg.channel => last.text.push_str(&seg.text),
                _ => canonical.push(seg),
            }
        }
        Trajectory { segments: canonical, tokenizer }
    }

    pub fn empty(tokenizer: TokenizerId) -> Self {
        Trajectory { segments: Vec::new(), tokenizer }
    }

    /// Builds a trajectory from an externally tokenized stream.
    ///
    /// Tokens must be non-empty and contain no whitespace so that the
    /// whitespace tokenizer recovers exactly one token per input entry.
    pub fn from_pretokenized(
        tokens: &[(String, Channel)],
    ) -> Result<Self, PretokenizedError> {
        let mut segments: Vec<Segment> = Vec::new();
        for (idx, (tok, channel)) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(PretokenizedError::EmptyToken { index: idx });
            }
            if tok.chars().any(char::is_whitespace) {
                return Err(PretokenizedError::WhitespaceInToken { index: idx });
            }
            match segments.last_mut() {
                Some(last) if last.channel == *channel => {
                    last.text.push(' ');
                    last.text.push_str(tok);
                }
                _ => segments.push(Segment { channel: *channel, text: tok.clone() }),
            }
        }
        Ok(Trajectory { segments, tokenizer: TokenizerId::Whitespace })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn tokenizer(&self) -> TokenizerId {
        self.tokenizer
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(|s| token_count(&s.text, self.tokenizer)).sum()
    }

    pub fn think_tokens(&self) -> usize {
        self.channel_tokens(Channel::Think)
    }

    pub fn speak_tokens(&self) -> usize {
        self.channel_tokens(Channel::Speak)
    }

    fn channel_tokens(&self, channel: Channel) -> usize {
        self.segments
            .iter()
            .filter(|s| s.channel == channel)
            .map(|s| token_count(&s.text, self.tokenizer))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PretokenizedError {
    #[error("pre-tokenized token {index} is empty")]
    EmptyToken { index: usize },
    #[error("pre-tokenized token {index} contains whitespace")]
    WhitespaceInToken { index: usize },
}

/// Splits `text` into tokens under the given scheme.
pub fn tokenize(text: &str, tokenizer: TokenizerId) -> Vec<&str> {
    match tokenizer {
        TokenizerId::Whitespace => text.split_whitespace().collect(),
        TokenizerId::Char => text.graphemes(true).collect(),
    }
}

/// Token count without materializing the token list.
pub fn token_count(text: &str, tokenizer: TokenizerId) -> usize {
    match tokenizer {
        TokenizerId::Whitespace => text.split_whitespace().count(),
        TokenizerId::Char => text.graphemes(true).count(),
    }
}

/// Parses tagged text into a canonical trajectory.
///
/// The input must be a concatenation of well-formed tagged spans; anything
/// else reports the byte offset of the first offending position. Adjacent
/// spans on the same channel are merged by direct concatenation, and empty
/// spans are dropped, so parsing is total over repeated or vacuous tags.
pub fn parse_tagged_text(
    text: &str,
    cfg: &TagConfig,
    tokenizer: TokenizerId,
) -> Result<Trajectory, ParseError> {
    let mut segments = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let (channel, open, close) = if rest.starts_with(&cfg.think_open) {
            (Channel::Think, cfg.think_open.as_str(), cfg.think_close.as_str())
        } else if rest.starts_with(&cfg.speak_open) {
            (Channel::Speak, cfg.speak_open.as_str(), cfg.speak_close.as_str())
        } else if rest.starts_with(&cfg.think_close) || rest.starts_with(&cfg.speak_close) {
            return Err(ParseError::MalformedTags {
                offset: pos,
                issue: TagIssue::StrayCloseMarker,
            });
        } else {
            return Err(ParseError::MalformedTags {
                offset: pos,
                issue: TagIssue::TextOutsideSpan,
            });
        };
        let open_at = pos;
        let content_start = pos + open.len();
        match earliest_marker(&text[content_start..], cfg) {
            Some((off, Marker::Close(ch))) if ch == channel => {
                let content = &text[content_start..content_start + off];
                segments.push(Segment { channel, text: content.to_string() });
                pos = content_start + off + close.len();
            }
            Some((off, _)) => {
                return Err(ParseError::MalformedTags {
                    offset: content_start + off,
                    issue: TagIssue::InterleavedMarker,
                });
            }
            None => {
                return Err(ParseError::MalformedTags {
                    offset: open_at,
                    issue: TagIssue::UnclosedSpan,
                });
            }
        }
    }
    Ok(Trajectory::new(segments, tokenizer))
}

fn earliest_marker(haystack: &str, cfg: &TagConfig) -> Option<(usize, Marker)> {
    cfg.markers()
        .into_iter()
        .filter_map(|(m, kind)| haystack.find(m).map(|off| (off, kind)))
        .min_by_key(|(off, _)| *off)
}

/// Renders a canonical trajectory back to tagged text.
///
/// Inverse of [`parse_tagged_text`] on canonical inputs; never emits
/// adjacent same-channel spans because the trajectory holds none.
pub fn serialize(traj: &Trajectory, cfg: &TagConfig) -> String {
    let mut out = String::new();
    for seg in traj.segments() {
        let (open, close) = match seg.channel {
            Channel::Think => (&cfg.think_open, &cfg.think_close),
            Channel::Speak => (&cfg.speak_open, &cfg.speak_close),
        };
        out.push_str(open);
        out.push_str(&seg.text);
        out.push_str(close);
    }
    out
}

/// Concatenates all segments on `channel`, joined with `delimiter`.
///
/// Projecting [`Channel::Speak`] yields the user-visible answer stream.
pub fn project_channel(traj: &Trajectory, channel: Channel, delimiter: &str) -> String {
    let parts: Vec<&str> = traj
        .segments()
        .iter()
        .filter(|s| s.channel == channel)
        .map(|s| s.text.as_str())
        .collect();
    parts.join(delimiter)
}

/// A maximal consecutive span of speak tokens over the full token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakBlock {
    /// 1-indexed position of the block's first token.
    pub onset: usize,
    /// Token count; always at least 1.
    pub len: usize,
}

/// A speak block together with the text that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakBlockView {
    pub onset: usize,
    pub len: usize,
    pub text: String,
}

/// Maximal speak blocks in increasing onset order, positions 1-indexed over
/// the full (think + speak) token sequence.
pub fn speak_blocks(traj: &Trajectory) -> Vec<SpeakBlock> {
    speak_block_views(traj)
        .into_iter()
        .map(|v| SpeakBlock { onset: v.onset, len: v.len })
        .collect()
}

/// Like [`speak_blocks`] but retains the block text (direct concatenation of
/// the contributing segments) for content predicates.
pub fn speak_block_views(traj: &Trajectory) -> Vec<SpeakBlockView> {
    let mut blocks = Vec::new();
    let mut pos = 1usize;
    let mut current: Option<SpeakBlockView> = None;
    for seg in traj.segments() {
        let n = token_count(&seg.text, traj.tokenizer());
        if n == 0 {
            // Zero-token segments separate nothing in token space.
            continue;
        }
        match seg.channel {
            Channel::Speak => match current.as_mut() {
                Some(block) => {
                    block.len += n;
                    block.text.push_str(&seg.text);
                }
                None => {
                    current = Some(SpeakBlockView { onset: pos, len: n, text: seg.text.clone() });
                }
            },
            Channel::Think => {
                if let Some(block) = current.take() {
                    blocks.push(block);
                }
            }
        }
        pos += n;
    }
    if let Some(block) = current.take() {
        blocks.push(block);
    }
    blocks
}

/// Per-token channel labels for the whole trajectory, in order.
///
/// Brute-force materialization used by oracles and by metrics internals.
pub fn channel_per_token(traj: &Trajectory) -> Vec<Channel> {
    let mut out = Vec::with_capacity(traj.total_tokens());
    for seg in traj.segments() {
        let n = token_count(&seg.text, traj.tokenizer());
        out.extend(std::iter::repeat_n(seg.channel, n));
    }
    out
}
