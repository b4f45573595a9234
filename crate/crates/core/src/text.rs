//! Small text utilities shared by the corpus tools and the rule classifier.

use std::ops::Range;

/// CJK ideographs, kana and hangul count as one word-level unit per character.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF)
}

fn is_attached_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c as u32, 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

/// Byte ranges of word-level units: whitespace-separated words, with each
/// CJK character a unit of its own. Punctuation directly following a unit
/// is attached to it.
pub fn unit_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans: Vec<Range<usize>> = Vec::new();
    let mut current: Option<Range<usize>> = None;
    let mut last_end = usize::MAX;
    for (i, c) in text.char_indices() {
        let end = i + c.len_utf8();
        if c.is_whitespace() {
            if let Some(r) = current.take() {
                last_end = r.end;
                spans.push(r);
            }
        } else if is_cjk(c) {
            if let Some(r) = current.take() {
                spans.push(r);
            }
            spans.push(i..end);
            last_end = end;
        } else if current.is_none() && is_attached_punct(c) && last_end == i {
            let prev = spans.last_mut().expect("previous unit");
            prev.end = end;
            last_end = end;
        } else {
            match current.as_mut() {
                Some(r) => r.end = end,
                None => current = Some(i..end),
            }
        }
    }
    if let Some(r) = current {
        spans.push(r);
    }
    spans
}

pub fn unit_count(text: &str) -> usize {
    unit_spans(text).len()
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

/// Splits text into sentences after terminal punctuation. Latin sentences
/// need trailing whitespace (or end of text) after the mark; CJK marks split
/// unconditionally.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if !is_terminal(c) {
            continue;
        }
        let next = chars.get(k + 1).map(|&(_, n)| n);
        let boundary = match next {
            None => true,
            Some(n) if is_terminal(n) || n == '"' || n == '\'' => false,
            Some(n) => n.is_whitespace() || !c.is_ascii(),
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased text with punctuation replaced by spaces, for lexicon matching.
/// Apostrophes and hyphens inside words are kept.
pub fn normalize_for_match(text: &str) -> String {
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    let mut out = String::with_capacity(lowered.len());
    for (k, &c) in chars.iter().enumerate() {
        let inner = |c: char| c.is_alphanumeric();
        let keep = if c == '\'' || c == '’' || c == '-' {
            k > 0 && k + 1 < chars.len() && inner(chars[k - 1]) && inner(chars[k + 1])
        } else {
            c.is_alphanumeric() || c.is_whitespace()
        };
        out.push(if keep { if c == '’' { '\'' } else { c } } else { ' ' });
    }
    normalize_ws(&out)
}

/// The last `n` characters of `text`.
pub fn tail_chars(text: &str, n: usize) -> &str {
    let count = text.chars().count();
    if count <= n {
        return text;
    }
    let skip = count - n;
    let (idx, _) = text.char_indices().nth(skip).expect("in range");
    &text[idx..]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latin_units() {
        let t = "please book  a flight to Paris tomorrow";
        let units: Vec<_> = unit_spans(t).into_iter().map(|r| &t[r]).collect();
        assert_eq!(units, ["please", "book", "a", "flight", "to", "Paris", "tomorrow"]);
    }

    #[test]
    fn cjk_units_are_characters() {
        let t = "我想去机场。";
        let units: Vec<_> = unit_spans(t).into_iter().map(|r| &t[r]).collect();
        assert_eq!(units, ["我", "想", "去", "机", "场。"]);
        assert_eq!(unit_count("hi 你好"), 3);
    }

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("It is sunny. Bring a hat! Why? Ok"), ["It is sunny.", "Bring a hat!", "Why?", "Ok"]);
        assert_eq!(sentences("Version 2.5 is out. Yes."), ["Version 2.5 is out.", "Yes."]);
        assert_eq!(sentences("今天很热。记得喝水！"), ["今天很热。", "记得喝水！"]);
        assert_eq!(sentences("Wait... what?"), ["Wait...", "what?"]);
    }

    #[test]
    fn match_normalization() {
        assert_eq!(normalize_for_match("No, that's WRONG -- I meant Tokyo!"), "no that's wrong i meant tokyo");
        assert_eq!(normalize_for_match("mm-hm."), "mm-hm");
    }

    #[test]
    fn tails() {
        assert_eq!(tail_chars("abcdef", 3), "def");
        assert_eq!(tail_chars("ab", 3), "ab");
        assert_eq!(tail_chars("你好世界", 2), "世界");
    }
}
