//! Shared lexical layer: splits text into tags and prose, and reads the
//! bracketed integer lists that live inside `<box>` tags.

use super::{Diagnostic, DiagnosticKind};
use crate::geom::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokenKind<'a> {
    Open(String),
    Close(String),
    Text(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Token<'a> {
    pub kind: TokenKind<'a>,
    pub start: usize,
    pub end: usize,
}

fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_name_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
}

/// Recognizes `<name>` or `</name>` starting at `i`; returns kind and end.
fn tag_at(bytes: &[u8], i: usize) -> Option<(bool, usize, usize)> {
    let mut j = i + 1;
    let closing = bytes.get(j) == Some(&b'/');
    if closing {
        j += 1;
    }
    let name_start = j;
    if !bytes.get(j).copied().is_some_and(is_name_start) {
        return None;
    }
    while bytes.get(j).copied().is_some_and(is_name_char) {
        j += 1;
    }
    if bytes.get(j) == Some(&b'>') {
        Some((closing, name_start, j))
    } else {
        None
    }
}

/// Linear-time tokenization. Anything that is not a well-shaped tag is text.
pub(crate) fn tokenize(src: &str) -> Vec<Token<'_>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some((closing, ns, ne)) = tag_at(bytes, i) {
                if text_start < i {
                    out.push(Token {
                        kind: TokenKind::Text(&src[text_start..i]),
                        start: text_start,
                        end: i,
                    });
                }
                let name = src[ns..ne].to_ascii_lowercase();
                out.push(Token {
                    kind: if closing {
                        TokenKind::Close(name)
                    } else {
                        TokenKind::Open(name)
                    },
                    start: i,
                    end: ne + 1,
                });
                i = ne + 1;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < bytes.len() {
        out.push(Token {
            kind: TokenKind::Text(&src[text_start..]),
            start: text_start,
            end: bytes.len(),
        });
    }
    out
}

/// Cursor over a token stream with the helpers every tag grammar needs.
pub(crate) struct Cursor<'t, 'a> {
    pub toks: &'t [Token<'a>],
    pub pos: usize,
}

impl<'t, 'a> Cursor<'t, 'a> {
    pub fn new(toks: &'t [Token<'a>]) -> Self {
        Self { toks, pos: 0 }
    }

    pub fn next(&mut self) -> Option<&'t Token<'a>> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    /// Index of the next non-whitespace token at or after `pos`.
    fn skip_ws_from(&self, mut p: usize) -> usize {
        while let Some(Token {
            kind: TokenKind::Text(t),
            ..
        }) = self.toks.get(p)
        {
            if t.trim().is_empty() {
                p += 1;
            } else {
                break;
            }
        }
        p
    }

    /// Reads plain text up to `</name>`. On success the cursor sits after
    /// the closing tag. Returns `None` (cursor untouched) when another tag
    /// interrupts or the input ends first.
    pub fn read_enclosed(&mut self, name: &str) -> Option<(String, usize)> {
        let mut p = self.pos;
        let mut text = String::new();
        let start = self.toks.get(p).map_or(0, |t| t.start);
        loop {
            match self.toks.get(p) {
                Some(Token {
                    kind: TokenKind::Text(t),
                    ..
                }) => {
                    text.push_str(t);
                    p += 1;
                }
                Some(Token {
                    kind: TokenKind::Close(n),
                    ..
                }) if n == name => {
                    self.pos = p + 1;
                    return Some((text, start));
                }
                _ => return None,
            }
        }
    }

    /// If the next non-whitespace token opens a `<box>`, consumes the whole
    /// group and returns its inner text and offset.
    pub fn take_box_group(&mut self, diags: &mut Vec<Diagnostic>) -> Option<(String, usize)> {
        let p = self.skip_ws_from(self.pos);
        match self.toks.get(p) {
            Some(Token {
                kind: TokenKind::Open(n),
                start,
                ..
            }) if n == "box" => {
                let open_at = *start;
                self.pos = p + 1;
                match self.read_enclosed("box") {
                    Some((inner, _)) => Some((inner, open_at)),
                    None => {
                        diags.push(Diagnostic::new(
                            open_at,
                            DiagnosticKind::UnclosedTag,
                            "<box> is not closed",
                        ));
                        None
                    }
                }
            }
            _ => None,
        }
    }
}

/// A bracketed integer structure from inside a `<box>` tag.
#[derive(Debug, Clone, PartialEq)]
enum Nested {
    Int(i64),
    List(Vec<Nested>),
}

fn parse_nested(s: &str) -> Result<Nested, String> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let v = parse_nested_at(bytes, &mut i, 0)?;
    skip_ws(bytes, &mut i);
    if i != bytes.len() {
        return Err(format!("unexpected trailing input at {i}"));
    }
    Ok(v)
}

fn skip_ws(b: &[u8], i: &mut usize) {
    while *i < b.len() && b[*i].is_ascii_whitespace() {
        *i += 1;
    }
}

fn parse_nested_at(b: &[u8], i: &mut usize, depth: usize) -> Result<Nested, String> {
    if depth > 3 {
        return Err("nesting too deep".into());
    }
    skip_ws(b, i);
    match b.get(*i) {
        Some(b'[') => {
            *i += 1;
            let mut items = Vec::new();
            skip_ws(b, i);
            if b.get(*i) == Some(&b']') {
                *i += 1;
                return Ok(Nested::List(items));
            }
            loop {
                items.push(parse_nested_at(b, i, depth + 1)?);
                skip_ws(b, i);
                match b.get(*i) {
                    Some(b',') => *i += 1,
                    Some(b']') => {
                        *i += 1;
                        return Ok(Nested::List(items));
                    }
                    _ => return Err(format!("expected ',' or ']' at {}", *i)),
                }
            }
        }
        Some(c) if c.is_ascii_digit() || *c == b'-' || *c == b'+' => {
            let st = *i;
            *i += 1;
            while *i < b.len() && b[*i].is_ascii_digit() {
                *i += 1;
            }
            std::str::from_utf8(&b[st..*i])
                .ok()
                .and_then(|t| t.parse::<i64>().ok())
                .map(Nested::Int)
                .ok_or_else(|| format!("bad integer at {st}"))
        }
        _ => Err(format!("unexpected input at {}", *i)),
    }
}

fn as_quad(n: &Nested) -> Option<[i64; 4]> {
    match n {
        Nested::List(v) if v.len() == 4 => {
            let mut out = [0; 4];
            for (slot, x) in out.iter_mut().zip(v) {
                match x {
                    Nested::Int(k) => *slot = *k,
                    _ => return None,
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// Parses `[x1,y1,x2,y2]` or `[[..],[..],..]` into boxes. Invalid quads are
/// reported and skipped; the rest are kept.
pub(crate) fn parse_box_list(
    inner: &str,
    offset: usize,
    diags: &mut Vec<Diagnostic>,
) -> Vec<BoundingBox> {
    let nested = match parse_nested(inner) {
        Ok(n) => n,
        Err(e) => {
            diags.push(Diagnostic::new(
                offset,
                DiagnosticKind::MalformedBox,
                format!("cannot read box coordinates {inner:?}: {e}"),
            ));
            return Vec::new();
        }
    };
    let quads: Vec<Option<[i64; 4]>> = if let Some(q) = as_quad(&nested) {
        vec![Some(q)]
    } else if let Nested::List(items) = &nested {
        if items.iter().any(|i| matches!(i, Nested::List(_))) {
            items.iter().map(as_quad).collect()
        } else {
            vec![None]
        }
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for q in quads {
        match q {
            None => diags.push(Diagnostic::new(
                offset,
                DiagnosticKind::MalformedBox,
                format!("expected four integer coordinates in {inner:?}"),
            )),
            Some(c) => match BoundingBox::from_coords(c) {
                Ok(b) => out.push(b),
                Err(e) => diags.push(Diagnostic::new(offset, DiagnosticKind::InvalidBox, e.to_string())),
            },
        }
    }
    out
}

pub(crate) fn format_box_list(boxes: &[BoundingBox]) -> String {
    let inner: Vec<String> = boxes.iter().map(|b| b.to_string()).collect();
    format!("[{}]", inner.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_tags_and_text() {
        let t = tokenize("a <ref>x</ref> < b <1> </box>");
        let kinds: Vec<_> = t.iter().map(|t| t.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::Text("a "),
                TokenKind::Open("ref".into()),
                TokenKind::Text("x"),
                TokenKind::Close("ref".into()),
                TokenKind::Text(" < b <1> "),
                TokenKind::Close("box".into()),
            ]
        );
        assert_eq!(t[1].start, 2);
    }

    #[test]
    fn box_lists() {
        let mut d = Vec::new();
        assert_eq!(parse_box_list("[[1,2,3,4], [5,6,7,8]]", 0, &mut d).len(), 2);
        assert_eq!(parse_box_list(" [1, 2, 3, 4] ", 0, &mut d).len(), 1);
        assert!(d.is_empty());
        assert!(parse_box_list("[1,2,3]", 7, &mut d).is_empty());
        assert_eq!(d[0].kind, DiagnosticKind::MalformedBox);
        assert_eq!(d[0].offset, 7);
        assert!(parse_box_list("[[4,4,1,1]]", 0, &mut d).is_empty());
        assert_eq!(d[1].kind, DiagnosticKind::InvalidBox);
        assert!(parse_box_list("[[[[[[1]]]]]]", 0, &mut d).is_empty());
    }
}
