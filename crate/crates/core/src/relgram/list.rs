use super::{normalize_label, Diagnostic, DiagnosticKind, Parsed, Triplet};
use crate::geom::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Int(i64),
    List(Vec<Value>),
}

struct Reader<'a> {
    b: &'a [u8],
    i: usize,
}

impl Reader<'_> {
    fn ws(&mut self) {
        while self.i < self.b.len() && self.b[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, String> {
        if depth > 8 {
            return Err("nesting too deep".into());
        }
        self.ws();
        match self.b.get(self.i).copied() {
            Some(b'[') => {
                self.i += 1;
                let mut items = Vec::new();
                self.ws();
                if self.b.get(self.i) == Some(&b']') {
                    self.i += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value(depth + 1)?);
                    self.ws();
                    match self.b.get(self.i) {
                        Some(b',') => self.i += 1,
                        Some(b']') => {
                            self.i += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return Err("expected ',' or ']'".into()),
                    }
                }
            }
            Some(q @ (b'"' | b'\'')) => {
                self.i += 1;
                let mut s = Vec::new();
                while let Some(&c) = self.b.get(self.i) {
                    self.i += 1;
                    if c == b'\\' {
                        if let Some(&n) = self.b.get(self.i) {
                            s.push(n);
                            self.i += 1;
                        }
                    } else if c == q {
                        return Ok(Value::Str(String::from_utf8_lossy(&s).into_owned()));
                    } else {
                        s.push(c);
                    }
                }
                Err("unterminated string".into())
            }
            Some(c) if c.is_ascii_digit() || c == b'-' => {
                let st = self.i;
                self.i += 1;
                while self.b.get(self.i).is_some_and(|c| c.is_ascii_digit()) {
                    self.i += 1;
                }
                if self.b.get(self.i) == Some(&b'.') {
                    return Err("non-integer coordinate".into());
                }
                std::str::from_utf8(&self.b[st..self.i])
                    .ok()
                    .and_then(|t| t.parse().ok())
                    .map(Value::Int)
                    .ok_or_else(|| "bad integer".into())
            }
            Some(c) if c.is_ascii_alphabetic() => {
                // bare word, read as an unquoted label
                let st = self.i;
                while self
                    .b
                    .get(self.i)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b' ' || *c == b'_' || *c == b'-')
                {
                    self.i += 1;
                }
                Ok(Value::Str(String::from_utf8_lossy(&self.b[st..self.i]).into_owned()))
            }
            Some(_) => Err("unexpected character".into()),
            None => Err("unexpected end of input".into()),
        }
    }

    /// Skips to the next entry separator at the top level of the outer list.
    /// Returns false once the outer list (or input) has ended.
    fn recover(&mut self, mut depth: usize) -> bool {
        let mut quote: Option<u8> = None;
        while let Some(&c) = self.b.get(self.i) {
            self.i += 1;
            if let Some(q) = quote {
                if c == b'\\' {
                    self.i += 1;
                } else if c == q {
                    quote = None;
                }
                continue;
            }
            match c {
                b'"' | b'\'' => quote = Some(c),
                b'[' => depth += 1,
                b']' => {
                    if depth == 0 {
                        return false;
                    }
                    depth -= 1;
                }
                b',' if depth == 0 => return true,
                _ => {}
            }
        }
        false
    }
}

fn as_box(v: &Value) -> Result<BoundingBox, String> {
    match v {
        Value::List(items) if items.len() == 4 => {
            let mut c = [0i64; 4];
            for (slot, it) in c.iter_mut().zip(items) {
                match it {
                    Value::Int(k) => *slot = *k,
                    _ => return Err("box coordinates must be integers".into()),
                }
            }
            BoundingBox::from_coords(c).map_err(|e| e.to_string())
        }
        _ => Err("expected [x1,y1,x2,y2]".into()),
    }
}

fn as_label(v: &Value) -> Result<String, String> {
    match v {
        Value::Str(s) => {
            let l = normalize_label(s);
            if l.is_empty() {
                Err("empty label".into())
            } else {
                Ok(l)
            }
        }
        _ => Err("expected a label string".into()),
    }
}

fn entry_to_triplet(v: &Value) -> Result<Triplet, (DiagnosticKind, String)> {
    let Value::List(items) = v else {
        return Err((DiagnosticKind::MalformedList, "entry is not a list".into()));
    };
    if items.len() != 5 {
        return Err((
            DiagnosticKind::ArityMismatch,
            format!("entry has {} elements, expected 5", items.len()),
        ));
    }
    let bad = |e: String| (DiagnosticKind::MalformedList, e);
    Ok(Triplet {
        subject_label: as_label(&items[0]).map_err(bad)?,
        subject_box: as_box(&items[1]).map_err(bad)?,
        object_label: as_label(&items[2]).map_err(bad)?,
        object_box: as_box(&items[3]).map_err(bad)?,
        predicate: as_label(&items[4]).map_err(bad)?,
    })
}

/// Reads a `[[subject, box, object, box, relation], ..]` answer. The list
/// may be embedded in prose; entries that do not have the five-element
/// shape are dropped with a diagnostic.
pub fn parse_scene_graph_list(answer: &str) -> Parsed<Vec<Triplet>> {
    let mut diags = Vec::new();
    let mut out = Vec::new();
    let Some(start) = answer.find('[') else {
        if !answer.trim().is_empty() {
            diags.push(Diagnostic::new(0, DiagnosticKind::MalformedList, "no list found"));
        }
        return Parsed {
            value: out,
            diagnostics: diags,
        };
    };
    let mut r = Reader {
        b: answer.as_bytes(),
        i: start + 1,
    };
    r.ws();
    let mut closed = false;
    if r.b.get(r.i) == Some(&b']') {
        r.i += 1;
        closed = true;
    }
    while !closed && r.i < r.b.len() {
        let at = {
            r.ws();
            r.i
        };
        match r.value(1) {
            Ok(v) => {
                match entry_to_triplet(&v) {
                    Ok(t) => out.push(t),
                    Err((kind, msg)) => diags.push(Diagnostic::new(at, kind, msg)),
                }
                r.ws();
                match r.b.get(r.i) {
                    Some(b',') => r.i += 1,
                    Some(b']') => {
                        r.i += 1;
                        closed = true;
                    }
                    _ => {
                        diags.push(Diagnostic::new(r.i, DiagnosticKind::MalformedList, "expected ',' or ']'"));
                        closed = !r.recover(0);
                    }
                }
            }
            Err(e) => {
                diags.push(Diagnostic::new(at, DiagnosticKind::MalformedList, e));
                // the failing value may have left us inside nested brackets
                r.i = at;
                closed = !r.recover(0);
            }
        }
    }
    if !closed {
        diags.push(Diagnostic::new(answer.len(), DiagnosticKind::UnclosedTag, "list is not closed"));
    }
    if !answer[r.i.min(answer.len())..].trim().is_empty() && closed {
        diags.push(Diagnostic::new(r.i, DiagnosticKind::MalformedList, "text after the list is ignored"));
    }
    Parsed {
        value: out,
        diagnostics: diags,
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            q.push('\\');
        }
        q.push(c);
    }
    q.push('"');
    q
}

pub fn serialize_list(ts: &[Triplet]) -> String {
    let entries: Vec<String> = ts
        .iter()
        .map(|t| {
            format!(
                "[{}, {}, {}, {}, {}]",
                quote(&t.subject_label),
                t.subject_box,
                quote(&t.object_label),
                t.object_box,
                quote(&t.predicate)
            )
        })
        .collect();
    format!("[{}]", entries.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_entry() {
        let p = parse_scene_graph_list(r#"[["person", [1,2,3,4], "bench", [5,6,7,8], "on"]]"#);
        assert!(p.is_clean(), "{:?}", p.diagnostics);
        assert_eq!(
            p.value,
            vec![Triplet {
                subject_label: "person".into(),
                subject_box: BoundingBox::new(1, 2, 3, 4).unwrap(),
                predicate: "on".into(),
                object_label: "bench".into(),
                object_box: BoundingBox::new(5, 6, 7, 8).unwrap(),
            }]
        );
    }

    #[test]
    fn empty_list() {
        let p = parse_scene_graph_list("[]");
        assert!(p.is_clean());
        assert!(p.value.is_empty());
        assert!(parse_scene_graph_list("   ").is_clean());
    }

    #[test]
    fn arity_violation_is_dropped() {
        let p = parse_scene_graph_list(
            r#"[["person", [1,2,3,4], "bench", [5,6,7,8]], ["a", [0,0,1,1], "b", [0,0,2,2], "near"]]"#,
        );
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::ArityMismatch);
        assert_eq!(p.diagnostics[0].offset, 1);
    }

    #[test]
    fn recovers_from_syntax_errors() {
        let p = parse_scene_graph_list(
            r#"Answer: [["a", [0,0,1,1], "b", [0,0,2,2] "near"], ['c', [0,0,1,1], 'd', [0,0,2,2], 'on']]"#,
        );
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.value[0].subject_label, "c");
        assert!(!p.diagnostics.is_empty());

        let p = parse_scene_graph_list(r#"[["a", [0,0,1.5,1], "b", [0,0,2,2], "x"]"#);
        assert!(p.value.is_empty());
        assert!(!p.diagnostics.is_empty());
    }

    proptest! {
        #[test]
        fn total_on_noise(s in "[\\[\\]\",'a-z0-9 .-]{0,64}") {
            let _ = parse_scene_graph_list(&s);
        }
    }
}
