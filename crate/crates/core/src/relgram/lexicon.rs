use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Maps verb surface forms found in frame sentences to verb classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VerbLexicon {
    forms: BTreeMap<String, String>,
}

fn is_consonant(c: u8) -> bool {
    c.is_ascii_alphabetic() && !b"aeiou".contains(&c)
}

/// Plausible English surface forms of a verb class given in `-ing` form.
fn inflections(class: &str) -> Vec<String> {
    let mut out = Vec::new();
    let Some(stem) = class.strip_suffix("ing").filter(|s| s.len() >= 2) else {
        return out;
    };
    out.push(stem.to_string());
    out.push(format!("{stem}s"));
    out.push(format!("{stem}es"));
    out.push(format!("{stem}e"));
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && is_consonant(b[n - 1]) {
        let short = &stem[..n - 1];
        out.push(short.to_string());
        out.push(format!("{short}s"));
    }
    if let Some(y) = stem.strip_suffix('y') {
        out.push(format!("{y}ies"));
    }
    out
}

impl VerbLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a lexicon from verb classes: each class maps to itself and to
    /// simple inflections derived from its `-ing` form ("drinking" also
    /// answers to "drink" and "drinks").
    pub fn from_verbs<I, S>(verbs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Self::new();
        let classes: Vec<String> = verbs
            .into_iter()
            .map(|v| super::normalize_label(v.as_ref()))
            .filter(|v| !v.is_empty())
            .collect();
        for c in &classes {
            lex.forms.insert(c.clone(), c.clone());
        }
        for c in &classes {
            for f in inflections(c) {
                lex.forms.entry(f).or_insert_with(|| c.clone());
            }
        }
        lex
    }

    /// Adds or replaces one surface form. The class also maps to itself.
    pub fn insert(&mut self, surface: &str, class: &str) {
        let class = super::normalize_label(class);
        self.forms.insert(super::normalize_label(surface), class.clone());
        self.forms.entry(class.clone()).or_insert(class);
    }

    pub fn extend(&mut self, other: &VerbLexicon) {
        for (k, v) in &other.forms {
            self.forms.insert(k.clone(), v.clone());
        }
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        self.forms.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_forms() {
        let lex = VerbLexicon::from_verbs(["drinking", "riding", "cutting", "carrying"]);
        assert_eq!(lex.lookup("drinks"), Some("drinking"));
        assert_eq!(lex.lookup("drinking"), Some("drinking"));
        assert_eq!(lex.lookup("rides"), Some("riding"));
        assert_eq!(lex.lookup("cuts"), Some("cutting"));
        assert_eq!(lex.lookup("carries"), Some("carrying"));
        assert_eq!(lex.lookup("table"), None);
    }

    #[test]
    fn explicit_entries_and_json() {
        let mut lex = VerbLexicon::new();
        lex.insert("Drinks", "drinking");
        assert_eq!(lex.lookup("drinks"), Some("drinking"));
        assert_eq!(lex.lookup("drinking"), Some("drinking"));
        let parsed: VerbLexicon = serde_json::from_str(r#"{"sips": "drinking"}"#).unwrap();
        assert_eq!(parsed.lookup("sips"), Some("drinking"));
    }
}
