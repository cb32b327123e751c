use serde::{Deserialize, Serialize};

/// A completion split into its reasoning and answer segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub think: String,
    pub answer: String,
    pub well_formed: bool,
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

fn positions(raw: &str, pat: &str) -> Vec<usize> {
    raw.match_indices(pat).map(|(i, _)| i).collect()
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Splits `raw` into think and answer parts.
///
/// The envelope is well formed only when each of the four delimiters occurs
/// exactly once, in order, with nothing but whitespace around and between
/// the two blocks. Otherwise the answer is the first `<answer>` block (up to
/// its close tag or the end of input), or the whole text when there is none.
pub fn parse_envelope(raw: &str) -> Envelope {
    let to = positions(raw, THINK_OPEN);
    let tc = positions(raw, THINK_CLOSE);
    let ao = positions(raw, ANSWER_OPEN);
    let ac = positions(raw, ANSWER_CLOSE);

    if let ([to], [tc], [ao], [ac]) = (&to[..], &tc[..], &ao[..], &ac[..]) {
        let (to, tc, ao, ac) = (*to, *tc, *ao, *ac);
        let think_start = to + THINK_OPEN.len();
        let answer_start = ao + ANSWER_OPEN.len();
        if think_start <= tc
            && tc + THINK_CLOSE.len() <= ao
            && answer_start <= ac
            && blank(&raw[..to])
            && blank(&raw[tc + THINK_CLOSE.len()..ao])
            && blank(&raw[ac + ANSWER_CLOSE.len()..])
        {
            return Envelope {
                think: raw[think_start..tc].to_string(),
                answer: raw[answer_start..ac].to_string(),
                well_formed: true,
            };
        }
    }

    let think = to
        .first()
        .map(|&s| {
            let body = &raw[s + THINK_OPEN.len()..];
            body.find(THINK_CLOSE).map_or(body, |e| &body[..e]).to_string()
        })
        .unwrap_or_default();
    let answer = match ao.first() {
        Some(&s) => {
            let body = &raw[s + ANSWER_OPEN.len()..];
            body.find(ANSWER_CLOSE).map_or(body, |e| &body[..e]).to_string()
        }
        None => raw.to_string(),
    };
    Envelope {
        think,
        answer,
        well_formed: false,
    }
}

pub fn wrap_envelope(think: &str, answer: &str) -> String {
    format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
}
