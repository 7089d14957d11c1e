//! `{placeholder}` argument-vector templates for encoder and decoder commands.

use std::collections::BTreeMap;
use std::ffi::OsString;

use serde::{Deserialize, Serialize};

pub const ENCODER_PLACEHOLDERS: &[&str] = &[
    "input",
    "output",
    "qp",
    "config",
    "width",
    "height",
    "frames",
    "framerate",
    "extra_flags",
    "bit_depth",
];
pub const ENCODER_REQUIRED: &[&str] = &["input", "output", "qp"];
pub const DECODER_PLACEHOLDERS: &[&str] = &["bitstream", "output", "bit_depth"];
pub const DECODER_REQUIRED: &[&str] = &["bitstream", "output"];

/// Placeholder that expands to zero or more whole arguments.
const SPLICE: &str = "extra_flags";

/// A program plus arguments; no shell is involved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandTemplate {
    tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Hole(&'a str),
}

fn pieces(token: &str) -> Result<Vec<Piece<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = token;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Text(&rest[..open]));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| format!("unclosed '{{' in {token:?}"))?;
        let name = &rest[open + 1..open + close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("malformed placeholder {{{name}}} in {token:?}"));
        }
        out.push(Piece::Hole(name));
        rest = &rest[open + close + 1..];
    }
    if rest.contains('}') {
        return Err(format!("stray '}}' in {token:?}"));
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    Ok(out)
}

impl CommandTemplate {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for t in &self.tokens {
            if let Ok(ps) = pieces(t) {
                for p in ps {
                    if let Piece::Hole(n) = p {
                        if !names.iter().any(|x| x == n) {
                            names.push(n.to_string());
                        }
                    }
                }
            }
        }
        names
    }

    pub fn uses(&self, name: &str) -> bool {
        self.placeholders().iter().any(|n| n == name)
    }

    /// All problems with this template, empty when it is usable.
    pub fn check(&self, allowed: &[&str], required: &[&str]) -> Vec<String> {
        let mut problems = Vec::new();
        if self.tokens.is_empty() {
            problems.push("empty command".to_string());
            return problems;
        }
        if self.tokens[0].contains('{') {
            problems.push("program name must not be a placeholder".to_string());
        }
        for t in &self.tokens {
            match pieces(t) {
                Err(e) => problems.push(e),
                Ok(ps) => {
                    for p in &ps {
                        if let Piece::Hole(n) = p {
                            if !allowed.contains(n) {
                                problems.push(format!("unknown placeholder {{{n}}}"));
                            } else if *n == SPLICE && ps.len() != 1 {
                                problems.push(format!("{{{SPLICE}}} must be a whole argument, got {t:?}"));
                            }
                        }
                    }
                }
            }
        }
        for r in required {
            if !self.uses(r) {
                problems.push(format!("missing required placeholder {{{r}}}"));
            }
        }
        problems
    }

    /// Substitutes `values`; `{extra_flags}` splices `extra` as separate arguments.
    ///
    /// Placeholders without a value are left verbatim; [`check`](Self::check)
    /// is expected to have run at plan time.
    pub fn render(&self, values: &BTreeMap<&str, String>, extra: &[String]) -> Vec<OsString> {
        let mut argv = Vec::with_capacity(self.tokens.len() + extra.len());
        for t in &self.tokens {
            let ps = pieces(t).unwrap_or_else(|_| vec![Piece::Text(t)]);
            if ps == [Piece::Hole(SPLICE)] {
                argv.extend(extra.iter().map(OsString::from));
                continue;
            }
            let mut s = String::new();
            for p in ps {
                match p {
                    Piece::Text(x) => s.push_str(x),
                    Piece::Hole(n) => match values.get(n) {
                        Some(v) => s.push_str(v),
                        None => {
                            s.push('{');
                            s.push_str(n);
                            s.push('}');
                        }
                    },
                }
            }
            argv.push(OsString::from(s));
        }
        argv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(tokens: &[&str]) -> CommandTemplate {
        CommandTemplate::new(tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn renders_embedded_and_spliced() {
        let enc = t(&["enc", "-i", "{input}", "--QP={qp}", "{extra_flags}", "-o", "{output}"]);
        assert!(enc.check(ENCODER_PLACEHOLDERS, ENCODER_REQUIRED).is_empty());
        let values = BTreeMap::from([
            ("input", "a.yuv".to_string()),
            ("qp", "22".to_string()),
            ("output", "b.bin".to_string()),
        ]);
        let argv = enc.render(&values, &["--ALF=0".into(), "--ISP=0".into()]);
        assert_eq!(
            argv,
            ["enc", "-i", "a.yuv", "--QP=22", "--ALF=0", "--ISP=0", "-o", "b.bin"]
        );
        assert_eq!(enc.render(&values, &[]).len(), 6);
    }

    #[test]
    fn reports_every_problem() {
        let bad = t(&["dec", "{bitstrem}", "x{extra_flags}", "{out"]);
        let problems = bad.check(DECODER_PLACEHOLDERS, DECODER_REQUIRED);
        assert!(problems.iter().any(|p| p.contains("{bitstrem}")));
        assert!(problems.iter().any(|p| p.contains("unknown placeholder {extra_flags}")));
        assert!(problems.iter().any(|p| p.contains("unclosed")));
        assert!(problems.iter().any(|p| p.contains("{bitstream}")));
        assert!(t(&[]).check(DECODER_PLACEHOLDERS, &[]) == ["empty command"]);
        let glued = t(&["enc", "{input}", "{output}", "{qp}", "-x{extra_flags}"]);
        assert_eq!(glued.check(ENCODER_PLACEHOLDERS, ENCODER_REQUIRED).len(), 1);
    }
}
