//! Parsing of model replies: bulleted pattern lists and scored verdicts.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("model reply contains no list items")]
    NoItems,
    #[error("model reply contains no score in [0,1]")]
    NoScore,
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+[.):]?)\s*(.*)$").unwrap())
}

/// Lines that start with `-`, `*` or a number are items; the marker is
/// stripped. Everything else (preamble, blank lines) is ignored.
pub fn parse_list_items(text: &str) -> Result<Vec<String>, ParseError> {
    let items: Vec<String> = text
        .lines()
        .filter_map(|line| {
            let trimmed = line.trim_start();
            let starts = trimmed.starts_with(['-', '*', '•'])
                || trimmed.chars().next().is_some_and(|c| c.is_ascii_digit());
            if !starts {
                return None;
            }
            let caps = item_re().captures(line)?;
            let body = caps[1].trim().trim_matches('"').trim();
            (!body.is_empty()).then(|| body.to_string())
        })
        .collect();
    if items.is_empty() {
        Err(ParseError::NoItems)
    } else {
        Ok(items)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVerdict {
    pub score: f64,
    pub reasoning: String,
    /// The score line carried a value outside [0,1].
    pub clamped: bool,
    /// No `SCORE:` line; the first in-range number was used instead.
    pub fallback: bool,
}

fn score_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?im)^[ \t*#]*score[ \t*]*[:=][ \t*]*([-+]?(?:\d+(?:\.\d*)?|\.\d+))[^\n]*$").unwrap()
    })
}

fn reasoning_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)reasoning[ \t*]*:(.*)$").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^\w.])(\d+(?:\.\d+)?|\.\d+)(?:$|[^\w]|\.(?:$|\s))").unwrap())
}

/// `SCORE: <x>` line first (clamped into [0,1] if needed), then the first
/// standalone decimal in [0,1] anywhere in the reply.
pub fn parse_verdict(text: &str) -> Result<ParsedVerdict, ParseError> {
    if let Some(caps) = score_line_re().captures(text) {
        if let Ok(raw) = caps[1].parse::<f64>() {
            let clamped = !(0.0..=1.0).contains(&raw);
            if clamped {
                log::warn!("score {raw} outside [0,1]; clamping");
            }
            let reasoning = match reasoning_re().captures(text) {
                Some(r) => r[1].trim().to_string(),
                None => {
                    let line = caps.get(0).unwrap();
                    format!("{}{}", &text[..line.start()], &text[line.end()..])
                        .trim()
                        .to_string()
                }
            };
            return Ok(ParsedVerdict {
                score: raw.clamp(0.0, 1.0),
                reasoning,
                clamped,
                fallback: false,
            });
        }
    }
    let score = number_re()
        .captures_iter(text)
        .filter_map(|c| c[1].parse::<f64>().ok())
        .find(|v| (0.0..=1.0).contains(v))
        .ok_or(ParseError::NoScore)?;
    log::warn!("no SCORE line in model reply; using first in-range number {score}");
    Ok(ParsedVerdict {
        score,
        reasoning: text.trim().to_string(),
        clamped: false,
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_examples() {
        let items =
            parse_list_items("- a person walking slowly on the road\n- a small group engaged in conversation").unwrap();
        assert_eq!(
            items,
            vec!["a person walking slowly on the road", "a small group engaged in conversation"]
        );
        assert_eq!(parse_list_items(""), Err(ParseError::NoItems));
        let numbered = "Here you go:\n1. a\n2) b\n\n3 c\n4. d\n5. e\n";
        assert_eq!(parse_list_items(numbered).unwrap(), vec!["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn verdict_primary_grammar() {
        let v = parse_verdict("SCORE: 0.00\nREASONING: normal walking").unwrap();
        assert_eq!(v.score, 0.0);
        assert_eq!(v.reasoning, "normal walking");
        let v = parse_verdict("SCORE: 0.95\nREASONING: a cyclist enters the pedestrian walkway").unwrap();
        assert_eq!(v.score, 0.95);
        assert_eq!(v.reasoning, "a cyclist enters the pedestrian walkway");
        assert!(!v.fallback);
    }

    #[test]
    fn verdict_clamps() {
        let v = parse_verdict("SCORE: 1.7\nREASONING: x").unwrap();
        assert_eq!(v.score, 1.0);
        assert!(v.clamped);
    }

    #[test]
    fn verdict_without_reasoning_marker() {
        let v = parse_verdict("Looks fine.\n**Score**: 0.1\nNothing unusual").unwrap();
        assert_eq!(v.score, 0.1);
        assert_eq!(v.reasoning, "Looks fine.\n\nNothing unusual");
    }

    #[test]
    fn verdict_fallback() {
        let t = "I estimate 0.35 likelihood because the cyclist is slow";
        let v = parse_verdict(t).unwrap();
        assert_eq!(v.score, 0.35);
        assert_eq!(v.reasoning, t);
        assert!(v.fallback);
        let v = parse_verdict("the clip has 3 people, probability 0.2.").unwrap();
        assert_eq!(v.score, 0.2);
        assert_eq!(parse_verdict("no anomalies detected"), Err(ParseError::NoScore));
        assert_eq!(parse_verdict("frame v1.5 shows 12 people"), Err(ParseError::NoScore));
    }
}
