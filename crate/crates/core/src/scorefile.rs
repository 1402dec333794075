//! CSV trial score files.
//!
//! ```text
//! trial_id,label,score
//! a,target,0.9
//! b,nontarget,0.1
//! ```
//!
//! The header is mandatory, every record has exactly three fields, the label
//! is `target` or `nontarget` and the score must parse as a finite number.
//! Blank lines are ignored. Scores are written in shortest round-trip form,
//! so writing and re-reading a set reproduces every score bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scoring::{Label, ScoreSet, TrialScore};

pub const HEADER: &str = "trial_id,label,score";

pub fn parse_scores_str(text: &str) -> Result<ScoreSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    match lines.next() {
        Some((_, header)) if header.trim() == HEADER => {}
        Some((line, _)) => {
            return Err(Error::parse(line, format!("expected header '{HEADER}'")));
        }
        None => {
            return Err(Error::parse(
                1,
                format!("empty file, expected header '{HEADER}'"),
            ))
        }
    }

    let mut trials = Vec::new();
    for (line, record) in lines {
        let fields: Vec<&str> = record.split(',').map(str::trim).collect();
        let [id, label, score] = fields.as_slice() else {
            return Err(Error::parse(
                line,
                format!("expected 3 comma-separated fields, found {}", fields.len()),
            ));
        };
        if id.is_empty() {
            return Err(Error::parse(line, "empty trial id"));
        }
        let label = match *label {
            "target" => Label::Target,
            "nontarget" => Label::Nontarget,
            other => {
                return Err(Error::parse(
                    line,
                    format!("label must be 'target' or 'nontarget', got '{other}'"),
                ))
            }
        };
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(line, format!("invalid score '{score}'")))?;
        if !score.is_finite() {
            return Err(Error::parse(
                line,
                format!("score must be finite, got '{score}'"),
            ));
        }
        trials.push(TrialScore::new(*id, label, score));
    }
    ScoreSet::new(trials)
}

pub fn parse_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let text = std::fs::read_to_string(path)?;
    parse_scores_str(&text)
}

pub fn format_scores(set: &ScoreSet) -> Result<String> {
    let mut out = String::with_capacity(32 * (set.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for t in set.trials() {
        if t.trial_id.contains(',') || t.trial_id.contains('\n') || t.trial_id.is_empty() {
            return Err(Error::domain(format!(
                "trial id '{}' cannot be written",
                t.trial_id
            )));
        }
        writeln!(out, "{},{},{}", t.trial_id, t.label.as_str(), t.score).unwrap();
    }
    Ok(out)
}

pub fn write_scores(path: impl AsRef<Path>, set: &ScoreSet) -> Result<()> {
    std::fs::write(path, format_scores(set)?)?;
    Ok(())
}
