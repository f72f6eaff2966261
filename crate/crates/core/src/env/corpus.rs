//! Text corpora of targets: each entry is a header line `n lambda seed`
//! followed by the generating circuit, one gate per line.

use super::TargetSpec;
use crate::error::{Error, Result};
use crate::sim::{run_circuit, Circuit};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub seed: u64,
    pub target: TargetSpec,
}

pub fn write_corpus(entries: &[CorpusEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let reference = e
            .target
            .reference
            .as_ref()
            .ok_or_else(|| Error::domain("only generated targets can be exported"))?;
        out.push_str(&format!(
            "{} {} {}\n{}",
            reference.num_qubits(),
            e.target.lambda,
            e.seed,
            reference
        ));
    }
    Ok(out)
}

fn parse_header(line: &str) -> Option<(usize, usize, u64)> {
    let mut t = line.split_whitespace();
    let h = (t.next()?.parse().ok()?, t.next()?.parse().ok()?, t.next()?.parse().ok()?);
    t.next().is_none().then_some(h)
}

fn finish(header: Option<(usize, usize, u64, usize)>, body: &str, out: &mut Vec<CorpusEntry>) -> Result<()> {
    let Some((n, lambda, seed, line)) = header else {
        return Ok(());
    };
    let reference = Circuit::from_text(n, body).map_err(|e| match e {
        Error::Parse { line: l, msg } => Error::parse(line + l, msg),
        other => other,
    })?;
    if reference.gate_count() != lambda {
        return Err(Error::parse(
            line,
            format!("entry declares lambda {lambda} but has {} gates", reference.gate_count()),
        ));
    }
    out.push(CorpusEntry {
        seed,
        target: TargetSpec {
            state: run_circuit(&reference).map_err(|e| Error::parse(line, e.to_string()))?,
            reference: Some(reference),
            lambda,
        },
    });
    Ok(())
}

pub fn read_corpus(text: &str) -> Result<Vec<CorpusEntry>> {
    let mut out = Vec::new();
    let mut header = None;
    let mut body = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some((n, lambda, seed)) = parse_header(line) {
            finish(header.take(), &body, &mut out)?;
            body.clear();
            header = Some((n, lambda, seed, i + 1));
            continue;
        }
        if header.is_none() && !line.is_empty() && !line.starts_with('#') {
            return Err(Error::parse(i + 1, "gate line before any `n lambda seed` header"));
        }
        // Keep line numbering aligned with the header for diagnostics.
        if header.is_some() {
            body.push_str(line);
            body.push('\n');
        }
    }
    finish(header, &body, &mut out)?;
    Ok(out)
}
