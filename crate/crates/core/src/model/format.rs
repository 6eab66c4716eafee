//! Line-oriented `sisnet v1` instance format and the `svec v1` vector format.

use std::fmt::Write as _;

use super::{Edge, NetworkInstance};

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, msg: msg.into() })
}

/// Serializes to the canonical `sisnet v1` text: edges sorted by (src, dst),
/// single-space separated, full-precision decimals.
pub fn serialize_instance(inst: &NetworkInstance) -> String {
    let mut out = String::new();
    out.push_str("sisnet v1\n");
    let _ = writeln!(out, "nodes {}", inst.n());
    let _ = writeln!(out, "edges {}", inst.edges().len());
    for e in inst.edges() {
        let _ = writeln!(out, "e {} {} {}", e.src, e.dst, e.beta);
    }
    for (name, v) in [
        ("lambda", inst.lambda()),
        ("delta", inst.delta()),
        ("kappa", inst.kappa()),
        ("cost", inst.cost()),
        ("wlin", inst.w_weights()),
    ] {
        out.push_str(name);
        for x in v {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

/// Parses `sisnet v1` text. Any instance invariant violation is a parse
/// error: this function never constructs an invalid instance.
pub fn parse_instance(text: &str) -> Result<NetworkInstance, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = || -> Result<(usize, &str), ParseError> {
        for (no, raw) in lines.by_ref() {
            let t = raw.trim();
            if !t.is_empty() {
                return Ok((no, t));
            }
        }
        err(0, "unexpected end of file")
    };

    let (no, header) = next_line()?;
    if header != "sisnet v1" {
        return err(no, format!("expected header `sisnet v1`, found `{header}`"));
    }
    let (no, nodes_line) = next_line()?;
    let n = parse_count(no, nodes_line, "nodes")?;
    if n == 0 {
        return err(no, "node count must be >= 1");
    }
    let (no, edges_line) = next_line()?;
    let m = parse_count(no, edges_line, "edges")?;

    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (no, line) = next_line()?;
        let mut it = line.split_whitespace();
        if it.next() != Some("e") {
            return err(no, format!("expected edge line `e <src> <dst> <beta>`, found `{line}`"));
        }
        let src: usize = parse_token(no, it.next(), "edge source")?;
        let dst: usize = parse_token(no, it.next(), "edge destination")?;
        let beta: f64 = parse_token(no, it.next(), "edge rate")?;
        if it.next().is_some() {
            return err(no, "trailing tokens on edge line");
        }
        if src >= n || dst >= n {
            return err(no, format!("edge ({src}, {dst}) out of range for {n} nodes"));
        }
        if src == dst {
            return err(no, format!("self-loop at node {src}"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return err(no, format!("edge rate must be > 0, found {beta}"));
        }
        edges.push(Edge { src, dst, beta });
    }

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(5);
    for section in ["lambda", "delta", "kappa", "cost", "wlin"] {
        let (no, line) = match next_line() {
            Ok(v) => v,
            Err(_) => return err(0, format!("missing section `{section}`")),
        };
        let mut it = line.split_whitespace();
        let name = it.next().unwrap_or("");
        if name != section {
            return err(no, format!("missing section `{section}` (found `{name}`)"));
        }
        let mut v = Vec::with_capacity(n);
        for tok in it {
            v.push(
                tok.parse::<f64>()
                    .map_err(|_| ParseError { line: no, msg: format!("bad number `{tok}`") })?,
            );
        }
        if v.len() != n {
            return err(no, format!("section `{section}` has {} values, expected {n}", v.len()));
        }
        vectors.push(v);
    }
    let w = vectors.pop().unwrap();
    let cost = vectors.pop().unwrap();
    let kappa = vectors.pop().unwrap();
    let delta = vectors.pop().unwrap();
    let lambda = vectors.pop().unwrap();

    let inst = NetworkInstance::new(n, edges, lambda, delta, kappa, cost, w)
        .map_err(|e| ParseError { line: 0, msg: e.to_string() })?;
    let report = inst.validate();
    if !report.ok {
        return err(0, report.violations.join("; "));
    }
    Ok(inst)
}

fn parse_count(line: usize, text: &str, key: &str) -> Result<usize, ParseError> {
    let mut it = text.split_whitespace();
    if it.next() != Some(key) {
        return err(line, format!("missing section `{key}`"));
    }
    let v = parse_token(line, it.next(), key)?;
    if it.next().is_some() {
        return err(line, format!("trailing tokens after `{key}`"));
    }
    Ok(v)
}

fn parse_token<T: std::str::FromStr>(
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T, ParseError> {
    let tok = match tok {
        Some(t) => t,
        None => return err(line, format!("missing {what}")),
    };
    tok.parse::<T>().map_err(|_| ParseError { line, msg: format!("bad {what} `{tok}`") })
}

/// Writes an `svec v1` vector, one value per line.
pub fn write_svec(v: &[f64]) -> String {
    let mut out = String::from("svec v1\n");
    for x in v {
        let _ = writeln!(out, "{x}");
    }
    out
}

/// Parses an `svec v1` vector; `expect_len` is checked when given.
pub fn parse_svec(text: &str, expect_len: Option<usize>) -> Result<Vec<f64>, ParseError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((no, l)) if !l.trim().is_empty() => break (no + 1, l.trim()),
            Some(_) => continue,
            None => return err(0, "empty svec input"),
        }
    };
    if header.1 != "svec v1" {
        return err(header.0, format!("expected header `svec v1`, found `{}`", header.1));
    }
    let mut v = Vec::new();
    for (no, line) in lines {
        for tok in line.split_whitespace() {
            v.push(
                tok.parse::<f64>()
                    .map_err(|_| ParseError { line: no + 1, msg: format!("bad number `{tok}`") })?,
            );
        }
    }
    if let Some(len) = expect_len {
        if v.len() != len {
            return err(0, format!("svec has {} values, expected {len}", v.len()));
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_text() -> String {
        [
            "sisnet v1",
            "nodes 2",
            "edges 2",
            "e 0 1 0.5",
            "e 1 0 0.25",
            "lambda 0.1 0.2",
            "delta 0.1 0.1",
            "kappa 10 10",
            "cost 5 5",
            "wlin 1 1",
            "",
        ]
        .join("\n")
    }

    #[test]
    fn round_trip_is_canonical() {
        let inst = parse_instance(&sample_text()).unwrap();
        let canon = serialize_instance(&inst);
        let again = parse_instance(&canon).unwrap();
        assert_eq!(serialize_instance(&again), canon);
    }

    #[test]
    fn self_loop_rejected() {
        let text = sample_text().replace("e 0 1 0.5", "e 1 1 0.5");
        let e = parse_instance(&text).unwrap_err();
        assert!(e.msg.contains("self-loop"), "{e}");
        assert_eq!(e.line, 4);
    }

    #[test]
    fn missing_section_rejected() {
        let text = sample_text().replace("delta 0.1 0.1\n", "");
        let e = parse_instance(&text).unwrap_err();
        assert!(e.msg.contains("missing section `delta`"), "{e}");
    }

    #[test]
    fn unsorted_edges_canonicalized() {
        let text = sample_text()
            .replace("e 0 1 0.5\ne 1 0 0.25", "e 1 0 0.25\ne 0 1 0.5");
        let inst = parse_instance(&text).unwrap();
        let canon = serialize_instance(&inst);
        assert!(canon.contains("e 0 1 0.5\ne 1 0 0.25"));
    }

    #[test]
    fn svec_round_trip() {
        let v = vec![0.5, 1.0 / 3.0, 2e-9];
        let parsed = parse_svec(&write_svec(&v), Some(3)).unwrap();
        assert_eq!(parsed, v);
    }

    #[test]
    fn invalid_instance_rejected_by_parse() {
        // negative lambda violates an invariant, parse must refuse
        let text = sample_text().replace("lambda 0.1 0.2", "lambda -0.1 0.2");
        assert!(parse_instance(&text).is_err());
    }
}
