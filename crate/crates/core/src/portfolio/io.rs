//! CSV ingestion and export.
//!
//! `portfolio.csv`: `risk_id,total_insured_value,n_subrisks`.
//! `events.csv`: `year,event,risk_id,p,alpha,beta`.
//!
//! Line numbers in errors count the header as line 1.

use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use super::{LossModel, LossTerm, Portfolio, Risk};
use crate::error::{Error, Result};

pub const PORTFOLIO_HEADER: [&str; 3] = ["risk_id", "total_insured_value", "n_subrisks"];
pub const EVENTS_HEADER: [&str; 6] = ["year", "event", "risk_id", "p", "alpha", "beta"];

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn row_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Row {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn open(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| row_err(path, 1, e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(row_err(
            path,
            1,
            format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(rdr)
}

fn field<T: FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| row_err(path, line, format!("missing field {name}")))?;
    raw.parse()
        .map_err(|_| row_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

fn records(path: &Path, rdr: &mut csv::Reader<File>, width: usize) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            row_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(row_err(
                path,
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        out.push((line, rec));
    }
    Ok(out)
}

pub fn load_portfolio(path: &Path) -> Result<Portfolio> {
    let mut rdr = open(path, &PORTFOLIO_HEADER)?;
    let mut risks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, rec) in records(path, &mut rdr, PORTFOLIO_HEADER.len())? {
        let risk_id: String = field(path, line, &rec, 0, "risk_id")?;
        if risk_id.is_empty() {
            return Err(row_err(path, line, "empty risk_id"));
        }
        let tiv: f64 = field(path, line, &rec, 1, "total_insured_value")?;
        if !(tiv > 0.0 && tiv.is_finite()) {
            return Err(row_err(
                path,
                line,
                format!("total_insured_value must be positive, got {tiv}"),
            ));
        }
        let n_subrisks: u32 = field(path, line, &rec, 2, "n_subrisks")?;
        if n_subrisks == 0 {
            return Err(row_err(path, line, "n_subrisks must be at least 1"));
        }
        if !seen.insert(risk_id.clone()) {
            return Err(row_err(path, line, format!("duplicate risk_id {risk_id}")));
        }
        risks.push(Risk {
            risk_id,
            total_insured_value: tiv,
            n_subrisks,
        });
    }
    Portfolio::new(risks)
}

/// Reads event rows, resolving each `risk_id` against `portfolio`.
pub fn load_events(path: &Path, portfolio: &Portfolio) -> Result<Vec<LossTerm>> {
    let mut rdr = open(path, &EVENTS_HEADER)?;
    let mut terms = Vec::new();
    for (line, rec) in records(path, &mut rdr, EVENTS_HEADER.len())? {
        let year: u32 = field(path, line, &rec, 0, "year")?;
        let event: u32 = field(path, line, &rec, 1, "event")?;
        let risk_id = rec.get(2).unwrap_or_default();
        let risk = portfolio
            .position(risk_id)
            .ok_or_else(|| row_err(path, line, format!("unknown risk_id {risk_id:?}")))?;
        let r = portfolio.risk(risk);
        let term = LossTerm {
            year,
            event,
            risk,
            p: field(path, line, &rec, 3, "p")?,
            alpha: field(path, line, &rec, 4, "alpha")?,
            beta: field(path, line, &rec, 5, "beta")?,
            exposure: r.exposure(),
            n_sub: r.n_subrisks,
        };
        term.check().map_err(|msg| row_err(path, line, msg))?;
        terms.push(term);
    }
    Ok(terms)
}

/// Loads both files; `n_years` overrides the year count (see [`LossModel::new`]).
pub fn load_model(portfolio: &Path, events: &Path, n_years: Option<u32>) -> Result<LossModel> {
    let p = load_portfolio(portfolio)?;
    let terms = load_events(events, &p)?;
    LossModel::new(p, terms, n_years)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

pub fn write_portfolio(path: &Path, portfolio: &Portfolio) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PORTFOLIO_HEADER)?;
    for r in portfolio.risks() {
        w.write_record([
            r.risk_id.clone(),
            fmt_f64(r.total_insured_value),
            r.n_subrisks.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, model: &LossModel) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(EVENTS_HEADER)?;
    for t in model.terms() {
        w.write_record([
            t.year.to_string(),
            t.event.to_string(),
            model.portfolio().risk(t.risk).risk_id.clone(),
            fmt_f64(t.p),
            fmt_f64(t.alpha),
            fmt_f64(t.beta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `portfolio.csv` and `events.csv` into `dir`.
pub fn write_model(dir: &Path, model: &LossModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_portfolio(&dir.join("portfolio.csv"), model.portfolio())?;
    write_events(&dir.join("events.csv"), model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const PORTFOLIO: &str = "risk_id,total_insured_value,n_subrisks\nA,100,4\nB,50.5,1\n";

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pp = write(dir.path(), "p.csv", PORTFOLIO);
        let ep = write(
            dir.path(),
            "e.csv",
            "year,event,risk_id,p,alpha,beta\n2,7,B,0.1234567890123,1.5e-3,0.3\n",
        );
        let m = load_model(&pp, &ep, None).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_model(out.path(), &m).unwrap();
        let m2 = load_model(&out.path().join("portfolio.csv"), &out.path().join("events.csv"), None).unwrap();
        assert_eq!(m.terms(), m2.terms());
        assert_eq!(m.portfolio().risks(), m2.portfolio().risks());
        let t = m.terms()[0];
        assert_eq!(t.exposure, 50.5);
        assert_eq!(t.alpha.to_bits(), 1.5e-3f64.to_bits());
    }

    #[test]
    fn empty_events_give_zero_years() {
        let dir = tempfile::tempdir().unwrap();
        let pp = write(dir.path(), "p.csv", PORTFOLIO);
        let ep = write(dir.path(), "e.csv", "year,event,risk_id,p,alpha,beta\n");
        let m = load_model(&pp, &ep, None).unwrap();
        assert_eq!(m.n_years(), 0);
        assert!(m.summaries().is_empty());
    }

    #[test]
    fn bad_alpha_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let pp = write(dir.path(), "p.csv", PORTFOLIO);
        let mut body = String::from("year,event,risk_id,p,alpha,beta\n");
        for i in 0..10 {
            let alpha = if i == 5 { "-1" } else { "2" };
            body.push_str(&format!("1,{i},A,0.1,{alpha},3\n"));
        }
        let ep = write(dir.path(), "e.csv", &body);
        let err = load_model(&pp, &ep, None).unwrap_err();
        match &err {
            Error::Row { line, msg, .. } => {
                assert_eq!(*line, 7);
                assert!(msg.contains("alpha"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().contains("line 7"));
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let pp = write(dir.path(), "p.csv", PORTFOLIO);
        for (row, needle) in [
            ("1,1,Z,0.1,1,1", "unknown risk_id"),
            ("1,1,A,1.5,1,1", "p must"),
            ("1,1,A,0.1,1,0", "beta"),
            ("0,1,A,0.1,1,1", "year"),
            ("1,1,A,abc,1,1", "cannot parse p"),
        ] {
            let ep = write(
                dir.path(),
                "e.csv",
                &format!("year,event,risk_id,p,alpha,beta\n{row}\n"),
            );
            let err = load_model(&pp, &ep, None).unwrap_err();
            assert!(err.is_validation());
            assert!(err.to_string().contains(needle), "{err}");
            assert!(err.to_string().contains("line 2"), "{err}");
        }
        let bad = write(dir.path(), "bad.csv", "risk_id,tiv,n\nA,1,1\n");
        assert!(load_portfolio(&bad).unwrap_err().to_string().contains("line 1"));
        let dup = write(
            dir.path(),
            "dup.csv",
            "risk_id,total_insured_value,n_subrisks\nA,1,1\nA,2,1\n",
        );
        assert!(load_portfolio(&dup).unwrap_err().to_string().contains("line 3"));
    }
}
