//! Grid case files: `from_bus,to_bus,g_line,b_tilde_line` with a header row,
//! 1-based buses and an optional `# buses: M` comment line.

use std::io::Write;
use std::path::Path;

use super::{Line, LineList};
use crate::error::{Error, Result};

const IEEE14: &str = include_str!("../../data/ieee14.csv");
const IEEE33: &str = include_str!("../../data/ieee33.csv");

/// Bundled IEEE 14-bus series-line parameters.
pub fn ieee14() -> LineList {
    parse_case(IEEE14).expect("bundled ieee14 case is valid")
}

/// Bundled IEEE 33-bus distribution feeder.
pub fn ieee33() -> LineList {
    parse_case(IEEE33).expect("bundled ieee33 case is valid")
}

fn declared_bus_count(text: &str) -> Result<Option<usize>> {
    for (n, raw) in text.lines().enumerate() {
        let Some(comment) = raw.trim().strip_prefix('#') else {
            continue;
        };
        let comment = comment.trim();
        if let Some(value) = comment.strip_prefix("buses:") {
            let m = value.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("bad bus count {:?}", value.trim()),
            })?;
            return Ok(Some(m));
        }
    }
    Ok(None)
}

pub fn parse_case(text: &str) -> Result<LineList> {
    let declared = declared_bus_count(text)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    let expected = ["from_bus", "to_bus", "g_line", "b_tilde_line"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut lines = Vec::new();
    for record in reader.deserialize::<Line>() {
        lines.push(record.map_err(csv_error)?);
    }
    let max_bus = lines
        .iter()
        .map(|l| l.from_bus.max(l.to_bus))
        .max()
        .unwrap_or(0);
    let m = declared.unwrap_or(max_bus);
    LineList::new(m, lines)
}

pub fn read_case(path: &Path) -> Result<LineList> {
    parse_case(&std::fs::read_to_string(path)?)
}

pub fn write_case(out: &mut impl Write, lines: &LineList) -> Result<()> {
    writeln!(out, "# buses: {}", lines.m())?;
    writeln!(out, "from_bus,to_bus,g_line,b_tilde_line")?;
    for l in lines.lines() {
        writeln!(out, "{},{},{:?},{:?}", l.from_bus, l.to_bus, l.g_line, l.b_tilde_line)?;
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}
