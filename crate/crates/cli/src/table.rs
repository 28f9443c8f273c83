//! Comma-separated output with a `#`-prefixed metadata header.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::Context;

/// One cell. Missing numbers print as empty fields.
#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Opt(Option<f64>),
    Int(u64),
    Text(String),
    Flag(bool),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Num(v) | Cell::Opt(Some(v)) => {
                let _ = write!(out, "{v}");
            }
            Cell::Opt(None) => {}
            Cell::Int(v) => {
                let _ = write!(out, "{v}");
            }
            Cell::Flag(b) => out.push_str(if *b { "true" } else { "false" }),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    out.push('"');
                    out.push_str(&s.replace('"', "\"\""));
                    out.push('"');
                } else {
                    out.push_str(s);
                }
            }
        }
    }
}

pub struct Table {
    meta: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(command: &str, config_hash: &str, columns: Vec<&'static str>) -> Self {
        Table {
            meta: vec![
                (
                    "tool".into(),
                    format!("bdrelay {}", env!("CARGO_PKG_VERSION")),
                ),
                ("command".into(), command.into()),
                ("config_hash".into(), config_hash.into()),
            ],
            columns,
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width does not match the header"
        );
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                c.render(&mut s);
            }
            s.push('\n');
        }
        s
    }

    /// Writes to `path`, or to standard output without one.
    pub fn write(&self, path: Option<&Path>) -> anyhow::Result<()> {
        write_text(&self.render(), path)
    }
}

pub fn write_text(text: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_header_and_quotes() {
        let mut t = Table::new("test", "abc", vec!["a", "b", "c", "d"]);
        t.push(vec![
            Cell::Num(0.5),
            Cell::Opt(None),
            Cell::Text("{1,2}".into()),
            Cell::Flag(true),
        ]);
        let s = t.render();
        assert!(s.starts_with("# tool: bdrelay "));
        assert!(s.contains("# config_hash: abc\n"));
        assert!(s.ends_with("a,b,c,d\n0.5,,\"{1,2}\",true\n"));
    }
}
