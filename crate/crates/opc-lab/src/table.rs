//! Rectangular result tables with a provenance footer.
//!
//! Tables serialize to RFC-4180-style CSV: a header row, one line per data
//! row, then a `# config_hash=<sha256> seed=<u64>` comment footer. Floats
//! carry 17 significant digits so values survive a round-trip bitwise;
//! unstable or inapplicable cells are written empty.

use std::path::Path;

use crate::CliError;

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => {
                assert!(
                    !s.contains([',', '"', '\n', '\r']),
                    "text cells must not need CSV quoting: {s:?}"
                );
                s.clone()
            }
            Cell::Empty => String::new(),
        }
    }
}

/// A study result: named columns, rectangular rows, and the provenance
/// footer data.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    config_hash: String,
    seed: u64,
}

impl ResultTable {
    pub fn new(columns: &[&str], config_hash: String, seed: u64) -> ResultTable {
        let unique: std::collections::BTreeSet<&&str> = columns.iter().collect();
        assert!(
            unique.len() == columns.len() && !columns.is_empty(),
            "column names must be unique and non-empty"
        );
        ResultTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            config_hash,
            seed,
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Renders the full CSV, footer included.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out.push_str(&format!(
            "# config_hash={} seed={}\n",
            self.config_hash, self.seed
        ));
        out
    }

    /// Writes the rendered CSV in a single call.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// A table read back from disk, cells as raw strings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub config_hash: String,
    pub seed: u64,
}

impl ParsedTable {
    /// Index of a named column.
    pub fn col(&self, name: &str) -> usize {
        self.columns
            .iter()
            .position(|c| c == name)
            .unwrap_or_else(|| panic!("no column named {name}"))
    }

    /// Float value of a named cell; panics on empty or non-numeric cells.
    pub fn f64(&self, row: usize, name: &str) -> f64 {
        let cell = &self.rows[row][self.col(name)];
        cell.parse()
            .unwrap_or_else(|_| panic!("cell ({row}, {name}) is not a float: {cell:?}"))
    }

    /// Whether the named cell is empty.
    pub fn is_empty(&self, row: usize, name: &str) -> bool {
        self.rows[row][self.col(name)].is_empty()
    }
}

/// Reads a CSV written by [`ResultTable::write`].
pub fn read_table(path: &Path) -> Result<ParsedTable, CliError> {
    let raw = std::fs::read_to_string(path)?;
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    let mut config_hash = None;
    let mut seed = None;
    for line in raw.lines() {
        if let Some(footer) = line.strip_prefix('#') {
            for part in footer.split_whitespace() {
                if let Some(v) = part.strip_prefix("config_hash=") {
                    config_hash = Some(v.to_string());
                } else if let Some(v) = part.strip_prefix("seed=") {
                    seed = v.parse().ok();
                }
            }
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if columns.is_empty() {
            columns = fields;
        } else {
            rows.push(fields);
        }
    }
    match (config_hash, seed) {
        (Some(config_hash), Some(seed)) if !columns.is_empty() => Ok(ParsedTable {
            columns,
            rows,
            config_hash,
            seed,
        }),
        _ => Err(CliError::Runtime {
            message: format!("{} is not a result table", path.display()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("opc-lab-table-{}-{name}.csv", std::process::id()))
    }

    #[test]
    fn renders_header_rows_and_footer() {
        let mut table = ResultTable::new(&["x", "y"], "abc123".into(), 9);
        table.push_row(vec![Cell::Int(1), Cell::Float(0.5)]);
        table.push_row(vec![Cell::Empty, Cell::Text("hi".into())]);
        let csv = table.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y");
        assert_eq!(lines[1], "1,5.0000000000000000e-1");
        assert_eq!(lines[2], ",hi");
        assert_eq!(lines[3], "# config_hash=abc123 seed=9");
    }

    #[test]
    fn floats_round_trip_bitwise() {
        let values = [std::f64::consts::PI, -1.0 / 3.0, 1e-300, 6.02e23];
        let mut table = ResultTable::new(&["v"], "h".into(), 0);
        for v in values {
            table.push_row(vec![Cell::Float(v)]);
        }
        let path = temp_path("floats");
        table.write(&path).unwrap();
        let parsed = read_table(&path).unwrap();
        for (i, v) in values.iter().enumerate() {
            assert_eq!(parsed.f64(i, "v"), *v);
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn read_back_preserves_structure() {
        let mut table = ResultTable::new(&["a", "b"], "deadbeef".into(), 42);
        table.push_row(vec![Cell::Int(3), Cell::Empty]);
        let path = temp_path("structure");
        table.write(&path).unwrap();
        let parsed = read_table(&path).unwrap();
        assert_eq!(parsed.columns, vec!["a", "b"]);
        assert_eq!(parsed.config_hash, "deadbeef");
        assert_eq!(parsed.seed, 42);
        assert!(parsed.is_empty(0, "b"));
        assert_eq!(parsed.rows[0][0], "3");
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn ragged_rows_are_rejected() {
        let mut table = ResultTable::new(&["a", "b"], "h".into(), 0);
        table.push_row(vec![Cell::Int(1)]);
    }

    #[test]
    #[should_panic(expected = "unique")]
    fn duplicate_columns_are_rejected() {
        ResultTable::new(&["a", "a"], "h".into(), 0);
    }
}
