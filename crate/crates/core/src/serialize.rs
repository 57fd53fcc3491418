//! Textual renderings of columns and tables that get embedded in prompts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, Table};

pub const DEFAULT_CELL_CAP: usize = 200;
pub const DEFAULT_ROWS: usize = 5;

/// Cell delimiter of the table wire format.
pub const CELL_SEP: &str = " || ";
const ESCAPED_PIPES: &str = "\\| \\|";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializeError {
    #[error("n_rows must be at least 1")]
    ZeroRows,
    #[error("column has no values")]
    EmptyColumn,
    #[error("all selected cells are empty")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Column,
    Text,
    Table,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Column, Format::Text, Format::Table];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Column => "column",
            Format::Text => "text",
            Format::Table => "table",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "column" => Ok(Format::Column),
            "text" => Ok(Format::Text),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format {other:?} (column|text|table)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializeOptions {
    /// Maximum characters kept per cell.
    pub cell_cap: usize,
    /// Allow an all-empty column to serialize to "".
    pub lenient: bool,
}

impl Default for SerializeOptions {
    fn default() -> Self {
        SerializeOptions {
            cell_cap: DEFAULT_CELL_CAP,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedInput {
    pub format: Format,
    pub payload: String,
    pub n_columns: usize,
}

/// Line breaks become spaces, then trim and cap at `cap` characters.
fn clean_cell(raw: &str, cap: usize) -> String {
    let flat: String = raw
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    let trimmed = flat.trim();
    match trimmed.char_indices().nth(cap) {
        Some((cut, _)) => trimmed[..cut].trim_end().to_string(),
        None => trimmed.to_string(),
    }
}

/// Joins the first `n_rows` cells with single spaces. The same payload serves
/// both the column and the text format.
pub fn serialize_column(
    column: &Column,
    format: Format,
    n_rows: usize,
    opts: &SerializeOptions,
) -> Result<SerializedInput, SerializeError> {
    if n_rows == 0 {
        return Err(SerializeError::ZeroRows);
    }
    if column.values.is_empty() {
        return Err(SerializeError::EmptyColumn);
    }
    let cells: Vec<String> = column
        .values
        .iter()
        .take(n_rows)
        .map(|v| clean_cell(v, opts.cell_cap))
        .filter(|c| !c.is_empty())
        .collect();
    if cells.is_empty() {
        if !opts.lenient {
            return Err(SerializeError::Degenerate);
        }
        log::warn!("column {} serialized to an empty payload", column.index);
    }
    Ok(SerializedInput {
        format,
        payload: cells.join(" "),
        n_columns: 1,
    })
}

fn table_cell(raw: &str, cap: usize) -> String {
    clean_cell(raw, cap).replace("||", ESCAPED_PIPES)
}

/// Renders a header line of anonymous column names followed by the first
/// `n_rows` data rows, cells delimited by `||`.
pub fn serialize_table(
    table: &Table,
    n_rows: usize,
    opts: &SerializeOptions,
) -> Result<SerializedInput, SerializeError> {
    if n_rows == 0 {
        return Err(SerializeError::ZeroRows);
    }
    let k = table.n_columns();
    let rows = n_rows.min(table.n_rows);
    let mut out = String::new();
    for i in 1..=k {
        out.push_str("Column ");
        out.push_str(&i.to_string());
        out.push_str(" || ");
    }
    out.push('\n');
    for r in 0..rows {
        let cells: Vec<String> = table.row(r).map(|c| table_cell(c, opts.cell_cap)).collect();
        out.push_str(&cells.join(CELL_SEP));
        out.push_str(" ||\n");
    }
    Ok(SerializedInput {
        format: Format::Table,
        payload: out,
        n_columns: k,
    })
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn estimate_serialized_width(input: &SerializedInput) -> usize {
    estimate_tokens(&input.payload)
}
