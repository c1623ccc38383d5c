use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Every JSON report is wrapped in this envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub command: String,
    pub report: T,
}

/// A flat table for CSV output.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.rows.push(row.into_iter().map(|s| s.to_string()).collect());
    }
}

pub struct Output {
    pub json: serde_json::Value,
    pub table: Table,
}

impl Output {
    pub fn new<T: Serialize>(command: &str, report: &T, table: Table) -> anyhow::Result<Self> {
        let envelope = Envelope { schema_version: SCHEMA_VERSION, command: command.to_string(), report };
        Ok(Self { json: serde_json::to_value(&envelope)?, table })
    }

    pub fn write(&self, format: Format, out: Option<&Path>) -> anyhow::Result<()> {
        let sink: Box<dyn Write> = match out {
            Some(path) => Box::new(File::create(path)?),
            None => Box::new(io::stdout().lock()),
        };
        let mut sink = io::BufWriter::new(sink);
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut sink, &self.json)?;
                writeln!(sink)?;
            }
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(&mut sink);
                w.write_record(&self.table.header)?;
                for row in &self.table.rows {
                    w.write_record(row)?;
                }
                w.flush()?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}
