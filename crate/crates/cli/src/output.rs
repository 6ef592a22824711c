use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use regpi_core::mdp::fmt_f64;

/// CSV goes to `out` or stdout; the summary goes to stdout when the CSV
/// has its own file and to stderr otherwise.
pub struct Sink {
    csv: csv::Writer<Box<dyn Write>>,
    to_file: bool,
}

impl Sink {
    pub fn open(out: Option<&Path>, header: &[&str]) -> Result<Self> {
        let inner: Box<dyn Write> = match out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        };
        let mut csv = csv::Writer::from_writer(inner);
        csv.write_record(header)?;
        Ok(Self {
            csv,
            to_file: out.is_some(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.csv.write_record(fields)?;
        Ok(())
    }

    /// Flushes the CSV and prints the summary lines.
    pub fn finish(mut self, summary: &[String]) -> Result<()> {
        self.csv.flush()?;
        drop(self.csv);
        if self.to_file {
            let mut out = io::stdout().lock();
            for line in summary {
                writeln!(out, "{line}")?;
            }
        } else {
            for line in summary {
                eprintln!("{line}");
            }
        }
        Ok(())
    }
}

pub fn num(v: f64) -> String {
    fmt_f64(v)
}

pub fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
