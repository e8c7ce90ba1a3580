//! `tce`: command-line front end for truncated conditional mean estimation,
//! bounds, and the Monte Carlo tables.
//!
//! Exit codes: 0 success, 1 estimation failure, 2 usage error, 3 I/O or
//! input data error.

mod args;
mod commands;
mod finite;
mod ingest;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use args::{Cli, Command, Format};
use commands::Output;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    /// Unreadable or inconsistent input data.
    Data(String),
    Estimation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Estimation(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Data(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Estimation(_) => "estimation",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) | CliError::Estimation(m) => m,
        }
    }
}

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn load_config(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    match serde_json::to_value(table) {
        Ok(Value::Object(m)) => Ok(m),
        _ => Err(CliError::Usage("config must be a table".into())),
    }
}

/// Top-level config keys, then the command's section, then flags.
fn merge<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: &Map<String, Value>,
    section: &str,
) -> Result<T, CliError> {
    let mut merged: Map<String, Value> = config
        .iter()
        .filter(|(_, v)| !v.is_object())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(Value::Object(sec)) = config.get(section) {
        merged.extend(sec.clone());
    }
    if let Ok(Value::Object(f)) = serde_json::to_value(flags) {
        merged.extend(f.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn render(out: &Output, format: Format, envelope: Value) -> Result<String, CliError> {
    match format {
        Format::Json => {
            if let Some(p) = finite::first_non_finite(&envelope) {
                return Err(CliError::Estimation(format!("non-finite value in output: {p}")));
            }
            let mut s = serde_json::to_string_pretty(&envelope).map_err(|e| CliError::Io(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| CliError::Io(e.to_string());
            w.write_record(&out.header).map_err(io)?;
            for r in &out.rows {
                w.write_record(r).map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
        }
        Format::Table => Ok(match &out.text {
            Some(t) => t.clone(),
            None => align(&out.header, &out.rows),
        }),
    }
}

fn align(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(header);
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let format = match cli.format {
        Some(f) => f,
        None => match config.get("format") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("config format: {e}")))?,
            None if matches!(cli.command, Command::Simulate(_)) => Format::Table,
            None => Format::Json,
        },
    };
    let out_path = cli
        .out
        .clone()
        .or_else(|| config.get("out").and_then(Value::as_str).map(Into::into));
    let name = cli.command.name();
    let (output, echo, sim_csv) = match &cli.command {
        Command::Estimate(a) => {
            let a = merge(a, &config, name)?;
            (commands::estimate_cmd(&a)?, json!(a), None)
        }
        Command::Bandwidth(a) => {
            let a = merge(a, &config, name)?;
            (commands::bandwidth_cmd(&a)?, json!(a), None)
        }
        Command::BoundsRd(a) => {
            let a = merge(a, &config, name)?;
            (commands::bounds_rd_cmd(&a)?, json!(a), None)
        }
        Command::BoundsLee(a) => {
            let a = merge(a, &config, name)?;
            (commands::bounds_lee_cmd(&a)?, json!(a), None)
        }
        Command::Simulate(a) => {
            let a = merge(a, &config, name)?;
            let s = commands::simulate_cmd(&a)?;
            (s.output, json!(a), Some(s.csv))
        }
    };
    let envelope = json!({
        "command": name,
        "version": VERSION,
        "status": "ok",
        "config": echo,
        "result": output.json,
    });
    let text = render(&output, format, envelope)?;
    match (sim_csv, out_path.as_deref()) {
        // simulate writes the CSV to --out and the chosen format to stdout
        (Some(csv), Some(p)) => {
            emit(&csv, Some(p))?;
            emit(&text, None)
        }
        (_, p) => emit(&text, p),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            let body = json!({
                "command": cli.command.name(),
                "version": VERSION,
                "status": "error",
                "error": { "kind": e.kind(), "message": e.message(), "exit_code": e.code() },
            });
            if let Ok(s) = serde_json::to_string_pretty(&body) {
                println!("{s}");
            }
            ExitCode::from(e.code())
        }
    }
}
