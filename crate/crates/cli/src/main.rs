use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use paylogic_core::analysis::{analyze, Options, Property};
use paylogic_core::report::{render_json, render_text};
use paylogic_core::{dsl, oracle, Diagnostic, SourceFile};

#[derive(Parser)]
#[command(name = "paylogic", version, about = "Evidence, fairness and timeliness checks for payment protocols")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a protocol description.
    Analyze {
        file: PathBuf,
        /// Comma-separated subset of checks to run.
        #[arg(long, value_delimiter = ',', value_parser = parse_property)]
        check: Vec<Property>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Rule-application limit per proof.
        #[arg(long, default_value_t = paylogic_core::logic::DEFAULT_DEPTH)]
        depth: usize,
        /// Cross-run the brute-force checkers; disagreement fails the run.
        #[arg(long)]
        oracle: bool,
    },
    /// Print a protocol description in canonical form.
    Fmt { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn parse_property(s: &str) -> Result<Property, String> {
    Property::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Property::ALL.iter().map(|p| p.name()).collect();
        format!("unknown check `{s}` (expected one of {})", names.join(", "))
    })
}

fn report_diagnostics(path: &str, ds: &[Diagnostic]) {
    for d in ds {
        eprintln!("{path}:{d}");
    }
}

fn load(path: &PathBuf) -> Result<(SourceFile, paylogic_core::ProtocolSpec, paylogic_core::EvidenceSpec), u8> {
    let src = SourceFile::read(path).map_err(|d| {
        eprintln!("{d}");
        2
    })?;
    match dsl::parse(&src) {
        Ok((spec, ev)) => Ok((src, spec, ev)),
        Err(ds) => {
            report_diagnostics(&src.path, &ds);
            Err(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Analyze { file, check, format, depth, oracle: cross } => {
            let (src, spec, ev) = match load(&file) {
                Ok(x) => x,
                Err(code) => return Ok(code),
            };
            let checks = if check.is_empty() { Property::ALL.to_vec() } else { check };
            let report = analyze(&spec, &ev, &Options { checks, depth });
            report_diagnostics(&src.path, &report.validation);
            report_diagnostics(&src.path, &report.assumption_diagnostics);
            let text = match format {
                Format::Json => render_json(&report),
                Format::Text => render_text(&report),
            };
            out.write_all(text.as_bytes()).context("writing report")?;
            let mut code = report.exit_code() as u8;
            if cross {
                let disagreements = oracle::cross_check(&spec, &ev);
                for d in &disagreements {
                    eprintln!("oracle: {d}");
                }
                if disagreements.is_empty() {
                    eprintln!("oracle: no disagreements");
                } else if code == 0 || code == 3 {
                    code = 1;
                }
            }
            Ok(code)
        }
        Command::Fmt { file } => {
            let (_, spec, ev) = match load(&file) {
                Ok(x) => x,
                Err(code) => return Ok(code),
            };
            out.write_all(dsl::print(&spec, &ev).as_bytes()).context("writing output")?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
