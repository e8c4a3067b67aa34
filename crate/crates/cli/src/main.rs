use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use rona_core::datasets::{import_dataset, DatasetId};
use rona_core::providers::{check_credentials, Transcript};
use rona_core::runner::{
    build_providers, build_scorer, execute, prepare, render_report, GenerationCache, ReportFormat,
    RunConfig, RunManifest, RunStamp, ScorerConfig,
};

/// Relation-guided caption generation and diversity evaluation.
#[derive(Parser)]
#[command(name = "rona", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset's test split into a canonical manifest.
    Import {
        /// tweet-subtitles or anna
        dataset: DatasetId,
        /// Directory holding test.jsonl or test.json
        src: PathBuf,
        /// Manifest file to write
        out: PathBuf,
    },
    /// Generate, score and report the full settings matrix.
    Run(RunArgs),
    /// Re-render reports from a run manifest.
    Report {
        manifest: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: ReportFormat,
        /// Output file. Markdown defaults to stdout, CSV to report.csv
        /// beside the manifest.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Replace every configured model with the offline mock provider
    #[arg(long, value_parser = ["mock"])]
    provider: Option<String>,
    /// Seeded subset size per dataset
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ignore cached generations
    #[arg(long, conflicts_with = "resume")]
    fresh: bool,
    /// Reuse cached generations (the default)
    #[arg(long)]
    resume: bool,
    /// Scorer command line or http(s) URL; "fallback" for the offline scorer
    #[arg(long)]
    scorer: Option<String>,
    /// Override a config key, e.g. --set workers=8
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn command_import(dataset: DatasetId, src: &Path, out: &Path) -> Result<ExitCode> {
    let report = import_dataset(dataset, src, out)?;
    println!(
        "{}: wrote {} record(s) to {}, skipped {}",
        dataset,
        report.written,
        report.manifest.display(),
        report.skipped.len()
    );
    for s in &report.skipped {
        println!("  record {}: {}", s.line, s.reason);
    }
    Ok(ExitCode::SUCCESS)
}

fn new_run_dir(out_dir: &Path, run_id: &str) -> Result<(PathBuf, String)> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for n in 1.. {
        let id = if n == 1 {
            run_id.to_string()
        } else {
            format!("{run_id}-{n}")
        };
        let dir = out_dir.join(&id);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((dir, id)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn command_run(args: RunArgs) -> Result<ExitCode> {
    let mut overrides = args.overrides.clone();
    if let Some(n) = args.samples {
        overrides.push(("samples".into(), n.to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let mut config = RunConfig::load(&args.config, &overrides)?;
    if args.provider.is_some() {
        config.use_mock_providers();
    }
    if let Some(s) = &args.scorer {
        config.scorer = ScorerConfig::from_arg(s)?;
    }
    config.validate()?;
    for model in &config.models {
        check_credentials(model)?;
    }

    let prepared = prepare(&config)?;
    // Connect before creating the run directory so a failed handshake
    // leaves nothing behind.
    let scorer = build_scorer(&config.scorer, config.metrics.tokenization)?;
    let mut stamp = RunStamp::now(&config);
    let (run_dir, run_id) = new_run_dir(&config.out_dir, &stamp.run_id)?;
    stamp.run_id = run_id;
    let transcript = if config.transcript {
        Some(Arc::new(Transcript::open(
            &run_dir.join("transcript.jsonl"),
        )?))
    } else {
        None
    };
    let providers = build_providers(&config, transcript)?;
    let mut cache = GenerationCache::open(&config.out_dir.join("cache.jsonl"), !args.fresh)?;

    let result = execute(&prepared, &providers, scorer.as_ref(), &mut cache, stamp)?;
    let manifest = &result.manifest;
    write_file(
        &run_dir.join("manifest.json"),
        &serde_json::to_string_pretty(manifest)?,
    )?;
    let complete = manifest.complete();
    if manifest.settings.iter().any(|c| c.report.is_some()) {
        write_file(
            &run_dir.join("report.md"),
            &render_report(manifest, ReportFormat::Markdown)?,
        )?;
        write_file(
            &run_dir.join("report.csv"),
            &render_report(manifest, ReportFormat::Csv)?,
        )?;
    }
    info!("cache: {} hit(s)", result.cache_hits);
    println!("run {}", manifest.run_id);
    println!("  directory: {}", run_dir.display());
    println!("  provider calls: {}", result.provider_calls);
    println!("  rejected samples: {}", manifest.rejections.total);
    for cell in manifest.settings.iter().filter(|c| c.report.is_none()) {
        eprintln!(
            "  no report for {}: {}",
            cell.setting,
            cell.error.as_deref().unwrap_or("unknown")
        );
    }
    Ok(if complete {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn command_report(
    manifest_path: &Path,
    format: ReportFormat,
    output: Option<PathBuf>,
) -> Result<ExitCode> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let rendered = render_report(&manifest, format)?;
    let output = output.or_else(|| match format {
        ReportFormat::Markdown => None,
        ReportFormat::Csv => Some(manifest_path.with_file_name("report.csv")),
    });
    match output {
        Some(path) => {
            write_file(&path, &rendered)?;
            println!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Import { dataset, src, out } => command_import(dataset, &src, &out),
        Command::Run(args) => command_run(args),
        Command::Report {
            manifest,
            format,
            output,
        } => command_report(&manifest, format, output),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn override_parsing() {
        assert_eq!(
            parse_override("a.b=c=d").unwrap(),
            ("a.b".into(), "c=d".into())
        );
        assert!(parse_override("nokey").is_err());
    }
}
