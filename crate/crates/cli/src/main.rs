mod commands;
mod plot;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use symplift::system_file::{parse_system_file, Command, Settings, SystemFile};

use commands::{execute, CliError, Outputs};
use report::{worst, RunReport};

#[derive(Parser)]
#[command(name = "symplift", version, about = "Integrable systems, cotangent lifts and rigidity checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct Common {
    /// System file (TOML).
    file: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the main numeric table to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write a plot to this SVG file.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Sampling box, one `lo:hi` per coordinate, comma separated.
    #[arg(long, value_parser = parse_domain, allow_hyphen_values = true)]
    domain: Option<Domain>,
}

/// Parsed `--domain` value.
#[derive(Clone)]
struct Domain(Vec<[f64; 2]>);

#[derive(Subcommand)]
enum Cmd {
    /// Involution check and classification of singular points.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
        /// Classify this point instead of scanning a grid.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
        /// Grid points per axis for the scan.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Cotangent lift of a group action and its checks.
    Lift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        action: Option<String>,
        /// Check this `[maps]` entry instead of the computed lift.
        #[arg(long)]
        raw_map: Option<String>,
    },
    /// Average two close actions into a conjugacy and verify it.
    Conjugate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        action1: Option<String>,
        #[arg(long)]
        action2: Option<String>,
        /// Quadrature nodes per circle factor.
        #[arg(long)]
        quad_n: Option<usize>,
        /// Grid points per bounded base axis of the interpolated map.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Symplectic integration of a Hamiltonian flow.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
        /// Hamiltonian from `[functions]`; defaults to the first component.
        #[arg(long)]
        function: Option<String>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, allow_negative_numbers = true)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Also compute the action variable of this level (one degree of freedom).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        level: Option<Vec<f64>>,
    },
    /// Circle reduction of a system to functions of the block radii.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
    },
    /// Rigidity experiment at a degenerate or elliptic singular point.
    RigidityExperiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
    },
    /// Leafwise symplectic conjugacy near an elliptic point.
    Leaf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        perturbed: Option<String>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        level: Option<Vec<f64>>,
    },
    /// Run the `[experiments]` blocks of a file.
    Run {
        /// System file (TOML).
        file: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Only these experiments (default: all).
        #[arg(long = "only", value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn parse_domain(s: &str) -> Result<Domain, String> {
    s.split(',')
        .map(|part| {
            let (a, b) = part.split_once(':').ok_or_else(|| format!("`{part}` is not lo:hi"))?;
            let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
            let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
            if lo < hi { Ok([lo, hi]) } else { Err(format!("empty interval {lo}:{hi}")) }
        })
        .collect::<Result<_, _>>()
        .map(Domain)
}

fn load(path: &Path) -> Result<SystemFile, String> {
    let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_system_file(&src).map_err(|e| format!("{}:{e}", path.display()))
}

fn print<T: serde::Serialize>(value: &T, text: impl FnOnce() -> String, format: Format) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("reports serialize")),
        Format::Text => print!("{}", text()),
    }
}

fn single(cmd: Command, common: Common, mut flags: Settings) -> Result<ExitCode, String> {
    flags.tol = common.tol;
    flags.seed = common.seed;
    flags.samples = common.samples;
    flags.domain = common.domain.map(|d| d.0);
    let file = load(&common.file)?;
    let path = common.file.display().to_string();
    let outputs = Outputs { csv: common.csv, svg: common.svg };
    let report = execute(cmd, &file, &path, &flags, &outputs).map_err(|e| e.to_string())?;
    print(&report, || report.to_text(), common.format);
    Ok(ExitCode::from(report.outcome.exit_code() as u8))
}

fn run(path: PathBuf, format: Format, only: Vec<String>) -> Result<ExitCode, String> {
    let file = load(&path)?;
    let display = path.display().to_string();
    for name in &only {
        if !file.experiments.iter().any(|e| &e.name == name) {
            return Err(format!("no experiment named `{name}`"));
        }
    }
    let mut experiments = Vec::new();
    for exp in file.experiments.iter().filter(|e| only.is_empty() || only.contains(&e.name)) {
        let report = execute(exp.command, &file, &display, &exp.settings, &Outputs::default())
            .map_err(|e: CliError| format!("experiment `{}`: {e}", exp.name))?;
        experiments.push((exp.name.clone(), report));
    }
    if experiments.is_empty() {
        return Err("the file has no [experiments]".into());
    }
    let outcome = worst(experiments.iter().map(|(_, r)| r.outcome));
    let rr = RunReport { command: "run", file: display, experiments, outcome };
    print(&rr, || rr.to_text(), format);
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn main() -> ExitCode {
    // exit code 2 is reserved for refusals
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let d = Settings::default;
    let result = match cli.command {
        Cmd::Analyze { common, system, point, grid } => {
            single(Command::Analyze, common, Settings { system, point, grid, ..d() })
        }
        Cmd::Lift { common, action, raw_map } => single(Command::Lift, common, Settings { action, raw_map, ..d() }),
        Cmd::Conjugate { common, action1, action2, quad_n, grid } => {
            single(Command::Conjugate, common, Settings { action1, action2, quad_n, grid, ..d() })
        }
        Cmd::Flow { common, system, function, x0, dt, steps, level } => {
            single(Command::Flow, common, Settings { system, function, x0, dt, steps, level, ..d() })
        }
        Cmd::Reduce { common, system } => single(Command::Reduce, common, Settings { system, ..d() }),
        Cmd::RigidityExperiment { common, system, point } => {
            single(Command::RigidityExperiment, common, Settings { system, point, ..d() })
        }
        Cmd::Leaf { common, system, perturbed, level } => {
            single(Command::Leaf, common, Settings { system, perturbed, level, ..d() })
        }
        Cmd::Run { file, format, only } => run(file, format, only),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
