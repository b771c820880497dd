//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use promo_bn::eval::{generate_synthetic, load_sales_csv, table3_report, write_sales_csv};
use promo_bn::inference::{
    analytic_mean, analytic_state_mean, discrete_posterior_exact, driver_node, equation_mean_ci,
    forward_sample, posterior, target_equation, DensityMethod, Evidence, DEFAULT_BANDWIDTH,
    DEFAULT_ITERATIONS, DEFAULT_KDE_SAMPLES,
};
use promo_bn::{parse_network, Network, PosteriorReport};

use crate::service;

/// Exit code for bad arguments or invalid input files.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for failures unrelated to the input (I/O on output, server).
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "promo-bn",
    version,
    about = "Promotional sales forecasting with a hybrid Bayesian network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Convolution,
    Kde,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a network file.
    Validate { file: PathBuf },
    /// Forward-sample the equation node.
    Sample {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        n: usize,
        #[arg(long, default_value_t = service::DEFAULT_SEED)]
        seed: u64,
        /// Observed state, `node=state`; repeatable.
        #[arg(long = "clamp", value_name = "NODE=STATE")]
        clamp: Vec<String>,
    },
    /// Posterior of the discrete nodes given an observed sales value.
    Posterior {
        file: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        sales: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Convolution)]
        method: MethodArg,
        /// Kernel bandwidth for the kde method.
        #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
        bandwidth: f64,
        /// Seed for the kde method.
        #[arg(long, default_value_t = service::DEFAULT_SEED)]
        seed: u64,
        /// Samples per driver state for the kde method.
        #[arg(long, default_value_t = DEFAULT_KDE_SAMPLES)]
        samples: usize,
        /// Additional observed state, `node=state`; repeatable.
        #[arg(long = "clamp", value_name = "NODE=STATE")]
        clamp: Vec<String>,
    },
    /// Compare retailer and network forecasts against weekly sales.
    Report {
        data: PathBuf,
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        n: usize,
        #[arg(long, default_value_t = service::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = "table3.json")]
        out: PathBuf,
    },
    /// Write the synthetic weekly sales data set as CSV.
    Synth {
        #[arg(long, default_value_t = service::DEFAULT_SEED)]
        seed: u64,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP what-if service.
    Serve {
        /// Defaults to $PROMO_BN_PORT, then 8080.
        #[arg(long)]
        port: Option<u16>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn input(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: message.into(),
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_network(path: &Path) -> Result<Network, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    parse_network(&text).map_err(|e| input(format!("{}:{e}", path.display())))
}

fn parse_clamps(clamps: &[String]) -> Result<Evidence, Failure> {
    clamps.iter().try_fold(Evidence::none(), |ev, c| {
        let (node, state) = c
            .split_once('=')
            .ok_or_else(|| input(format!("--clamp `{c}` must have the form node=state")))?;
        Ok(ev.with_state(node.trim(), state.trim()))
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| failure(format!("writing output: {e}")))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Validate { file } => {
            let net = load_network(&file)?;
            let order = net.topological_order().map_err(|e| input(e.to_string()))?;
            emit(
                out,
                &format!("OK\n{} nodes: {}\n", net.len(), order.join(" -> ")),
            )
        }
        Command::Sample {
            file,
            n,
            seed,
            clamp,
        } => {
            let net = load_network(&file)?;
            let evidence = parse_clamps(&clamp)?;
            evidence.check(&net).map_err(|e| input(e.to_string()))?;
            discrete_posterior_exact(&net, &evidence).map_err(|e| input(e.to_string()))?;
            let run = forward_sample(&net, n, seed, &evidence).map_err(|e| input(e.to_string()))?;
            let mut text = String::new();
            let _ = writeln!(text, "node: {}", run.target);
            let _ = writeln!(text, "n: {n}");
            let _ = writeln!(text, "seed: {seed}");
            for (node, state) in &evidence.discrete {
                let _ = writeln!(text, "clamp: {node}={state}");
            }
            let _ = writeln!(text, "mean: {:.4}", run.mean());
            if n >= 2 {
                let ci = equation_mean_ci(&run).map_err(|e| input(e.to_string()))?;
                let _ = writeln!(text, "sd: {:.4}", ci.sd);
                let _ = writeln!(text, "95% CI: ({:.4}, {:.4})", ci.lower, ci.upper);
            }
            if let Some(m) = analytic_for(&net, &evidence) {
                let _ = writeln!(text, "analytic mean: {m:.4}");
            }
            emit(out, &text)
        }
        Command::Posterior {
            file,
            sales,
            method,
            bandwidth,
            seed,
            samples,
            clamp,
        } => {
            let net = load_network(&file)?;
            let target = target_equation(&net)
                .map_err(|e| input(e.to_string()))?
                .id
                .clone();
            if !(bandwidth > 0.0) || samples == 0 {
                return Err(input("--bandwidth and --samples must be positive"));
            }
            let density = match method {
                MethodArg::Convolution => DensityMethod::convolution(),
                MethodArg::Kde => DensityMethod::Kde { samples, seed },
            };
            let evidence = parse_clamps(&clamp)?.with_value(target.clone(), sales, bandwidth);
            let report = posterior(&net, &evidence, density).map_err(|e| input(e.to_string()))?;
            emit(
                out,
                &render_posterior(&report, &format!("{target} = {sales}")),
            )
        }
        Command::Report {
            data,
            file,
            n,
            seed,
            out: path,
        } => {
            let net = load_network(&file)?;
            let records =
                load_sales_csv(&data).map_err(|e| input(format!("{}: {e}", data.display())))?;
            let report =
                table3_report(&records, &net, n, seed).map_err(|e| input(e.to_string()))?;
            let json = report.to_json().map_err(|e| failure(e.to_string()))?;
            std::fs::write(&path, json).map_err(|e| failure(format!("{}: {e}", path.display())))?;
            emit(out, &report.render())?;
            emit(out, &format!("wrote {}\n", path.display()))
        }
        Command::Synth { seed, out: path } => {
            let records = generate_synthetic(seed);
            match path {
                Some(p) => {
                    let file = std::fs::File::create(&p)
                        .map_err(|e| failure(format!("{}: {e}", p.display())))?;
                    write_sales_csv(file, &records).map_err(|e| failure(e.to_string()))?;
                    emit(
                        out,
                        &format!("wrote {} records to {}\n", records.len(), p.display()),
                    )
                }
                None => write_sales_csv(out, &records).map_err(|e| failure(e.to_string())),
            }
        }
        Command::Serve { port } => {
            let port = match port {
                Some(p) => p,
                None => service::port_from_env().map_err(input)?,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| failure(e.to_string()))?;
            runtime
                .block_on(service::serve(port))
                .map_err(|e| failure(format!("port {port}: {e}")))
        }
    }
}

/// Closed-form mean when nothing or only the driver node is observed.
fn analytic_for(net: &Network, evidence: &Evidence) -> Option<f64> {
    if evidence.is_empty() {
        return analytic_mean(net).ok();
    }
    let driver = driver_node(net).ok()?;
    match (evidence.discrete.len(), evidence.discrete.get(&driver.id)) {
        (1, Some(state)) => analytic_state_mean(net, state).ok(),
        _ => None,
    }
}

pub fn render_posterior(report: &PosteriorReport, given: &str) -> String {
    let mut text = format!("posterior given {given} ({})\n", report.method);
    for node in &report.nodes {
        let _ = writeln!(text, "{}", node.node);
        let width = node.states.iter().map(String::len).max().unwrap_or(0);
        for (s, p) in node.states.iter().zip(&node.probabilities) {
            let _ = writeln!(text, "  {s:<width$}  {p:.4}");
        }
    }
    text
}
