use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use poolattn::attention::Fault;
use poolattn::costmodel::{cost_dense, cost_single_window, cost_two_level, peak_bytes, DENSE, SLIDING, TWO_LEVEL};
use poolattn::{layer_output, LayerKind, LayerParams};
use poolattn_harness::report::{self, ForwardRow};
use poolattn_harness::synth::{matrix_digest, synth_batch};
use poolattn_harness::{bench, verify, Command, HarnessError, Result, RunConfig};

/// Two-level pooled attention: verification and benchmarks.
///
/// Exit status: 0 on success, 1 when a verification fails, 2 on usage errors.
#[derive(Debug, Parser)]
#[command(name = "poolattn", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// `key = value` config file; an empty file selects every default.
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "none", hide = true)]
    fault: FaultArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    VisibleOffByOne,
    DropSoftmaxCentering,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::None => Fault::None,
            FaultArg::VisibleOffByOne => Fault::VisibleSegmentsOffByOne,
            FaultArg::DropSoftmaxCentering => Fault::DropSoftmaxCentering,
        }
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|source| HarnessError::Io { path: p.to_path_buf(), source })?),
        None => Box::new(io::stdout().lock()),
    })
}

/// Returns whether the command's checks passed.
fn run(cli: &Cli) -> Result<bool> {
    let text = std::fs::read_to_string(&cli.config).map_err(|source| HarnessError::Io { path: cli.config.clone(), source })?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Forward => {
            let c = cfg.layer_config();
            let params = LayerParams::init(&c, cfg.seed.wrapping_add(1));
            let mut rows = Vec::new();
            for &n in &cfg.n_list {
                let batch = synth_batch(n, cfg.d_model, cfg.seed, cfg.global_count)?;
                let y = layer_output(&batch, &params, &c, LayerKind::TwoLevel)?;
                rows.push(ForwardRow {
                    n,
                    d_model: cfg.d_model,
                    output_sha256: matrix_digest(&y),
                    output_max_abs: y.max_abs(),
                    score_evals: cost_two_level(n, c.w1, c.w2, c.kappa, c.xi, cfg.global_count).score_evals,
                });
            }
            report::write_forward(sink(out)?, &rows)?;
            Ok(true)
        }
        Command::OracleDiff => {
            let r = verify::run_oracle_diff(&cfg, cli.fault.into())?;
            report::write_oracle_diff(sink(out)?, &r)?;
            eprintln!("oracle-diff: worst relative error {:e} (threshold {:e})", r.worst(), r.threshold);
            Ok(r.passed())
        }
        Command::Gradcheck => {
            let r = verify::run_gradcheck(&cfg, cli.fault.into())?;
            report::write_gradcheck(sink(out)?, &r)?;
            eprintln!("gradcheck: worst relative error {:e} (threshold {:e})", r.worst(), r.threshold);
            Ok(r.passed())
        }
        Command::Bench => {
            let r = bench::run_bench(&cfg)?;
            for s in &r.skipped {
                eprintln!("skipped {} at n={}: {}", s.pattern, s.n, s.reason);
            }
            report::write_bench(sink(out)?, &r.records)?;
            Ok(true)
        }
        Command::Cost => {
            let (d, h, g) = (cfg.d_model, cfg.n_heads, cfg.global_count);
            let mut rows = Vec::new();
            for &n in &cfg.n_list {
                rows.push((cost_dense(n), peak_bytes(DENSE, n, d, h, n, n, 1)));
                for w in [cfg.w1, cfg.w2] {
                    rows.push((cost_single_window(n, w, g), peak_bytes(SLIDING, n, d, h, w, w, 1)));
                }
                rows.push((
                    cost_two_level(n, cfg.w1, cfg.w2, cfg.kappa, cfg.xi, g),
                    peak_bytes(TWO_LEVEL, n, d, h, cfg.w1, cfg.w2, cfg.xi),
                ));
            }
            report::write_cost(sink(out)?, &rows)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: verification failed", cli.command);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
