use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ofa_core::adversary::WorkloadSpec;
use ofa_core::engine::RngSeed;
use ofa_core::harness::{
    instance_to_toml, load_instance, load_sequence, replay, run_experiment, ExperimentConfig,
    PolicyConfig,
};
use ofa_core::opt_oracle::offline_opt;
use ofa_core::parallel::Execution;
use ofa_core::{OfaError, Result};

#[derive(Parser)]
#[command(name = "ofa", version, about = "Online facility assignment benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSV reports.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run trials on the current thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Run one policy on a stored instance and sequence and print the event log.
    Replay {
        instance: PathBuf,
        sequence: PathBuf,
        /// e.g. `greedy`, `csvoronoi:alpha=1,smoothing=damped`, `bmcf:B=3,tau=2`
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write batch records here (BMCF only).
        #[arg(long)]
        batches: Option<PathBuf>,
    },
    /// Generate a workload and write `instance.toml` and `sequence.csv`.
    Gen(GenArgs),
    /// Print the offline optimum of a stored instance and sequence.
    Opt {
        instance: PathBuf,
        sequence: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadKind {
    UniformIid,
    ClusteredBursts,
    ZoneCollapse,
    OscillationTrap,
    BatchBoundaryTrap,
}

#[derive(Args)]
struct GenArgs {
    workload: WorkloadKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance file for uniform_iid and clustered_bursts.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 3)]
    centers: usize,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, default_value_t = 5)]
    burst_len: usize,
    #[arg(long, default_value_t = 12)]
    rows: u32,
    #[arg(long, default_value_t = 12)]
    cols: u32,
    #[arg(long, default_value_t = 4)]
    center_capacity: u32,
    #[arg(long, default_value_t = 6)]
    inner_count: u32,
    #[arg(long, default_value_t = 8)]
    far_offset: u32,
    #[arg(long, default_value_t = 10)]
    separation: u32,
    #[arg(long, default_value_t = 1)]
    pairs: u32,
    #[arg(long, default_value_t = 16)]
    delta: u32,
    #[arg(long, default_value_t = 2)]
    capacity: u32,
    #[arg(long)]
    offset: bool,
}

impl GenArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        let n = || {
            self.n
                .ok_or_else(|| OfaError::ConfigInvalid("--n is required for this workload".into()))
        };
        Ok(match self.workload {
            WorkloadKind::UniformIid => WorkloadSpec::UniformIid { n: n()? },
            WorkloadKind::ClusteredBursts => WorkloadSpec::ClusteredBursts {
                n: n()?,
                centers: self.centers,
                sigma: self.sigma,
                burst_len: self.burst_len,
            },
            WorkloadKind::ZoneCollapse => WorkloadSpec::ZoneCollapse {
                rows: self.rows,
                cols: self.cols,
                center_capacity: self.center_capacity,
                inner_count: self.inner_count,
                far_offset: self.far_offset,
            },
            WorkloadKind::OscillationTrap => WorkloadSpec::OscillationTrap {
                rows: self.rows,
                cols: self.cols,
                separation: self.separation,
                pairs: self.pairs,
            },
            WorkloadKind::BatchBoundaryTrap => WorkloadSpec::BatchBoundaryTrap {
                rows: self.rows,
                cols: self.cols,
                delta: self.delta,
                capacity: self.capacity,
                offset: self.offset,
            },
        })
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| OfaError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            sequential,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let mode = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let result = run_experiment(&cfg, base, mode)?;
            let dir = out
                .or_else(|| cfg.output.dir.as_ref().map(|d| base.join(d)))
                .unwrap_or_else(|| PathBuf::from("out").join(cfg.label()));
            for path in result.write_to(&dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Replay {
            instance,
            sequence,
            policy,
            seed,
            batches,
        } => {
            let g = load_instance(&instance)?;
            let seq = load_sequence(&sequence)?;
            let policy = PolicyConfig::parse_spec(&policy)?;
            let out = replay(&g, &seq, &policy, RngSeed(seed))?;
            print!("{}", out.run.log.to_csv_string());
            eprintln!(
                "policy={} alg_cost={} opt_cost={}",
                out.policy,
                out.run.log.total_cost(),
                out.opt_cost
            );
            if let Some(path) = batches {
                let records = out.run.batches.unwrap_or_default();
                let mut w = csv::Writer::from_writer(Vec::new());
                let io = |e: csv::Error| OfaError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                };
                w.write_record(ofa_core::bmcf::BatchRecord::CSV_HEADER)
                    .map_err(io)?;
                for r in &records {
                    w.write_record(r.csv_fields()).map_err(io)?;
                }
                let body =
                    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
                write(&path, &body)?;
            }
        }
        Command::Gen(args) => {
            let spec = args.spec()?;
            let shared = args.instance.as_deref().map(load_instance).transpose()?;
            let (g, seq) = spec.generate(shared.as_ref(), RngSeed(args.seed))?;
            fs::create_dir_all(&args.out).map_err(|e| OfaError::Io {
                path: args.out.display().to_string(),
                message: e.to_string(),
            })?;
            let inst_path = args.out.join("instance.toml");
            let seq_path = args.out.join("sequence.csv");
            write(&inst_path, &instance_to_toml(&g))?;
            write(&seq_path, &seq.to_csv())?;
            println!("wrote {}", inst_path.display());
            println!("wrote {}", seq_path.display());
        }
        Command::Opt { instance, sequence } => {
            let g = load_instance(&instance)?;
            let seq = load_sequence(&sequence)?;
            let opt = offline_opt(&g, &seq)?;
            println!("opt_cost={}", opt.total_cost);
            for (i, f) in opt.assignment.iter().enumerate() {
                println!("{},{}", i, f);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
