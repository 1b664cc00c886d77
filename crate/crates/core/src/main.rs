use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qflow::emulator::noise::NoiseModel;
use qflow::emulator::{run_shots, Program};
use qflow::experiments::{
    merge_rows, rows_from_csv, rows_to_csv, rows_to_json, run_experiment, Basis, Experiment, MsdConfig, ReportRow,
    RunSettings, RusConfig, Style,
};
use qflow::passes::FlattenConfig;
use qflow::pipeline::{compile, CompileError, CompileOptions, PassName};
use qflow::predication::emit_guarded;
use qflow::qccd::{TransportMode, TrapLayout};
use qflow::regalloc::DEFAULT_REGISTERS;
use qflow::textir::parse;

#[derive(Parser)]
#[command(name = "qflow", version, about = "Compile and emulate hybrid quantum programs for a linear ion trap")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a textual IR file and print the guarded or executable form.
    Compile {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "exec")]
        emit: Emit,
        #[command(flatten)]
        opts: CompileArgs,
    },
    /// Compile and run a program, printing one output record per shot.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        opts: CompileArgs,
    },
    /// Build, compile and run one of the benchmark programs.
    Experiment {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        limit: u32,
        #[arg(long, default_value = "X")]
        basis: Basis,
        #[arg(long, default_value = "loop")]
        style: Style,
        #[arg(long, default_value_t = 1000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Print the compiled program instead of running it.
        #[arg(long, value_enum)]
        emit: Option<Emit>,
        /// Write the report row here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: CompileArgs,
    },
    /// Merge report CSVs into one summary table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Guarded,
    Exec,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Msd,
    Rus,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long, default_value_t = DEFAULT_REGISTERS)]
    registers: usize,
    /// Trap layout as JSON: {"slots": n, "zones": [[a, b], ...]}.
    #[arg(long)]
    trap: Option<PathBuf>,
    #[arg(long, default_value = "conditional")]
    transport_mode: TransportMode,
    #[arg(long, value_delimiter = ',', default_value = "fold,flatten,peephole")]
    passes: Vec<PassName>,
    #[arg(long, default_value_t = FlattenConfig::default().max_inline_depth)]
    max_inline_depth: usize,
    #[arg(long, default_value_t = FlattenConfig::default().max_unroll)]
    max_unroll: usize,
}

#[derive(Args)]
struct NoiseArgs {
    /// Noise parameters as JSON; missing fields are zero.
    #[arg(long, conflicts_with = "noiseless")]
    noise: Option<PathBuf>,
    #[arg(long)]
    noiseless: bool,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl CompileArgs {
    fn options(&self) -> Result<CompileOptions, String> {
        let trap = match &self.trap {
            Some(p) => {
                let t: TrapLayout = serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?;
                Some(t)
            }
            None => None,
        };
        Ok(CompileOptions {
            passes: self.passes.clone(),
            flatten: FlattenConfig {
                max_inline_depth: self.max_inline_depth,
                max_unroll: self.max_unroll,
            },
            registers: self.registers,
            trap,
            mode: self.transport_mode,
        })
    }
}

impl NoiseArgs {
    /// Without a file or `--noiseless`, the synthetic device-like model is used.
    fn model(&self) -> Result<NoiseModel, String> {
        if self.noiseless {
            return Ok(NoiseModel::noiseless());
        }
        match &self.noise {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
            None => Ok(NoiseModel::h1e_like()),
        }
    }
}

fn compile_file(file: &Path, opts: &CompileArgs) -> Result<qflow::pipeline::Compiled, String> {
    let src = read(file)?;
    let module = parse(&src).map_err(|e| format!("{}:{e}", file.display()))?;
    let compiled = compile(&module, &opts.options()?).map_err(|e| match e {
        CompileError::Validation(d) => format!("{}: validation failed\n{d}", file.display()),
        e => format!("{}: {e}", file.display()),
    })?;
    for w in compiled.warnings.0.iter() {
        eprintln!("{w}");
    }
    Ok(compiled)
}

fn exec_json(c: &qflow::pipeline::Compiled) -> String {
    let v = serde_json::json!({
        "cfg_block_count": c.block_count(),
        "colors": c.colors_used(),
        "planned_transport": c.exec.planned_transport(),
        "program": c.exec,
    });
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

fn real_main(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Compile { file, emit, opts } => {
            let c = compile_file(&file, &opts)?;
            match emit {
                Emit::Guarded => print!("{}", emit_guarded(&c.allocated)),
                Emit::Exec => print!("{}", exec_json(&c)),
            }
        }
        Cmd::Run {
            file,
            shots,
            seed,
            noise,
            jobs,
            opts,
        } => {
            let c = compile_file(&file, &opts)?;
            let res = run_shots(Program::Exec(&c.exec), &noise.model()?, shots, seed, jobs).map_err(|e| e.to_string())?;
            let mut out = String::new();
            for r in &res {
                out += &r.outputs.join(" ");
                out.push('\n');
            }
            print!("{out}");
        }
        Cmd::Experiment {
            kind,
            limit,
            basis,
            style,
            shots,
            seed,
            noise,
            jobs,
            emit,
            out,
            opts,
        } => {
            let e = match kind {
                Kind::Msd => Experiment::Msd(MsdConfig { limit, basis }),
                Kind::Rus => Experiment::Rus(RusConfig { limit, basis, style }),
            };
            let copts = opts.options()?;
            if let Some(emit) = emit {
                let c = compile(&e.module(), &copts).map_err(|e| e.to_string())?;
                let text = match emit {
                    Emit::Guarded => emit_guarded(&c.allocated),
                    Emit::Exec => exec_json(&c),
                };
                return write_or_print(out.as_deref(), &text);
            }
            let settings = RunSettings {
                shots,
                seed,
                jobs,
                noise: noise.model()?,
                compile: copts,
            };
            let run = run_experiment(e, &settings).map_err(|e| e.to_string())?;
            let csv = rows_to_csv(&[ReportRow::from(&run.report)]).map_err(|e| e.to_string())?;
            write_or_print(out.as_deref(), &csv)?;
        }
        Cmd::Report { inputs, out, json } => {
            let mut rows = Vec::new();
            for p in &inputs {
                rows.extend(rows_from_csv(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?);
            }
            let rows = merge_rows(rows);
            write_or_print(out.as_deref(), &rows_to_csv(&rows).map_err(|e| e.to_string())?)?;
            if let Some(j) = json {
                fs::write(&j, rows_to_json(&rows) + "\n").map_err(|e| format!("{}: {e}", j.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
