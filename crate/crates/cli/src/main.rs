//! `specrecon`: reconstruct audio from magnitude spectrograms.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors and
//! 3 for numerical failures. Log verbosity follows `SPECRECON_LOG`
//! (`error`, `warn`, `info`, `debug`, `trace`; default `warn`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use specrecon::bench::{Method, DEFAULT_REPEATS};
use specrecon::spectral::WindowKind;

#[derive(Parser)]
#[command(name = "specrecon", version, about = "Phase reconstruction from magnitude spectrograms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gl,
    Neural,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gl => Method::GriffinLim400,
            MethodArg::Neural => Method::Neural,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Blackman,
    Hann,
    Rectangular,
}

impl From<WindowArg> for WindowKind {
    fn from(w: WindowArg) -> Self {
        match w {
            WindowArg::Blackman => WindowKind::Blackman,
            WindowArg::Hann => WindowKind::Hann,
            WindowArg::Rectangular => WindowKind::Rectangular,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a waveform from a WAV file's magnitude or a magnitude file.
    Reconstruct {
        #[arg(long, value_enum, default_value = "gl")]
        method: MethodArg,
        /// Griffin-Lim iterations (gl, default 400) or warm-start
        /// iterations (neural, default taken from the model).
        #[arg(long)]
        iters: Option<usize>,
        /// Model bundle written by `train`; required for `--method neural`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Train a generator/discriminator pair on the files of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss CSV path (default: `<out>.losses.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Time the reconstruction methods on synthetic signals.
    Bench {
        /// Signal lengths in seconds, at most 6.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        lengths: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "gl,neural")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        csv: PathBuf,
        /// Model for the neural method; an untrained default model otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the magnitude spectrogram of a WAV file.
    Stft {
        #[arg(long, default_value_t = 1024)]
        win_len: usize,
        #[arg(long, default_value_t = 512)]
        hop: usize,
        /// Defaults to the window length.
        #[arg(long)]
        fft_size: Option<usize>,
        #[arg(long, value_enum, default_value = "blackman")]
        window: WindowArg,
        input: PathBuf,
        output: PathBuf,
    },
    /// Synthesize a magnitude file with zero phase.
    Istft { input: PathBuf, output: PathBuf },
}

fn run(command: Command) -> specrecon::Result<String> {
    match command {
        Command::Reconstruct {
            method,
            iters,
            model,
            seed,
            input,
            output,
        } => commands::reconstruct(&commands::ReconstructArgs {
            method: method.into(),
            iters,
            model,
            seed,
            input,
            output,
        }),
        Command::Train {
            manifest,
            config,
            out,
            log,
        } => commands::train_model(&commands::TrainArgs {
            manifest,
            config,
            out,
            log,
        }),
        Command::Bench {
            lengths,
            methods,
            csv,
            model,
            repeats,
            seed,
        } => commands::bench(&commands::BenchArgs {
            lengths,
            methods: methods.into_iter().map(Method::from).collect(),
            csv,
            model,
            repeats,
            seed,
        }),
        Command::Stft {
            win_len,
            hop,
            fft_size,
            window,
            input,
            output,
        } => commands::stft(&commands::StftArgs {
            input,
            output,
            win_len,
            hop,
            fft_size,
            window: window.into(),
        }),
        Command::Istft { input, output } => commands::istft(&input, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("SPECRECON_LOG", "warn")
            .write_style("SPECRECON_LOG_STYLE"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
