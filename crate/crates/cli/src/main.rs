use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use t3former_core::pipeline::{
    extract_descriptors, feature_grid, grid_search, kfold_cv, load_dataset, sweep_windows, synth_generate, train,
    write_dataset, write_descriptor_cache, DescriptorCache, ModelBundle, PipelineError, SynthSpec,
};
use t3former_core::spectral::SpectralError;
use t3former_core::stability::{run_campaign, CampaignSource, PerturbationSpec, StabilityError, StabilityMode};
use t3former_core::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "t3former", version, about = "Temporal graph classification from sliding-window descriptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute window descriptors and write them as CSV.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6.0)]
        delta: f64,
        #[arg(long, default_value_t = 4.0)]
        sigma: f64,
        #[arg(long, default_value_t = 4)]
        bins: usize,
    },
    /// Generate a planted-cycle dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a dataset and save the model with its metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model and write the attention report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write fused embeddings as CSV.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for metrics, loss and timing CSVs; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated accuracy over a grid of window lengths and strides.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturbation campaign against the descriptors.
    Stability {
        /// Dataset to perturb; random graphs are drawn when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        mode: StabilityMode,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numerical(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            e if e.is_numerical() => Self::Numerical(e.to_string()),
            e @ PipelineError::InvalidConfig(_) => Self::Usage(e.to_string()),
            e => Self::Data(e.to_string()),
        }
    }
}

impl From<StabilityError> for Failure {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Spectral(SpectralError::NonConvergence(_)) => Self::Numerical(e.to_string()),
            StabilityError::InvalidSpec(_) => Self::Usage(e.to_string()),
            e => Self::Data(e.to_string()),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::parse(&read(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Extract {
            data,
            out,
            delta,
            sigma,
            bins,
        } => {
            let dataset = load_dataset(&data)?;
            let config = RunConfig {
                delta,
                sigma,
                dos_bins: bins,
                ..RunConfig::default()
            };
            config.validate()?;
            let features = extract_descriptors(&dataset, &config, &feature_grid(&dataset))?;
            write_descriptor_cache(&out, &DescriptorCache::from_features(&config, &features))?;
            let windows: usize = features.iter().map(|f| f.num_windows()).sum();
            println!("{} graphs, {windows} windows -> {}", features.len(), out.display());
        }
        Command::Synth { spec, out, seed } => {
            let spec = SynthSpec::parse(&read(&spec)?).map_err(|e| Failure::Usage(e.to_string()))?;
            let dataset = synth_generate(&spec, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            write_dataset(&dataset, &out)?;
            println!("{} graphs -> {}", dataset.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let config = run_config(config.as_deref())?;
            let dataset = load_dataset(&data)?;
            let (bundle, metrics) = train(&dataset, &config)?;
            fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
            bundle.save(&out.join("model.json"))?;
            write(&out.join("metrics.csv"), &metrics.to_csv())?;
            write(&out.join("loss.csv"), &metrics.loss_csv())?;
            write(&out.join("timing.csv"), &metrics.timing_csv())?;
            println!("accuracy {:.4}", metrics.mean_accuracy);
        }
        Command::Eval {
            model,
            data,
            report,
            embeddings,
        } => {
            let bundle = ModelBundle::load(&model)?;
            let dataset = load_dataset(&data)?;
            let (eval, attention) = bundle.evaluate_dataset(&dataset)?;
            write(&report, &attention.to_csv())?;
            if let Some(path) = embeddings {
                let ids: Vec<usize> = (0..dataset.len()).collect();
                write(&path, &eval.embeddings_csv(&ids))?;
            }
            println!("accuracy {:.4}", eval.accuracy);
        }
        Command::Cv { data, config, out } => {
            let mut config = run_config(config.as_deref())?;
            let dataset = load_dataset(&data)?;
            if config.grid_search {
                let (best, _) = grid_search(&dataset, &config)?;
                eprintln!("grid search picked hidden_dim={} lr={} dropout={}", best.hidden_dim, best.lr, best.dropout);
                config = best;
            }
            let metrics = kfold_cv(&dataset, &config)?;
            match out {
                Some(dir) => {
                    write(&dir.join("metrics.csv"), &metrics.to_csv())?;
                    write(&dir.join("loss.csv"), &metrics.loss_csv())?;
                    write(&dir.join("timing.csv"), &metrics.timing_csv())?;
                    println!("accuracy {:.4} +- {:.4}", metrics.mean_accuracy, metrics.std_accuracy);
                }
                None => print!("{}", metrics.to_csv()),
            }
        }
        Command::Sweep {
            data,
            deltas,
            sigmas,
            config,
            out,
        } => {
            let config = run_config(config.as_deref())?;
            let dataset = load_dataset(&data)?;
            let sweep = sweep_windows(&dataset, &config, &deltas, &sigmas)?;
            emit(out.as_deref(), &sweep.to_csv())?;
        }
        Command::Stability {
            data,
            mode,
            trials,
            seed,
            eps,
            k_max,
            bins,
            out,
        } => {
            let mut spec = match mode {
                StabilityMode::Topo => PerturbationSpec::topo(eps, trials, seed),
                StabilityMode::Spectral => PerturbationSpec::spectral(k_max, trials, seed),
            };
            spec.dos_bins = bins;
            let dataset = data.as_deref().map(load_dataset).transpose()?;
            let source = match &dataset {
                Some(ds) => CampaignSource::Graphs(&ds.graphs),
                None => match mode {
                    StabilityMode::Topo => CampaignSource::Random { n_min: 10, n_max: 40, p: 0.2 },
                    StabilityMode::Spectral => CampaignSource::Random { n_min: 20, n_max: 60, p: 0.2 },
                },
            };
            let report = run_campaign(source, &spec)?;
            emit(out.as_deref(), &report.to_csv())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
