//! Command-line surface: `run` a stream against prototypes, `generate`
//! synthetic inputs, `ablate` the mechanism grid, and `inspect-cache` a
//! finished report.

use clap::{Args, Parser, Subcommand};
use cplnc::harness::{generate_stream, run_ablation, SyntheticSpec};
use cplnc::io::{
    self, config_template, load_config, load_prototypes, load_stream, parse_override, StreamMeta,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cplnc", about = "Streaming test-time adaptation over embedding streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable, rightmost wins).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<cplnc::HyperParams, io::IoError> {
        let overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        load_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct SpecArgs {
    /// Number of classes.
    #[arg(long, default_value_t = SyntheticSpec::default().n_classes)]
    classes: usize,

    /// Embedding dimension.
    #[arg(long, default_value_t = SyntheticSpec::default().dim)]
    dim: usize,

    /// Zipf exponent of the label distribution (0 = uniform).
    #[arg(long, default_value_t = SyntheticSpec::default().zipf_exponent)]
    zipf: f64,

    /// Per-coordinate Gaussian noise around class means.
    #[arg(long, default_value_t = SyntheticSpec::default().intra_class_noise)]
    noise: f64,

    /// Per-coordinate Gaussian jitter of the augmented views.
    #[arg(long, default_value_t = SyntheticSpec::default().view_jitter)]
    jitter: f64,

    /// Stream length.
    #[arg(long, default_value_t = SyntheticSpec::default().n_samples)]
    samples: usize,

    /// Per-coordinate Gaussian offset of initial textual prototypes.
    #[arg(long, default_value_t = SyntheticSpec::default().textual_offset_noise)]
    offset_noise: f64,

    /// Views per record (first view is the unjittered sample).
    #[arg(long, default_value_t = SyntheticSpec::default().n_views)]
    views: usize,

    /// Minimum pairwise angle between class means, degrees.
    #[arg(long, default_value_t = SyntheticSpec::default().min_angle_deg)]
    min_angle: f64,

    /// Generation seed.
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
}

impl SpecArgs {
    fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_classes: self.classes,
            dim: self.dim,
            zipf_exponent: self.zipf,
            intra_class_noise: self.noise,
            view_jitter: self.jitter,
            n_samples: self.samples,
            textual_offset_noise: self.offset_noise,
            n_views: self.views,
            min_angle_deg: self.min_angle,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Adapt over a stream file and write a session report.
    Run {
        /// Stream file (line-delimited records).
        #[arg(long)]
        stream: PathBuf,

        /// Initial textual prototype file.
        #[arg(long)]
        protos: PathBuf,

        /// Report output path.
        #[arg(long)]
        out: PathBuf,

        /// Include one record per sample in the report.
        #[arg(long)]
        per_sample: bool,

        /// Include per-sample loss breakdowns (implies per-sample records).
        #[arg(long)]
        trace_loss: bool,

        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Generate a synthetic long-tail stream and its prototype files.
    Generate {
        /// Output directory for stream.jsonl, prototypes.jsonl, means.jsonl.
        #[arg(long)]
        out_dir: PathBuf,

        /// Also write a fully commented default config file here.
        #[arg(long)]
        config_out: Option<PathBuf>,

        #[command(flatten)]
        spec: SpecArgs,
    },

    /// Run the four-arm mechanism ablation over paired seeds.
    Ablate {
        /// Number of paired seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,

        /// Ablation report output path.
        #[arg(long)]
        out: PathBuf,

        #[command(flatten)]
        spec: SpecArgs,

        #[command(flatten)]
        config: ConfigArgs,
    },

    /// Print the capacity / dead-class table from a session report.
    InspectCache {
        /// Session report path.
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), String> {
    match command {
        Command::Run {
            stream,
            protos,
            out,
            per_sample,
            trace_loss,
            config,
        } => {
            let hp = config.load().map_err(|e| e.to_string())?;
            let stream_digest = io::digest_file(&stream).map_err(|e| e.to_string())?;
            let protos_digest = io::digest_file(&protos).map_err(|e| e.to_string())?;
            let (records, meta) = load_stream(&stream).map_err(|e| e.to_string())?;
            let prototypes = load_prototypes(&protos).map_err(|e| e.to_string())?;
            if !prototypes.is_empty() && prototypes[0].dim() != meta.dim {
                return Err(format!(
                    "dimension mismatch: stream d={}, prototypes d={}",
                    meta.dim,
                    prototypes[0].dim()
                ));
            }
            if prototypes.len() != meta.n_classes {
                return Err(format!(
                    "class count mismatch: stream C={}, prototypes C={}",
                    meta.n_classes,
                    prototypes.len()
                ));
            }
            let outcome =
                cplnc::run_session(&records, &hp, prototypes).map_err(|e| e.to_string())?;
            let bytes = io::render_report(
                &meta,
                &hp,
                &stream_digest,
                &protos_digest,
                &outcome,
                per_sample || trace_loss,
                trace_loss,
            );
            io::write_report(&out, &bytes).map_err(|e| e.to_string())?;
            println!(
                "samples: {}  accuracy: {}  dead classes: {}  report: {}",
                outcome.n_samples,
                outcome
                    .accuracy
                    .map_or("-".to_string(), |a| format!("{a:.4}")),
                outcome.dead_class_count,
                out.display()
            );
            Ok(())
        }
        Command::Generate {
            out_dir,
            config_out,
            spec,
        } => {
            let spec = spec.to_spec();
            let generated = generate_stream(&spec).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            let meta = StreamMeta::new(spec.dim, spec.n_classes, spec.n_views);
            let stream_path = out_dir.join("stream.jsonl");
            let protos_path = out_dir.join("prototypes.jsonl");
            let means_path = out_dir.join("means.jsonl");
            io::write_stream(&stream_path, &meta, &generated.records)
                .map_err(|e| e.to_string())?;
            io::write_prototypes(&protos_path, &generated.textual_prototypes)
                .map_err(|e| e.to_string())?;
            io::write_prototypes(&means_path, &generated.class_means)
                .map_err(|e| e.to_string())?;
            if let Some(config_path) = config_out {
                std::fs::write(&config_path, config_template()).map_err(|e| e.to_string())?;
            }
            println!(
                "wrote {} samples to {}",
                generated.records.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Ablate {
            seeds,
            out,
            spec,
            config,
        } => {
            let hp = config.load().map_err(|e| e.to_string())?;
            let spec = spec.to_spec();
            let report = run_ablation(&spec, &hp, seeds).map_err(|e| e.to_string())?;
            let bytes = io::render_ablation_report(&spec, &report);
            io::write_report(&out, &bytes).map_err(|e| e.to_string())?;
            for arm in &report.arms {
                println!(
                    "{:>10}: accuracy {:.4} ± {:.4}  tail retention {:.3}  tail accuracy {:.4}  dead {:.2}",
                    arm.arm.name(),
                    arm.mean_accuracy,
                    arm.stdev_accuracy,
                    arm.mean_tail_retention,
                    arm.mean_tail_accuracy,
                    arm.mean_dead_classes,
                );
            }
            Ok(())
        }
        Command::InspectCache { report } => {
            let lines = io::load_report_lines(&report).map_err(|e| e.to_string())?;
            print!("{}", io::render_cache_table(&lines));
            Ok(())
        }
    }
}
