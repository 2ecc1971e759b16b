//! Command-line front end for the enhance-then-detect pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srdet::det::{detect, train_detector, DetectorNet};
use srdet::error::Error;
use srdet::io::{
    annotate, load_dataset, make_synthetic_dataset, read_image, write_dataset, write_image,
    PipelineConfig, Sample, CLASS_NAMES,
};
use srdet::pipeline::{
    evaluate_detector, load_detector, load_generator, run_ablation, run_pipeline,
    scale_annotations, train_sr,
};
use srdet::sr::save_params;
use srdet::tensor::Tensor;
use srdet::train::write_loss_history;
use srdet::det::Annotation;

#[derive(Parser)]
#[command(name = "srdet", about = "Super-resolution enhancement and two-stage object detection")]
struct Cli {
    /// Pipeline configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every stage seed (data, SR, detector) from one value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Domain {
    Hr,
    Lr,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test splits under a directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the super-resolution generator on a dataset split.
    TrainSr {
        /// Directory holding a manifest.tsv (as written by gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Generator checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-step loss CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Train the detector on a dataset split.
    TrainDet {
        #[arg(long)]
        data: PathBuf,
        /// Detector checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Which image domain to train on.
        #[arg(long, value_enum, default_value = "hr")]
        domain: Domain,
    },
    /// Upscale one PPM image with a trained generator.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect objects in one PPM image and write an annotated copy.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Annotated PPM output; omit to only print detections.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enhance one LR image, then detect on the result.
    Pipeline {
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long)]
        det_ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Annotated SR output image.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Raw (unannotated) SR output image.
        #[arg(long)]
        sr_out: Option<PathBuf>,
    },
    /// Evaluate a detector checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "hr")]
        domain: Domain,
    },
    /// Run the full four-arm ablation study.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> srdet::Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.data.seed = s;
        cfg.sr.seed = s.wrapping_add(1);
        cfg.detector.seed = s.wrapping_add(2);
    }
    Ok(cfg)
}

fn domain_pairs(
    samples: &[Sample],
    domain: Domain,
    scale: usize,
) -> Vec<(Tensor, Vec<Annotation>)> {
    samples
        .iter()
        .map(|s| match domain {
            Domain::Hr => (s.hr.clone(), s.annotations.clone()),
            Domain::Lr => (
                s.lr.clone(),
                scale_annotations(&s.annotations, 1.0 / scale as f64),
            ),
        })
        .collect()
}

fn print_detections(dets: &[srdet::det::Detection]) {
    for d in dets {
        println!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.class_id, d.score, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max
        );
    }
}

fn run(cli: Cli) -> srdet::Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::GenData { out } => {
            let train = make_synthetic_dataset(&cfg.train_dataset_config())?;
            let test = make_synthetic_dataset(&cfg.test_dataset_config())?;
            write_dataset(&out.join("train"), &train)?;
            write_dataset(&out.join("test"), &test)?;
            println!(
                "wrote {} train and {} test samples to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
        Command::TrainSr { data, out, history } => {
            let samples = load_dataset(&data.join("manifest.tsv"))?;
            let (gen, reports) = train_sr(&cfg, &samples)?;
            save_params(&out, &gen.spec_echo(), &gen.params)?;
            if let Some(h) = history {
                write_loss_history(&h, &reports)?;
            }
            let last = reports.last().expect("at least one step");
            println!(
                "trained {} steps, final loss {:.6}, checkpoint {}",
                reports.len(),
                last.l_total,
                out.display()
            );
        }
        Command::TrainDet { data, out, domain } => {
            let samples = load_dataset(&data.join("manifest.tsv"))?;
            let pairs = domain_pairs(&samples, domain, cfg.data.scale_factor);
            let mut net = DetectorNet::build(cfg.detector_spec(), cfg.detector.seed)?;
            let history = train_detector(&mut net, &pairs, &cfg.det_train_config())?;
            save_params(&out, &net.spec_echo(), &net.params)?;
            println!(
                "trained {} epochs, final loss {:.6}, checkpoint {}",
                history.len(),
                history.last().expect("at least one epoch"),
                out.display()
            );
        }
        Command::Enhance { ckpt, input, out } => {
            let gen = load_generator(&cfg, &ckpt)?;
            let sr = gen.infer(&read_image(&input)?)?;
            write_image(&out, &sr)?;
            println!("wrote {}", out.display());
        }
        Command::Detect { ckpt, input, out } => {
            let net = load_detector(&cfg, &ckpt)?;
            let image = read_image(&input)?;
            let dets = detect(&net, &image, &cfg.detect_config())?;
            print_detections(&dets);
            if let Some(out) = out {
                write_image(&out, &annotate(&image, &dets, &CLASS_NAMES)?)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Pipeline {
            gen_ckpt,
            det_ckpt,
            input,
            out,
            sr_out,
        } => {
            let lr = read_image(&input)?;
            let result = run_pipeline(&cfg, &gen_ckpt, &det_ckpt, &lr)?;
            print_detections(&result.detections);
            if let Some(p) = sr_out {
                write_image(&p, &result.sr_image)?;
                println!("wrote {}", p.display());
            }
            if let Some(p) = out {
                let annotated = annotate(&result.sr_image, &result.detections, &CLASS_NAMES)?;
                write_image(&p, &annotated)?;
                println!("wrote {}", p.display());
            }
        }
        Command::Eval { ckpt, data, domain } => {
            let net = load_detector(&cfg, &ckpt)?;
            let samples = load_dataset(&data.join("manifest.tsv"))?;
            let pairs = domain_pairs(&samples, domain, cfg.data.scale_factor);
            let r = evaluate_detector(&net, &cfg, &pairs)?;
            println!(
                "accuracy {:.1}% precision {:.1}% recall {:.1}% mean_ap {:.1}%",
                100.0 * r.prf.accuracy,
                100.0 * r.prf.precision,
                100.0 * r.prf.recall,
                100.0 * r.mean_ap
            );
        }
        Command::Ablate { out } => {
            let outcome = run_ablation(&cfg, &out)?;
            print!("{}", outcome.table);
            match outcome.mean_psnr_db {
                Some(db) => println!("mean sr psnr: {db:.2} dB"),
                None => println!("mean sr psnr: lossless"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage problems exit 1 via clap's error path
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Numeric { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
