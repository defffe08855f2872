//! `qnreg` command-line tool. Numeric parameters come from a TOML config
//! file; flags only name inputs and outputs. Every command writes a
//! `manifest.json` into its output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qnreg::evalkit::{self, write_json, MetricsReport};
use qnreg::suite::{self, Manifest, SuiteOptions};
use qnreg::synth::{self, PhantomSpec};
use qnreg::volume::{read_field, read_mask, read_scalar, write_mask, write_scalar};
use qnreg::{flow, solver, DispMap, Error, LandmarkSet, Mode, SolverConfig};

#[derive(Parser)]
#[command(name = "qnreg", version, about = "Atlas registration with quasi-normal reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Affine pre-alignment of MOVING to FIXED.
    Affine {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deformable registration of a subject to the atlas.
    Register {
        #[arg(long)]
        moving: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        /// Lesion mask in subject space (needed by cfm and joint).
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_parser = ["plain", "cfm", "joint"])]
        mode: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate phantom cases, either from a spec file or as a random batch.
    Synth(SynthArgs),
    /// Resample an image (or mask) through a map.
    Warp {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat the input as a binary mask.
        #[arg(long)]
        mask: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Compose two maps: OUTER ∘ INNER.
    Compose {
        #[arg(long)]
        outer: PathBuf,
        #[arg(long)]
        inner: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jacobian determinant of a map.
    Jacobian {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Deformation difference against a gold-standard map, per region.
    EvalDef {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Tumour mask in the maps' (atlas) space.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value_t = evalkit::DEFAULT_THRESHOLD_MM)]
        threshold_mm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Landmark errors between two landmark files.
    EvalLmk {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Register every case in plain, cfm and joint mode and score them.
    Suite {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Only write metrics, not maps and images.
        #[arg(long)]
        metrics_only: bool,
    },
}

#[derive(Args)]
#[group(required = true, multiple = true)]
struct SynthArgs {
    /// Phantom spec (JSON); with --seed/--count it is the batch base.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, requires = "count")]
    seed: Option<u64>,
    #[arg(long, requires = "seed")]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_) | Error::Metric(_) | Error::Generation(_) => 2,
        Error::Format { .. } | Error::Io { .. } => 3,
        Error::Numeric(_) | Error::Solver { .. } => 4,
    }
}

fn mkdir(dir: &Path) -> qnreg::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Directory a file output lands in (its manifest goes there too).
fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_config(path: Option<&Path>) -> qnreg::Result<SolverConfig> {
    path.map_or_else(|| Ok(SolverConfig::default()), SolverConfig::read)
}

fn read_map(path: &Path) -> qnreg::Result<DispMap<f64>> {
    Ok(DispMap::new(read_field(path)?))
}

#[derive(Serialize)]
struct AffineOut<'a> {
    transform: &'a solver::AffineTransform,
    energy: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct JacobianSummary {
    min: f64,
    max: f64,
    mean: f64,
    non_positive: usize,
    count: usize,
}

fn run(cli: Cli, argv: Vec<String>) -> qnreg::Result<()> {
    let mut manifest = Manifest::new(argv.clone());
    match cli.command {
        Command::Affine {
            moving,
            fixed,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            manifest = manifest.with_config(&cfg);
            manifest.add_input("moving", &moving)?;
            manifest.add_input("fixed", &fixed)?;
            let fixed_img = read_scalar::<f64>(&fixed)?;
            let res = solver::affine_register(&read_scalar::<f64>(&moving)?, &fixed_img, &cfg)?;
            mkdir(&out)?;
            write_scalar(&res.resampled, out.join("resampled.vol"))?;
            qnreg::volume::write_field(res.transform.to_map::<f64>(fixed_img.grid()).displacement(), out.join("affine.fld"))?;
            write_json(
                &AffineOut {
                    transform: &res.transform,
                    energy: res.energy,
                    iterations: res.trace.len(),
                },
                out.join("affine.json"),
            )?;
            manifest.write(&out)
        }
        Command::Register {
            moving,
            atlas,
            mask,
            mode,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = m.parse::<Mode>()?;
            }
            manifest = manifest.with_config(&cfg);
            manifest.add_input("moving", &moving)?;
            manifest.add_input("atlas", &atlas)?;
            let lesion = match &mask {
                Some(p) => {
                    manifest.add_input("mask", p)?;
                    Some(read_mask(p)?)
                }
                None => None,
            };
            let start = Instant::now();
            let res = solver::register(
                &read_scalar::<f64>(&moving)?,
                &read_scalar::<f64>(&atlas)?,
                lesion.as_ref(),
                &cfg,
            )?;
            res.write(&out, &cfg, Some(start.elapsed().as_secs_f64()))?;
            eprintln!(
                "{}: total {:.6e} (reg {:.6e}, sim {:.6e}), min det {:.4}",
                cfg.mode, res.final_total, res.final_reg, res.final_sim, res.min_jac_det
            );
            manifest.write(&out)
        }
        Command::Synth(args) => {
            mkdir(&args.out)?;
            let base = match &args.spec {
                Some(p) => {
                    manifest.add_input("spec", p)?;
                    let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
                    serde_json::from_str::<PhantomSpec>(&text).map_err(|e| Error::Format {
                        path: p.clone(),
                        msg: e.to_string(),
                    })?
                }
                None => PhantomSpec::default(),
            };
            match (args.seed, args.count) {
                (Some(seed), Some(count)) => {
                    suite::generate_batch(&base, seed, count, &args.out)?;
                }
                _ => synth::write_case(&synth::make_phantom(&base)?, &args.out)?,
            }
            manifest.write(&args.out)
        }
        Command::Warp {
            image,
            map,
            out,
            mask,
            threshold,
        } => {
            manifest.add_input("image", &image)?;
            manifest.add_input("map", &map)?;
            let phi = read_map(&map)?;
            let dir = parent_dir(&out);
            mkdir(&dir)?;
            if mask {
                write_mask(&flow::warp_mask(&read_mask(&image)?, &phi, threshold)?, &out)?;
            } else {
                write_scalar(&flow::warp_image(&read_scalar::<f64>(&image)?, &phi), &out)?;
            }
            manifest.write(&dir)
        }
        Command::Compose { outer, inner, out } => {
            manifest.add_input("outer", &outer)?;
            manifest.add_input("inner", &inner)?;
            let c = flow::compose(&read_map(&outer)?, &read_map(&inner)?);
            let dir = parent_dir(&out);
            mkdir(&dir)?;
            qnreg::volume::write_field(c.displacement(), &out)?;
            manifest.write(&dir)
        }
        Command::Jacobian { map, out, summary } => {
            manifest.add_input("map", &map)?;
            let det = flow::jacobian_det(&read_map(&map)?);
            let d = det.data();
            let s = JacobianSummary {
                min: d.iter().cloned().fold(f64::INFINITY, f64::min),
                max: d.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean: d.iter().sum::<f64>() / d.len() as f64,
                non_positive: d.iter().filter(|&&x| x <= 0.0).count(),
                count: d.len(),
            };
            let dir = parent_dir(&out);
            mkdir(&dir)?;
            mkdir(&parent_dir(&summary))?;
            write_scalar(&det, &out)?;
            write_json(&s, &summary)?;
            manifest.write(&dir)
        }
        Command::EvalDef {
            map,
            gold,
            mask,
            threshold_mm,
            out,
        } => {
            let mut report = MetricsReport::default();
            for (k, p) in [("map", &map), ("gold", &gold), ("mask", &mask)] {
                report.inputs.insert(k.into(), evalkit::hash_input(p)?);
                manifest.add_input(k, p)?;
            }
            let part = evalkit::partition_regions(&read_mask(&mask)?, threshold_mm)?;
            report.regions = Some(evalkit::deformation_difference(&read_map(&map)?, &read_map(&gold)?, &part)?);
            let dir = parent_dir(&out);
            mkdir(&dir)?;
            report.write(&out)?;
            manifest.write(&dir)
        }
        Command::EvalLmk { pred, reference, out } => {
            let mut report = MetricsReport::default();
            for (k, p) in [("pred", &pred), ("ref", &reference)] {
                report.inputs.insert(k.into(), evalkit::hash_input(p)?);
                manifest.add_input(k, p)?;
            }
            report.landmarks = Some(evalkit::landmark_error(&LandmarkSet::read(&pred)?, &LandmarkSet::read(&reference)?)?);
            let dir = parent_dir(&out);
            mkdir(&dir)?;
            report.write(&out)?;
            manifest.write(&dir)
        }
        Command::Suite {
            cases,
            config,
            out,
            metrics_only,
        } => {
            let cfg = load_config(config.as_deref())?;
            let opts = SuiteOptions {
                write_results: !metrics_only,
                ..Default::default()
            };
            let report = suite::run_suite(&cases, &cfg, &opts, &out, argv)?;
            for (mode, agg) in &report.modes {
                let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
                eprintln!(
                    "{mode:>8}: tumour {} near {} far {} (median mm over {} cases)",
                    f(agg.tumor.median_of_means),
                    f(agg.near.median_of_means),
                    f(agg.far.median_of_means),
                    report.cases.len()
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Solver { trace, .. } = &e {
                for line in trace.iter().rev().take(10).rev() {
                    eprintln!("  {line}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
