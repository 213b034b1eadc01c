use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use groundloc::dataset::{Dataset, DatasetSpec};
use groundloc::evaluation::{
    csr_diagnostic, footprint_area, global_evaluation, inlier_ratio, local_success_rate, records_to_csv,
    success_fraction, ExpectedCells, RecordBundle,
};
use groundloc::imaging::load_image;
use groundloc::optimizer::{run_optimization, Budget, LocalOptions, ModelEvaluator, ParameterSpace, TimeMode};
use groundloc::prediction::prediction_report;
use groundloc::sweep::{sweep_nr, GlobalSetup, SweepMode};
use groundloc::{build_map, load_map, localize, save_map, Error, ParameterConfig, Pose2D, Prior, SuccessThresholds, TextureKind};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "groundloc", version, about = "Ground-texture localization and success-rate prediction")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Parameter config (TOML). Defaults to the variant's defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Variant::Identity)]
    variant: Variant,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Identity,
    Nearest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Texture {
    Speckle,
    Crack,
    Blob,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Shortcut,
    Rescan,
}

#[derive(Clone, Copy, ValueEnum)]
enum Timing {
    Work,
    Wall,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world with reference, query and test images.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Dataset spec (TOML); flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        world_seed: Option<u64>,
        #[arg(long, value_enum)]
        texture: Option<Texture>,
        /// Square world side in pixels.
        #[arg(long)]
        world_size: Option<usize>,
        #[arg(long)]
        num_queries: Option<usize>,
        #[arg(long)]
        num_test_sets: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Build a reference map from a dataset's reference images.
    BuildMap {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one query image against a map.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ground truth `x,y,theta_rad` for a success verdict.
        #[arg(long, value_parser = parse_pose)]
        truth: Option<Pose2D>,
        /// Pose estimate `x,y,theta_rad` restricting identity matching.
        #[arg(long, value_parser = parse_pose)]
        prior: Option<Pose2D>,
        #[arg(long, default_value_t = 400.0)]
        prior_radius: f64,
        /// Result JSON (default: next to the image).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global success rate of all dataset queries against the full map.
    EvalGlobal {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Prebuilt map; built from the dataset when absent.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Per-attempt CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inlier and outlier evaluation on the test image sets.
    EvalLocal {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Record bundle JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the records as CSV.
        #[arg(long)]
        records_csv: Option<PathBuf>,
    },
    /// Predict the global success rate from a record bundle.
    Predict {
        #[arg(long)]
        records: PathBuf,
        /// Override the expected number of occupied cells.
        #[arg(long)]
        expected_v: Option<f64>,
        /// Report text (default: next to the bundle).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global, local and predicted success over a list of n_r values.
    SweepNr {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated n_r values (default: the variant's sweep grid).
        #[arg(long, value_delimiter = ',')]
        nrs: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = Mode::Shortcut)]
        mode: Mode,
        /// n_r evaluated in shortcut mode (default: the config's).
        #[arg(long)]
        anchor: Option<usize>,
        /// Skip the global column.
        #[arg(long)]
        no_global: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Model-driven parameter search.
    Optimize {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "budget_secs")]
        budget_iters: Option<usize>,
        #[arg(long)]
        budget_secs: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        min_local_iters: usize,
        #[arg(long, default_value_t = 200)]
        max_local_iters: usize,
        #[arg(long, value_enum, default_value_t = Timing::Work)]
        timing: Timing,
        /// Optimization log CSV.
        #[arg(long)]
        out: PathBuf,
        /// Best configuration TOML (default: next to the log).
        #[arg(long)]
        best: Option<PathBuf>,
    },
    /// Compare outlier cell counts against the uniform-placement prediction.
    CsrReport {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pose(s: &str) -> Result<Pose2D, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, t] => Ok(Pose2D::new(x, y, t)),
        _ => Err("expected x,y,theta_rad".into()),
    }
}

/// Exit code per error family; 2 is clap's usage error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::UnsupportedFormat { .. } | Error::Parse(_) | Error::VersionMismatch(_) => 4,
        Error::FingerprintMismatch { .. } | Error::ConfigMismatch(_) | Error::KindMismatch(_) => 5,
        Error::InvalidParameter(_) | Error::Domain(_) => 6,
        Error::EmptyInput(_) | Error::EmptyRecords(_) | Error::EmptyIndex | Error::MapEmpty | Error::EmptyHistogram => 7,
        Error::OutOfWorld | Error::DegenerateInput(_) | Error::TooFewMatches(_) => 8,
    }
}

type Res<T> = Result<T, Error>;

fn read(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.into(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

fn load_config(args: &ConfigArgs) -> Res<ParameterConfig> {
    let cfg = match &args.config {
        Some(p) => ParameterConfig::from_toml(&read(p)?)?,
        None => match args.variant {
            Variant::Identity => ParameterConfig::identity_default(),
            Variant::Nearest => ParameterConfig::nearest_default(),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cells_for(ds: &Dataset) -> ExpectedCells {
    ExpectedCells::FromOutlierEvaluation {
        num_reference_images: ds.references.len(),
        map_area: footprint_area(&ds.references),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Written next to every primary output.
#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: String,
    argv: Vec<String>,
    config_path: Option<PathBuf>,
    config: Option<ParameterConfig>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    threads: usize,
    started_unix_ms: u128,
    finished_unix_ms: u128,
}

struct Run {
    manifest: RunManifest,
    path: PathBuf,
}

impl Run {
    fn new(command: &str, manifest_path: PathBuf) -> Self {
        Self {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                argv: std::env::args().collect(),
                config_path: None,
                config: None,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                threads: rayon::current_num_threads(),
                started_unix_ms: unix_ms(),
                finished_unix_ms: 0,
            },
            path: manifest_path,
        }
    }

    fn config(&mut self, args: &ConfigArgs, cfg: &ParameterConfig) {
        self.manifest.config_path = args.config.clone();
        self.manifest.config = Some(cfg.clone());
        self.manifest.seeds.insert("config".into(), cfg.seed);
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.into());
    }

    fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.into());
    }

    fn finish(mut self) -> Res<()> {
        self.manifest.finished_unix_ms = unix_ms();
        write(&self.path, &serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"))
    }
}

fn texture(t: Texture) -> TextureKind {
    match t {
        Texture::Speckle => TextureKind::Speckle,
        Texture::Crack => TextureKind::Crack,
        Texture::Blob => TextureKind::Blob,
    }
}

fn run(command: Command) -> Res<()> {
    match command {
        Command::Generate {
            out,
            spec,
            seed,
            world_seed,
            texture: tex,
            world_size,
            num_queries,
            num_test_sets,
            noise,
        } => {
            let mut run = Run::new("generate", out.join("manifest.json"));
            let mut s = match &spec {
                Some(p) => {
                    run.input(p);
                    DatasetSpec::from_toml(&read(p)?)?
                }
                None => DatasetSpec::default(),
            };
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = world_seed {
                s.world.seed = v;
            }
            if let Some(t) = tex {
                s.world.kind = texture(t);
            }
            if let Some(v) = world_size {
                s.world.width = v;
                s.world.height = v;
            }
            if let Some(v) = num_queries {
                s.num_queries = v;
            }
            if let Some(v) = num_test_sets {
                s.num_test_sets = v;
            }
            if let Some(v) = noise {
                s.query_noise = v;
                s.reference_noise = v;
            }
            let ds = Dataset::generate(&s)?;
            ds.save(&out)?;
            run.manifest.seeds.insert("dataset".into(), s.seed);
            run.manifest.seeds.insert("world".into(), s.world.seed);
            run.output(&out);
            println!(
                "{} references, {} queries, {} test sets -> {}",
                ds.references.len(),
                ds.queries.len(),
                ds.test_sets.len(),
                out.display()
            );
            run.finish()
        }
        Command::BuildMap { dataset, cfg, out } => {
            let config = load_config(&cfg)?;
            let mut run = Run::new("build-map", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.input(&dataset);
            let ds = Dataset::load(&dataset)?;
            let map = build_map(&ds.references, &config)?;
            save_map(&map, &out)?;
            run.output(&out);
            println!(
                "{} reference images, {} features -> {}",
                map.images().len(),
                map.num_features(),
                out.display()
            );
            run.finish()
        }
        Command::Localize {
            map,
            image,
            cfg,
            truth,
            prior,
            prior_radius,
            out,
        } => {
            let config = load_config(&cfg)?;
            let out = out.unwrap_or_else(|| sibling(&image, ".localization.json"));
            let mut run = Run::new("localize", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.input(&map);
            run.input(&image);
            let m = load_map(&map, Some(&config))?;
            let img = load_image(&image)?;
            let prior = prior.map(|center| Prior {
                center,
                radius: prior_radius,
            });
            let mut r = localize(&img, &m, &config, prior)?;
            let th = SuccessThresholds::default();
            let success = truth.map(|t| {
                r.annotate(&t, &th);
                r.is_success(&t, &th)
            });
            #[derive(Serialize)]
            struct Output<'a> {
                estimated_pose: Option<Pose2D>,
                success: Option<bool>,
                stats: &'a groundloc::localization::LocalizationStats,
            }
            let text = serde_json::to_string_pretty(&Output {
                estimated_pose: r.estimated_pose,
                success,
                stats: &r.stats,
            })
            .expect("serializes");
            write(&out, &text)?;
            run.output(&out);
            println!("{text}");
            run.finish()
        }
        Command::EvalGlobal { dataset, cfg, map, out } => {
            let config = load_config(&cfg)?;
            let mut run = Run::new("eval-global", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.input(&dataset);
            let ds = Dataset::load(&dataset)?;
            let m = match &map {
                Some(p) => {
                    run.input(p);
                    load_map(p, Some(&config))?
                }
                None => build_map(&ds.references, &config)?,
            };
            let attempts = global_evaluation(&ds.queries, &m, &config)?;
            let mut csv = String::from(
                "query,truth_x,truth_y,truth_theta,est_x,est_y,est_theta,success,num_query_features,num_matches,num_occupied_cells,peak_votes\n",
            );
            for (i, a) in attempts.iter().enumerate() {
                let est = a
                    .estimate
                    .map(|p| format!("{},{},{}", p.x, p.y, p.theta))
                    .unwrap_or_else(|| ",,".into());
                csv.push_str(&format!(
                    "{i},{},{},{},{est},{},{},{},{},{}\n",
                    a.truth.x,
                    a.truth.y,
                    a.truth.theta,
                    a.success,
                    a.stats.num_query_features,
                    a.stats.num_matches,
                    a.stats.num_occupied_cells,
                    a.stats.peak_votes
                ));
            }
            write(&out, &csv)?;
            run.output(&out);
            println!("global success rate {:.4} over {} queries", success_fraction(&attempts), attempts.len());
            run.finish()
        }
        Command::EvalLocal {
            dataset,
            cfg,
            out,
            records_csv,
        } => {
            let config = load_config(&cfg)?;
            let mut run = Run::new("eval-local", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.input(&dataset);
            let ds = Dataset::load(&dataset)?;
            let bundle = RecordBundle::evaluate(&ds.test_sets, &config, cells_for(&ds))?;
            write(&out, &bundle.to_json())?;
            run.output(&out);
            if let Some(p) = &records_csv {
                let mut all = bundle.inlier.clone();
                all.extend(bundle.outlier.iter().cloned());
                write(p, &records_to_csv(&all))?;
                run.output(p);
            }
            println!(
                "local success rate {:.4}, inlier ratio {:.4}, {} inlier / {} outlier records",
                local_success_rate(&bundle.inlier, &bundle.outlier),
                inlier_ratio(&bundle.inlier, &bundle.outlier),
                bundle.inlier.len(),
                bundle.outlier.len()
            );
            run.finish()
        }
        Command::Predict { records, expected_v, out } => {
            let out = out.unwrap_or_else(|| sibling(&records, ".prediction.txt"));
            let mut run = Run::new("predict", sibling(&out, ".manifest.json"));
            run.input(&records);
            let mut bundle = RecordBundle::from_json(&read(&records)?)?;
            if let Some(v) = expected_v {
                bundle.expected_cells = ExpectedCells::Fixed { expected_v: v };
            }
            run.manifest.config = Some(bundle.config.clone());
            let report = prediction_report(&bundle.model_inputs()?);
            write(&out, &report.to_text())?;
            run.output(&out);
            println!("{}", report.success_probability);
            run.finish()
        }
        Command::SweepNr {
            dataset,
            cfg,
            nrs,
            mode,
            anchor,
            no_global,
            out,
        } => {
            let mut config = load_config(&cfg)?;
            if let Some(a) = anchor {
                config.reference_feature_cap = a;
            }
            let mut run = Run::new("sweep-nr", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.input(&dataset);
            let nrs = nrs.unwrap_or_else(|| match config.matching {
                groundloc::MatchingVariant::Identity => (1..=20).map(|k| 50 * k).collect(),
                groundloc::MatchingVariant::Nearest { .. } => (1..=20).map(|k| 5 * k).collect(),
            });
            let ds = Dataset::load(&dataset)?;
            let global = (!no_global).then_some(GlobalSetup {
                references: &ds.references,
                queries: &ds.queries,
            });
            let mode = match mode {
                Mode::Shortcut => SweepMode::Shortcut,
                Mode::Rescan => SweepMode::Rescan,
            };
            let r = sweep_nr(&ds.test_sets, global, &config, &nrs, mode, cells_for(&ds))?;
            write(&out, &r.to_csv())?;
            run.output(&out);
            print!("{}", r.to_csv());
            println!("evaluation passes {}", r.evaluation_passes);
            if let (Some(mae), Some(rho)) = (r.mean_abs_error(), r.spearman()) {
                println!("mean |predicted - global| {mae:.4}, spearman {rho:.4}");
            }
            run.finish()
        }
        Command::Optimize {
            dataset,
            cfg,
            budget_iters,
            budget_secs,
            seed,
            min_local_iters,
            max_local_iters,
            timing,
            out,
            best,
        } => {
            let config = load_config(&cfg)?;
            let best = best.unwrap_or_else(|| sibling(&out, ".best.toml"));
            let mut run = Run::new("optimize", sibling(&out, ".manifest.json"));
            run.config(&cfg, &config);
            run.manifest.seeds.insert("optimizer".into(), seed);
            run.input(&dataset);
            let budget = match (budget_iters, budget_secs) {
                (_, Some(s)) => Budget::WallClock(Duration::from_secs(s)),
                (Some(n), None) => Budget::Iterations(n),
                (None, None) => Budget::Iterations(20),
            };
            let mut space = match config.matching {
                groundloc::MatchingVariant::Identity => ParameterSpace::identity_default(),
                groundloc::MatchingVariant::Nearest { .. } => ParameterSpace::nearest_default(),
            };
            space.base = config.clone();
            let ds = Dataset::load(&dataset)?;
            let time_mode = match timing {
                Timing::Work => TimeMode::Work,
                Timing::Wall => TimeMode::WallClock,
            };
            let evaluator = ModelEvaluator::new(ds.test_sets.clone(), cells_for(&ds), time_mode);
            let options = LocalOptions {
                min_iterations: min_local_iters,
                max_iterations: max_local_iters.max(min_local_iters),
                nr_shortcut: true,
            };
            let result = run_optimization(&space, &evaluator, budget, seed, &options)?;
            write(&out, &result.log_csv())?;
            write(&best, &result.best.config.to_toml())?;
            run.output(&out);
            run.output(&best);
            println!(
                "{} evaluations, best predicted success {:.4} (eval time {:.1}) -> {}",
                result.log.len(),
                result.best.predicted_success,
                result.best.eval_time,
                best.display()
            );
            run.finish()
        }
        Command::CsrReport { records, out } => {
            let mut run = Run::new("csr-report", sibling(&out, ".manifest.json"));
            run.input(&records);
            let bundle = RecordBundle::from_json(&read(&records)?)?;
            run.manifest.config = Some(bundle.config.clone());
            let d = csr_diagnostic(&bundle.outlier)?;
            write(&out, &d.to_csv())?;
            run.output(&out);
            println!("total variation {:.4}", d.total_variation);
            run.finish()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
