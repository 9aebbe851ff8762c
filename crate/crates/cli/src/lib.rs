//! Command-line driver: environment generation, simulation runs and
//! experiment suites, with their manifests, stats files and rasters.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use idla_core::experiments::{
    abelian_exact_check, annulus_absorption_check, distance_comparison_check,
    exit_law_check, hit_probability_check, lb_check, map_replicas, random_hit_config,
    shape_experiment, staged_vs_direct, wlb_check, Coupling, Shells, WlbSpec,
};
use idla_core::metric::{
    check_continuity, check_volume_growth, volume_growth_range, ContinuitySpec, VolumeGrowthSpec,
};
use idla_core::raster::render;
use idla_core::records::{Record, SimulationSummary, StageRow, StatsHeader, StatsWriter};
use idla_core::{generate, idla, staged_construction, Aggregate, Environment, PauseRegion, RootSeed, RunManifest};

pub const SUITES: [&str; 11] = [
    "shape",
    "abelian",
    "exit",
    "hit",
    "annulus",
    "wlb",
    "lb",
    "distance",
    "continuity",
    "volume",
    "staged",
];

#[derive(Debug, Parser)]
#[command(name = "idla", version, about = "Internal DLA on lattices and percolation clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an environment and write its manifest and cluster raster.
    Percolate(Flags),
    /// Grow aggregates and write rasters, coordinate lists and stats.
    Simulate(Flags),
    /// Run experiment suites and write their stats rows.
    Experiment(Flags),
    /// Re-run the configuration stored in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Output directory; defaults to the one in the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Half-width L of the box [-L, L]^d.
    #[arg(long, default_value_t = 40)]
    pub extent: i32,
    /// Edge retention probability.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
    /// Comma-separated suite names.
    #[arg(long, value_delimiter = ',')]
    pub suite: Vec<String>,
    #[arg(long)]
    pub staged: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Percolate,
    Simulate,
    Experiment,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Percolate => "percolate",
            CommandKind::Simulate => "simulate",
            CommandKind::Experiment => "experiment",
        }
    }
}

/// Everything a run depends on; written to the manifest before it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub dim: usize,
    pub extent: i32,
    pub p: f64,
    #[serde(with = "idla_core::environment::wide_u64")]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub replicas: u64,
    #[serde(default)]
    pub suites: Vec<String>,
    #[serde(default)]
    pub staged: bool,
    #[serde(skip)]
    pub workers: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn from_flags(command: CommandKind, f: Flags) -> Self {
        Self {
            command,
            dim: f.dim,
            extent: f.extent,
            p: f.p,
            seed: f.seed,
            particles: f.particles,
            radius: f.radius,
            replicas: f.replicas,
            suites: f.suite,
            staged: f.staged,
            workers: f.workers,
            out: f.out,
        }
    }

    /// Reject configurations that cannot run.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.dim == 0 || self.dim > 8 {
            return usage(format!("--dim must be in 1..=8, got {}", self.dim));
        }
        if self.extent < 1 {
            return usage(format!("--extent must be positive, got {}", self.extent));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return usage(format!("--p must lie in (0, 1], got {}", self.p));
        }
        if self.replicas == 0 {
            return usage("--replicas must be positive".into());
        }
        if self.particles == Some(0) {
            return usage("--particles must be positive".into());
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return usage(format!("--radius must be positive, got {r}"));
            }
        }
        if self.workers == Some(0) {
            return usage("--workers must be positive".into());
        }
        match self.command {
            CommandKind::Simulate => {
                if self.staged && self.radius.is_none() {
                    return usage("--staged needs --radius".into());
                }
                if self.particles.is_none() && self.radius.is_none() {
                    return usage("simulate needs --particles or --radius".into());
                }
            }
            CommandKind::Experiment => {
                if self.suites.is_empty() {
                    return usage(format!("--suite is required; available: {}", SUITES.join(", ")));
                }
                if let Some(bad) = self.suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
                    return usage(format!(
                        "unknown suite {bad:?}; available: {}",
                        SUITES.join(", ")
                    ));
                }
            }
            CommandKind::Percolate => {}
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub run: RunConfig,
    pub environment: RunManifest,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Files written by a command.
#[derive(Debug, Default, Clone)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub stats: Option<PathBuf>,
    pub rasters: Vec<PathBuf>,
    pub coordinates: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<Artifacts, CliError> {
    let config = match cli.command {
        Command::Percolate(f) => RunConfig::from_flags(CommandKind::Percolate, f),
        Command::Simulate(f) => RunConfig::from_flags(CommandKind::Simulate, f),
        Command::Experiment(f) => RunConfig::from_flags(CommandKind::Experiment, f),
        Command::Rerun {
            manifest,
            out,
            workers,
        } => {
            let text = fs::read_to_string(&manifest)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", manifest.display())))?;
            let file: ManifestFile = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", manifest.display())))?;
            let mut config = file.run;
            if let Some(out) = out {
                config.out = out;
            }
            config.workers = workers;
            config
        }
    };
    execute(&config)
}

/// Validate, then run `config` on its own worker pool.
pub fn execute(config: &RunConfig) -> Result<Artifacts, CliError> {
    config.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match config.command {
        CommandKind::Percolate => cmd_percolate(config),
        CommandKind::Simulate => cmd_simulate(config),
        CommandKind::Experiment => cmd_experiment(config),
    })
    .map_err(CliError::Runtime)
}

fn prepare(config: &RunConfig) -> anyhow::Result<(Environment, PathBuf)> {
    let env = generate(config.dim, config.extent, config.p, config.seed)?;
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    let path = config.out.join("manifest.toml");
    let file = ManifestFile {
        run: config.clone(),
        environment: env.manifest(),
    };
    let text = format!(
        "# idla {} seed={}\n{}",
        idla_core::VERSION,
        config.seed,
        toml::to_string(&file).context("serializing manifest")?
    );
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok((env, path))
}

fn comment(config: &RunConfig, extra: &str) -> String {
    format!("idla {} seed={}{extra}", idla_core::VERSION, config.seed)
}

fn write_raster(path: &Path, env: &Environment, aggregate: Option<&Aggregate>, note: &str) -> anyhow::Result<()> {
    fs::write(path, render(env, aggregate).to_ppm(note))
        .with_context(|| format!("writing {}", path.display()))
}

fn stats_writer(config: &RunConfig) -> anyhow::Result<(StatsWriter<BufWriter<fs::File>>, PathBuf)> {
    let path = config.out.join("stats.jsonl");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let header = StatsHeader::new(config.seed, config.command.name());
    Ok((StatsWriter::new(BufWriter::new(file), &header)?, path))
}

pub fn cmd_percolate(config: &RunConfig) -> anyhow::Result<Artifacts> {
    let (env, manifest) = prepare(config)?;
    let raster = config.out.join("cluster.ppm");
    write_raster(&raster, &env, None, &comment(config, ""))?;
    Ok(Artifacts {
        manifest,
        rasters: vec![raster],
        ..Artifacts::default()
    })
}

struct Replica {
    aggregate: Aggregate,
    summary: SimulationSummary,
    stages: Vec<StageRow>,
    trace: Option<idla_core::StageTrace>,
}

pub fn cmd_simulate(config: &RunConfig) -> anyhow::Result<Artifacts> {
    let (env, manifest) = prepare(config)?;
    let o = env.origin();
    let particles = match (config.particles, config.radius) {
        (Some(k), _) if !config.staged => k,
        (_, Some(n)) => env.ball_count(o, n),
        _ => bail!("simulate needs --particles or --radius"),
    };
    if particles > env.cluster_size() {
        bail!(
            "{particles} particles exceed the cluster size {}",
            env.cluster_size()
        );
    }
    let shells = Shells::new(&env);
    let root = RootSeed(config.seed);
    let runs = map_replicas(config.replicas, |r| -> idla_core::Result<Replica> {
        let mut streams = root.replica(r);
        let (aggregate, paused, stages, trace) = if config.staged {
            let n = config.radius.expect("validated");
            let (agg, trace) = staged_construction(&env, n, &mut streams)?;
            let rows = trace.stages.iter().map(|s| StageRow::from_stage(r, s)).collect();
            (agg, 0, rows, Some(trace))
        } else {
            let (agg, ledger) = idla(&env, o, particles, None, &mut streams)?;
            (agg, ledger.len(), Vec::new(), None)
        };
        let summary = SimulationSummary {
            replica: r,
            staged: config.staged,
            released: particles,
            settled: aggregate.particles_settled(),
            paused,
            inradius: shells.inradius(&aggregate),
            outradius: aggregate.outradius(&env),
        };
        Ok(Replica {
            aggregate,
            summary,
            stages,
            trace,
        })
    });
    let (mut stats, stats_path) = stats_writer(config)?;
    let mut artifacts = Artifacts {
        manifest,
        stats: Some(stats_path),
        ..Artifacts::default()
    };
    for run in runs {
        let rep = run?;
        let r = rep.summary.replica;
        let stem = if config.replicas == 1 {
            "aggregate".to_string()
        } else {
            format!("aggregate-{r:04}")
        };
        let note = comment(config, &format!(" replica={r}"));
        let raster = config.out.join(format!("{stem}.ppm"));
        write_raster(&raster, &env, Some(&rep.aggregate), &note)?;
        let coords = config.out.join(format!("{stem}.txt"));
        write_coordinates(&coords, &env, &rep.aggregate, &note)?;
        artifacts.rasters.push(raster);
        artifacts.coordinates.push(coords);
        stats.write(&Record::Simulation(rep.summary))?;
        for row in rep.stages {
            stats.write(&Record::Stage(row))?;
        }
        if let Some(trace) = rep.trace {
            stats.write(&Record::StageTrace(trace))?;
        }
    }
    stats.finish()?;
    Ok(artifacts)
}

/// One vertex per line in settlement order, coordinates separated by spaces.
fn write_coordinates(path: &Path, env: &Environment, aggregate: &Aggregate, note: &str) -> anyhow::Result<()> {
    let mut text = format!("# {note}\n");
    for v in aggregate.vertices(env) {
        let line: Vec<String> = v.0.iter().map(i32::to_string).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_experiment(config: &RunConfig) -> anyhow::Result<Artifacts> {
    let (env, manifest) = prepare(config)?;
    let (mut stats, stats_path) = stats_writer(config)?;
    for (i, suite) in config.suites.iter().enumerate() {
        // Each suite gets its own seed so selections do not interact.
        let seed = RootSeed(config.seed).derive(i as u64).0;
        for record in run_suite(&env, config, suite, seed)? {
            stats.write(&record)?;
        }
    }
    stats.finish()?;
    Ok(Artifacts {
        manifest,
        stats: Some(stats_path),
        ..Artifacts::default()
    })
}

/// Records of one suite. `--radius` sets the scale and `--particles` the
/// particle or pair count where the suite has one.
pub fn run_suite(env: &Environment, config: &RunConfig, suite: &str, seed: u64) -> anyhow::Result<Vec<Record>> {
    let o = env.origin();
    let reps = config.replicas;
    let radius = |default: f64| config.radius.unwrap_or(default);
    let count = |default: usize| config.particles.unwrap_or(default);
    let records = match suite {
        "shape" => vec![Record::ShapeStats(shape_experiment(env, radius(20.0), reps, seed)?)],
        "abelian" => {
            let starts = vec![o; count(3)];
            let first = PauseRegion::ball(env, o, radius(1.5));
            vec![Record::Abelian(abelian_exact_check(env, &starts, &first)?)]
        }
        "exit" => {
            let set = env.ball_sites(o, radius(3.0));
            vec![Record::ExitLaw(exit_law_check(env, o, &set, reps, seed)?)]
        }
        "hit" => {
            let mut rng = RootSeed(seed).auxiliary(0x417);
            let c = random_hit_config(env, radius(3.0), &mut rng);
            let est = hit_probability_check(env, &c.ball, &c.target, c.x, c.t, reps, seed)?;
            vec![Record::LemmaEstimate(est)]
        }
        "annulus" => {
            let n = radius(8.0);
            let initial = env.ball_sites(o, n);
            let mut rng = RootSeed(seed).auxiliary(0xA77);
            let starts: Vec<_> = (0..count(4))
                .map(|_| *initial.choose(&mut rng).expect("origin is in the ball"))
                .collect();
            let est = annulus_absorption_check(env, n, &starts, &initial, reps, seed, 0.05, 0.5)?;
            vec![Record::LemmaEstimate(est)]
        }
        "wlb" => {
            let n = radius(8.0);
            let spec = WlbSpec {
                alphas: vec![0.9, 0.75, 0.5, 0.25, 0.1],
                radii: vec![n / 2.0, n],
                centers: 3,
                samples: reps,
                range: None,
                seed,
            };
            vec![Record::LemmaEstimate(wlb_check(env, n, &spec)?)]
        }
        "lb" => {
            let n = radius(16.0);
            let report = lb_check(env, &[n / 4.0, n / 2.0, n], reps, seed)?;
            report.rows.into_iter().map(Record::LemmaEstimate).collect()
        }
        "distance" => {
            let est = distance_comparison_check(env, radius(20.0), count(200), None, seed)?;
            vec![Record::LemmaEstimate(est)]
        }
        "continuity" => {
            let spec = ContinuitySpec::new(count(200), radius(10.0), seed);
            vec![Record::ConditionReport(check_continuity(env, &spec)?)]
        }
        "volume" => {
            let n = radius(20.0);
            let (lo, hi) = volume_growth_range(n, env.dim());
            let radii: Vec<f64> = [n / 4.0, n / 2.0, n]
                .into_iter()
                .filter(|r| (lo..=hi).contains(r))
                .collect();
            let spec = VolumeGrowthSpec::new(radii, 5, 10.0, seed);
            vec![Record::ConditionReport(check_volume_growth(env, n, &spec)?)]
        }
        "staged" => vec![Record::Occupation(staged_vs_direct(env, radius(10.0), reps, seed, Coupling::CommonStreams)?)],
        other => bail!("unknown suite {other:?}; available: {}", SUITES.join(", ")),
    };
    Ok(records)
}
