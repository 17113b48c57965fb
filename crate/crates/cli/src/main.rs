mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmwave::cloud::{load_cloud, PointCloud};
use mmwave::evaluation::{derive_seed, metrics, realize_scene, run_experiment, splitmix64};
use mmwave::pipeline::{self, Estimator, SearchMode, SrpcParams};
use mmwave::simulator::{simulate_frame, NoiseSpec, RawDataCube};
use mmwave::{dsp, export, Error};

use config::{CloudFormat, RunConfig};

#[derive(Parser)]
#[command(name = "mmwave", version, about = "FMCW mmWave radar simulation, point-cloud reconstruction and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON). Built-in baseline when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the simulated SNR (dB).
    #[arg(long, global = true, value_name = "DB", allow_negative_numbers = true)]
    snr: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one raw-data frame: cube.mmw, ground_truth.ply and effective_config.json.
    Simulate,
    /// Reconstruct a point cloud from a cube file.
    Reconstruct(ReconstructArgs),
    /// Compare a detected cloud against ground truth and print metrics JSON.
    Evaluate(EvaluateArgs),
    /// Run the configured experiment sweep: report.json, report.csv and table.csv.
    Sweep(SweepArgs),
    /// Write the configured scene as a ground-truth PLY (scene.ply).
    SynthScene,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Cube file written by `simulate`.
    cube: PathBuf,
    /// Receiver layout of the cube (defaults to `radar.layout`).
    #[arg(long)]
    layout: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    dpc: Option<u8>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    search: Option<Search>,
    /// Enable super-resolution resampling.
    #[arg(long)]
    srpc: bool,
    /// SRPC power scale; implies --srpc.
    #[arg(long)]
    alpha: Option<f64>,
    /// Also write range_doppler.pgm and angle_spectrum.pgm.
    #[arg(long)]
    emit_heatmaps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Fft,
    Conv,
    Mvdr,
    Music,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    #[value(name = "1d")]
    OneD,
    #[value(name = "2d")]
    TwoD,
    Subgrid,
    Full,
}

#[derive(Args)]
struct EvaluateArgs {
    detected: PathBuf,
    truth: PathBuf,
    /// Closeness distance (m).
    #[arg(long = "d-close", visible_alias = "d")]
    d_close: Option<f64>,
    /// Voxel edge (m).
    #[arg(long)]
    voxel: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Override `eval.repeats`.
    #[arg(long)]
    repeats: Option<usize>,
}

enum Failure {
    Config(String),
    Io(String),
    Partial(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Partial(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Partial(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::CorruptCube(_) | Error::Parse { .. } | Error::CloudParse(_) | Error::Csv(_) => {
                Failure::Io(msg)
            }
            Error::InvalidChirp(_)
            | Error::InvalidLayout(_)
            | Error::InvalidParam(_)
            | Error::Unsupported(_)
            | Error::UnknownGenerator(_)
            | Error::Json(_) => Failure::Config(msg),
            _ => Failure::Other(msg),
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Other(e.to_string()))?;
    }
    let cfg = load_config(&cli.global)?;
    let out = cli.global.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match cli.cmd {
        Command::Simulate => simulate(&cfg, &out),
        Command::Reconstruct(a) => reconstruct(&cfg, &out, &a),
        Command::Evaluate(a) => evaluate(&cfg, cli.global.out.as_deref(), &a),
        Command::Sweep(a) => sweep(&cfg, &out, &a),
        Command::SynthScene => synth(&cfg, &out),
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(s) = g.snr {
        cfg.noise.snr_db = Some(s);
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

/// Frame seed shared with the sweep runner: the first repeat of the first scene.
fn frame_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, 0, 0)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> mmwave::Result<()>) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w)?;
    w.flush().map_err(io_err(path))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let seed = frame_seed(cfg);
    let scene = realize_scene(&cfg.scene.source, seed, cfg.scene.velocity)?;
    let layout = cfg.layout()?;
    let noise = NoiseSpec { snr_db: cfg.noise.snr_db, ..Default::default() };
    let cube = simulate_frame(&scene, &cfg.radar.chirp, &layout, &noise, seed)?;
    create_dir(out)?;
    write_file(&out.join("cube.mmw"), |w| cube.write(w))?;
    write_file(&out.join("ground_truth.ply"), |w| scene.ground_truth(&cfg.radar.chirp).write_ply(w))?;
    write_file(&out.join("effective_config.json"), |w| Ok(w.write_all(cfg.to_json().as_bytes())?))?;
    println!(
        "simulated {} x {} x {} cube of {} scene points into {}",
        cube.n_rx,
        cube.n_chirps,
        cube.n_samples,
        scene.len(),
        out.display()
    );
    Ok(())
}

fn reconstruct(cfg: &RunConfig, out: &Path, a: &ReconstructArgs) -> Result<(), Failure> {
    let layout_name = a.layout.clone().unwrap_or_else(|| cfg.radar.layout.clone());
    let layout = mmwave::radar::AntennaLayout::preset(&layout_name)?;
    let cube = RawDataCube::load(&a.cube, layout)?;

    let mut opts = cfg.pipeline.clone();
    if let Some(d) = a.dpc {
        opts.dpc = d;
    }
    if let Some(algo) = a.algo {
        opts.estimator = match algo {
            Algo::Fft => Estimator::Fft,
            Algo::Conv => Estimator::Conv,
            Algo::Mvdr => Estimator::Mvdr,
            Algo::Music => Estimator::Music,
        };
    }
    if let Some(s) = a.search {
        opts.search = match s {
            Search::OneD => SearchMode::OneD,
            Search::TwoD => SearchMode::TwoD,
            Search::Subgrid => SearchMode::SubGrid,
            Search::Full => SearchMode::Full,
        };
    }
    if a.srpc || a.alpha.is_some() {
        let sp = opts.srpc.get_or_insert_with(SrpcParams::default);
        if let Some(alpha) = a.alpha {
            sp.alpha = alpha;
        }
    }
    opts.seed = splitmix64(frame_seed(cfg) ^ opts.seed);
    opts.validate()?;

    let res = pipeline::run_detailed(&cube, &opts)?;
    create_dir(out)?;
    for f in &cfg.output.formats {
        match f {
            CloudFormat::Ply => write_file(&out.join("cloud.ply"), |w| res.cloud.write_ply(w))?,
            CloudFormat::Csv => write_file(&out.join("cloud.csv"), |w| res.cloud.write_csv(w))?,
        }
    }
    if a.emit_heatmaps {
        let heatmap = match res.heatmap {
            Some(h) => h,
            None => rd_heatmap(&cube, &opts)?,
        };
        let csv = cfg.output.formats.contains(&CloudFormat::Csv);
        write_file(&out.join("range_doppler.pgm"), |w| export::heatmap_pgm(&heatmap, w))?;
        if csv {
            write_file(&out.join("range_doppler.csv"), |w| export::grid_csv(w, heatmap.cols, &heatmap.data))?;
        }
        match pipeline::strongest_angle_spectrum(&cube, &opts)? {
            Some(s) => {
                write_file(&out.join("angle_spectrum.pgm"), |w| export::angle_spectrum_pgm(&s, w))?;
                if csv {
                    write_file(&out.join("angle_spectrum.csv"), |w| export::grid_csv(w, s.n, &s.data))?;
                }
            }
            None => log::warn!("nothing detected; angle_spectrum.pgm not written"),
        }
    }
    println!(
        "{}: {} points from {} detections{} into {}",
        opts.label(),
        res.cloud.len(),
        res.detections,
        if opts.srpc.is_some() { " (SRPC)" } else { "" },
        out.display()
    );
    Ok(())
}

fn rd_heatmap(cube: &RawDataCube, opts: &pipeline::PipelineOptions) -> mmwave::Result<dsp::Heatmap> {
    let rc = dsp::range_fft(cube, opts.range_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_samples)), opts.window)?;
    let nd = opts.doppler_nfft.unwrap_or_else(|| dsp::default_nfft(cube.n_chirps));
    let rd = dsp::doppler_fft(&rc, nd, opts.window, cube.cfg.wavelength(), cube.cfg.chirp_interval)?;
    Ok(dsp::rd_heatmap(&rd))
}

fn evaluate(cfg: &RunConfig, out: Option<&Path>, a: &EvaluateArgs) -> Result<(), Failure> {
    let load = |p: &Path| -> Result<PointCloud, Failure> { Ok(load_cloud(p)?) };
    let (det, truth) = (load(&a.detected)?, load(&a.truth)?);
    let d = a.d_close.unwrap_or(cfg.eval.d_close);
    let voxel = a.voxel.unwrap_or(cfg.eval.voxel);
    let m = metrics(&det, &truth, d, voxel).map_err(|e| Failure::Config(e.to_string()))?;
    let json = serde_json::to_string_pretty(&m).map_err(|e| Failure::Other(e.to_string()))? + "\n";
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.json"), |w| Ok(w.write_all(json.as_bytes())?))?;
    }
    print!("{json}");
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path, a: &SweepArgs) -> Result<(), Failure> {
    let mut exp = cfg.experiment();
    if let Some(r) = a.repeats {
        exp.repeats = r;
    }
    let report = run_experiment(&exp)?;
    for c in &report.cells {
        log::info!("{}: fmi {:.3} in {:.2}s per frame", c.pipeline, c.fmi.mean, c.runtime_s);
    }
    create_dir(out)?;
    write_file(&out.join("report.json"), |w| report.write_json(w))?;
    write_file(&out.join("report.csv"), |w| report.write_csv(w))?;
    write_file(&out.join("table.csv"), |w| report.write_table(w))?;
    let mut stdout = std::io::stdout().lock();
    report.write_table(&mut stdout)?;
    let errors = report.error_count();
    if errors > 0 {
        for c in report.cells.iter().filter(|c| !c.errors.is_empty()) {
            for e in &c.errors {
                eprintln!("{}: {e}", c.pipeline);
            }
        }
        return Err(Failure::Partial(format!("{errors} run(s) failed; see report.json")));
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let scene = realize_scene(&cfg.scene.source, frame_seed(cfg), cfg.scene.velocity)?;
    create_dir(out)?;
    let path = out.join("scene.ply");
    write_file(&path, |w| scene.ground_truth(&cfg.radar.chirp).write_ply(w))?;
    println!("{} points into {}", scene.len(), path.display());
    Ok(())
}
