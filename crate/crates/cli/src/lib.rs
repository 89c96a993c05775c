//! Command implementations behind the `sca` binary. Each command writes its
//! report to the supplied writer so it can be driven from tests.

pub mod config;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sca_core::data::pnm::{decode_ppm, encode_pgm, quantize};
use sca_core::data::{class_frequencies, generate, load_dataset, save_dataset, Dataset, Sample};
use sca_core::gradcheck::{self, GradcheckConfig, GradcheckReport};
use sca_core::segnet::checkpoint;
use sca_core::segnet::{build_network, Mode, Network};
use sca_core::training::{evaluate, history_csv, train_with, Metrics, TrainOutcome};
use sca_core::Error;

pub use config::RunConfig;

/// Failure of a command: a short category and a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "ERROR {}: {one_line}", self.category)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    if threads == 0 {
        return Err(CliError::new("config", "threads: must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new("usage", format!("cannot start {threads} threads: {e}")))
}

fn echo_config(cfg: &RunConfig, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "# effective configuration")?;
    for line in cfg.to_text().lines() {
        writeln!(out, "#   {line}")?;
    }
    Ok(())
}

fn format_freqs(f: &[f64]) -> String {
    f.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
}

pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> CliResult<Dataset> {
    echo_config(cfg, out)?;
    let ds = generate(&cfg.synth)?;
    save_dataset(&ds, out_dir)?;
    for (name, split) in [("train", &ds.train), ("test", &ds.test)] {
        if split.is_empty() {
            writeln!(out, "{name}: 0 samples")?;
        } else {
            let f = class_frequencies(split, ds.classes)?;
            writeln!(out, "{name}: {} samples, class frequencies {}", split.len(), format_freqs(&f))?;
        }
    }
    writeln!(out, "wrote {}", out_dir.display())?;
    Ok(ds)
}

/// Sidecar paths written next to a checkpoint by [`cmd_train`].
pub fn history_path(checkpoint: &Path) -> PathBuf {
    PathBuf::from(format!("{}.history.csv", checkpoint.display()))
}

pub fn config_path(checkpoint: &Path) -> PathBuf {
    PathBuf::from(format!("{}.config", checkpoint.display()))
}

fn load_for(cfg: &RunConfig, data_dir: &Path) -> CliResult<Dataset> {
    let ds = load_dataset(data_dir, cfg.net.classes)?;
    if ds.train.is_empty() {
        return Err(CliError::new("data", format!("{} has no training samples", data_dir.display())));
    }
    Ok(ds)
}

fn train_quiet_or_verbose(
    cfg: &RunConfig,
    mode: Mode,
    train: &[Sample],
    out: &mut dyn Write,
    verbose: bool,
) -> CliResult<TrainOutcome> {
    let net_cfg = sca_core::segnet::NetworkConfig { mode, ..cfg.net.clone() };
    let net = build_network(&net_cfg, cfg.train.seed)?;
    let mut io_err = None;
    let outcome = train_with(net, train, &cfg.train, |r| {
        if verbose {
            let v = &r.validation;
            if let Err(e) = writeln!(
                out,
                "epoch {:>3}  loss {:.6}  val ppa {:.6}  caa {:.6}  miou {:.6}",
                r.epoch, r.mean_loss, v.ppa, v.caa, v.miou
            ) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, checkpoint_out: &Path, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    echo_config(cfg, out)?;
    let ds = load_for(cfg, data_dir)?;
    writeln!(out, "training {} on {} samples", cfg.net.mode, ds.train.len())?;
    let outcome = train_quiet_or_verbose(cfg, cfg.net.mode, &ds.train, out, true)?;
    checkpoint::save(&outcome.network, checkpoint_out)?;
    write_file(&history_path(checkpoint_out), history_csv(&outcome.history).as_bytes())?;
    write_file(&config_path(checkpoint_out), cfg.to_text().as_bytes())?;
    writeln!(
        out,
        "wrote {} ({} iterations, class weights {})",
        checkpoint_out.display(),
        outcome.iterations,
        format_freqs(&outcome.class_weights)
    )?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(CliError::new("usage", format!("split must be train or test, got {s:?}"))),
        }
    }
}

pub fn metrics_csv(m: &Metrics) -> String {
    format!("ppa,caa,miou\n{:.6},{:.6},{:.6}\n", m.ppa, m.caa, m.miou)
}

pub fn cmd_eval(
    checkpoint_in: &Path,
    data_dir: &Path,
    split: Split,
    threads: usize,
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Metrics> {
    let net = checkpoint::load(checkpoint_in)?;
    let ds = load_dataset(data_dir, net.config().classes)?;
    let samples = match split {
        Split::Train => &ds.train,
        Split::Test => &ds.test,
    };
    let m = pool(threads)?.install(|| evaluate(&net, samples))?;
    writeln!(out, "{} on {} {:?} samples", net.mode(), samples.len(), split)?;
    write!(out, "{}", metrics_csv(&m))?;
    if let Some(path) = csv_out {
        write_file(path, metrics_csv(&m).as_bytes())?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    /// Test metrics, one per seed.
    pub runs: Vec<Metrics>,
}

impl AblationRow {
    fn mean(&self, f: impl Fn(&Metrics) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_ppa(&self) -> f64 {
        self.mean(|m| m.ppa)
    }

    pub fn mean_caa(&self) -> f64 {
        self.mean(|m| m.caa)
    }

    pub fn mean_miou(&self) -> f64 {
        self.mean(|m| m.miou)
    }
}

pub fn ablation_table(rows: &[AblationRow], seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    let mut s = format!("# all modes share the dataset and seeds {}\nmode,ppa,caa,miou\n", seeds.join(","));
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.mode,
            r.mean_ppa(),
            r.mean_caa(),
            r.mean_miou()
        ));
    }
    s
}

/// Trains every mode for every seed on the same data and reports mean test metrics.
pub fn cmd_ablate(
    cfg: &RunConfig,
    data_dir: &Path,
    seeds: &[u64],
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(CliError::new("usage", "ablate needs at least one seed"));
    }
    echo_config(cfg, out)?;
    let ds = load_for(cfg, data_dir)?;
    if ds.test.is_empty() {
        return Err(CliError::new("data", format!("{} has no test samples", data_dir.display())));
    }
    let eval_pool = pool(cfg.train.threads)?;
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let mut runs = Vec::new();
        for &seed in seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.train.seed = seed;
            let outcome = train_quiet_or_verbose(&run_cfg, mode, &ds.train, out, false)?;
            let m = eval_pool.install(|| evaluate(&outcome.network, &ds.test))?;
            writeln!(out, "# {mode} seed {seed}: test ppa {:.6} caa {:.6} miou {:.6}", m.ppa, m.caa, m.miou)?;
            runs.push(m);
        }
        rows.push(AblationRow { mode, runs });
    }
    let table = ablation_table(&rows, seeds);
    write!(out, "{table}")?;
    if let Some(path) = csv_out {
        write_file(path, table.as_bytes())?;
    }
    Ok(rows)
}

pub fn gradcheck_report(r: &GradcheckReport) -> String {
    let mut s = format!(
        "gradient check over {} seeds, tolerance {:e}\ngroup,max_rel_error,checked,skipped,status\n",
        r.seeds, r.tolerance
    );
    for g in &r.groups {
        let ok = g.checked > 0 && g.max_rel_error < r.tolerance;
        s.push_str(&format!(
            "{},{:.3e},{},{},{}\n",
            g.group,
            g.max_rel_error,
            g.checked,
            g.skipped,
            if ok { "PASS" } else { "FAIL" }
        ));
    }
    s.push_str(if r.passed() { "result: PASS\n" } else { "result: FAIL\n" });
    s
}

pub fn cmd_gradcheck(cfg: &GradcheckConfig, out: &mut dyn Write) -> CliResult<GradcheckReport> {
    let report = gradcheck::run(cfg)?;
    write!(out, "{}", gradcheck_report(&report))?;
    if !report.passed() {
        let failed: Vec<String> = report
            .groups
            .iter()
            .filter(|g| !(g.checked > 0 && g.max_rel_error < report.tolerance))
            .map(|g| g.group.to_string())
            .collect();
        return Err(CliError::new(
            "gradcheck",
            format!("analytic gradients disagree with finite differences in {}", failed.join(", ")),
        ));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NeuronSpec {
    List(Vec<usize>),
    Grid,
}

impl std::str::FromStr for NeuronSpec {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "grid" {
            return Ok(NeuronSpec::Grid);
        }
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| CliError::new("usage", format!("neuron list must be comma-separated indices or \"grid\", got {s:?}")))
            })
            .collect::<CliResult<_>>()
            .map(NeuronSpec::List)
    }
}

/// Every `⌈n/16⌉`-th neuron index, starting at 0.
pub fn grid_neurons(n: usize) -> Vec<usize> {
    (0..n).step_by(n.div_ceil(16).max(1)).collect()
}

pub fn mask_file_name(neuron: usize) -> String {
    format!("mask_{neuron:05}.pgm")
}

pub fn cmd_masks(
    checkpoint_in: &Path,
    image: &Path,
    neurons: &NeuronSpec,
    out_dir: &Path,
    out: &mut dyn Write,
) -> CliResult<Vec<PathBuf>> {
    let net: Network = checkpoint::load(checkpoint_in)?;
    let bytes = fs::read(image).map_err(|e| Error::io(image, e))?;
    let img = decode_ppm(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::format(offset, format!("{}: {message}", image.display())),
        other => other,
    })?;
    let n = net.config().neurons();
    let list = match neurons {
        NeuronSpec::List(v) => v.clone(),
        NeuronSpec::Grid => grid_neurons(n),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(list.len());
    for i in list {
        let mask = net.dependency_mask(&img, i)?;
        let pixels: Vec<u8> = mask.data().iter().map(|&v| quantize(v)).collect();
        let path = out_dir.join(mask_file_name(i));
        write_file(&path, &encode_pgm(mask.width(), mask.height(), &pixels)?)?;
        writeln!(out, "neuron {i}: {}", path.display())?;
        written.push(path);
    }
    Ok(written)
}
