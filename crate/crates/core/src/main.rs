use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rydberg_eit::config::{fmt17, Config};
use rydberg_eit::pair::counter_analytics;
use rydberg_eit::scan::{self, Hold, Observable, ScanSpec};
use rydberg_eit::single_photon::{analytic_single, pulse_run, Quadrature};
use rydberg_eit::timedomain::{self, EvolutionConfig, Geometry, InitialCondition, PulseSpec};
use rydberg_eit::{Error, Result};

#[derive(Parser)]
#[command(name = "rydberg-eit", version, about = "Photon propagation through Rydberg-EIT media")]
struct Cli {
    /// Configuration file (`key = value [unit]`, optional `[run]` section).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single photon past one stationary excitation (pulse through the spectral propagator).
    Single {
        /// Pulse intensity width in units of 1/gamma; defaults to 10 / EIT window.
        #[arg(long)]
        sigma_t: Option<f64>,
    },
    /// Counter-propagating phase and loss: transfer-matrix numerics against closed forms.
    CounterAnalytic {
        /// Blockaded optical depths d_B to evaluate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 3.0, 4.0])]
        depths: Vec<f64>,
    },
    /// Time-domain two-photon evolution.
    Evolve {
        #[arg(long)]
        geometry: Geometry,
        /// Write CSV snapshots to <out>/snapshots.
        #[arg(long)]
        snapshots: bool,
    },
    /// Parameter sweep described by the `[run]` section.
    Scan {
        /// Check every point against the closed forms.
        #[arg(long)]
        compare: bool,
        /// Also write the table to this golden file.
        #[arg(long)]
        emit_golden: Option<PathBuf>,
    },
    /// Re-run the scan and compare with a golden scan.csv.
    CheckGolden {
        #[arg(long)]
        golden: PathBuf,
    },
}

struct Kv(Vec<(String, String)>);

impl Kv {
    fn put(&mut self, k: &str, v: impl Display) {
        self.0.push((k.to_string(), v.to_string()));
    }
    fn num(&mut self, k: &str, v: f64) {
        self.put(k, fmt17(v));
    }
    fn write(&self, path: &Path) -> Result<()> {
        let text: String = self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Outcome of a subcommand: all checks passed or not.
type Verdict = bool;

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    let path = path.as_ref().ok_or_else(|| Error::Config { line: 0, msg: "--config is required".into() })?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config { line: 0, msg: format!("{}: {e}", path.display()) })?;
    Config::parse(&text)
}

fn check(kv: &mut Kv, name: &str, pass: bool) -> Verdict {
    kv.put(&format!("check.{name}"), if pass { "pass" } else { "fail" });
    pass
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn run_single(cli: &Cli, sigma_t: Option<f64>) -> Result<Verdict> {
    let cfg = load_config(&cli.config)?;
    cfg.check_run_keys(&[])?;
    let (p, _) = cfg.params.nondimensionalize()?;
    let d = p.derive()?;
    let run = pulse_run(&p, sigma_t, &Quadrature::default())?;
    let a = analytic_single(&p)?;
    let mut kv = Kv(Vec::new());
    kv.num("d", d.d);
    kv.num("blockaded_depth", d.blockaded_depth());
    kv.num("phi_numeric", run.report.phase);
    kv.num("two_eta_numeric", 2.0 * run.report.eta);
    kv.num("delay_reduction_numeric", run.delay_reduction());
    kv.num("reference_delay", run.reference_delay);
    kv.num("phi_analytic", a.phase);
    kv.num("two_eta_analytic", a.two_eta);
    kv.put("narrowband", run.narrowband);
    for (i, w) in run.warnings.iter().enumerate() {
        kv.put(&format!("warning.{i}"), w);
    }
    let ok = if a.resonant {
        let t = (-2.0 * run.report.eta).exp();
        kv.num("transmission_numeric", t);
        kv.num("transmission_analytic", (-d.d_b).exp());
        check(&mut kv, "transmission_within_10pct", rel(t, (-d.d_b).exp()) <= 0.10)
    } else {
        let delay = a.delay_reduction.unwrap_or(f64::NAN);
        kv.num("delay_reduction_analytic", delay);
        kv.put("asymptotic", a.asymptotic);
        let mut ok = check(&mut kv, "phi_within_5pct", rel(run.report.phase, a.phase) <= 0.05);
        ok &= check(&mut kv, "two_eta_within_10pct", rel(2.0 * run.report.eta, a.two_eta) <= 0.10);
        ok &= check(&mut kv, "delay_within_10pct", rel(run.delay_reduction(), delay) <= 0.10);
        ok
    };
    kv.write(&cli.out.join("report.kv"))?;
    Ok(ok)
}

fn run_counter_analytic(cli: &Cli, depths: &[f64]) -> Result<Verdict> {
    let cfg = load_config(&cli.config)?;
    cfg.check_run_keys(&[])?;
    let (base, _) = cfg.params.nondimensionalize()?;
    if base.delta == 0.0 {
        return Err(Error::MissingAnalytic("counter-propagating phase on resonance; set delta != 0".into()));
    }
    let spec = ScanSpec { swept_key: "d_B".into(), values: depths.to_vec(), base, observables: vec![Observable::Phi, Observable::Eta], hold: Hold::None };
    let records = scan::run_scan(&spec)?;
    let mut csv = String::from("d_B,phi_analytic,phi_numeric,eta_analytic,eta_numeric\n");
    for r in &records {
        let a = counter_analytics(&r.config.params)?;
        let o = &r.observables;
        csv.push_str(&[r.swept_value, a.phase, o[&Observable::Phi], a.eta, o[&Observable::Eta]].map(fmt17).join(","));
        csv.push('\n');
    }
    std::fs::write(cli.out.join("counter_analytic.csv"), csv)?;
    let cmp = scan::compare_to_analytic(&records)?;
    std::fs::write(cli.out.join("report.kv"), scan::report_kv(&records, Some(&cmp)))?;
    Ok(cmp.pass)
}

const EVOLVE_KEYS: &[&str] = &[
    "n", "z_min", "period", "dt", "t_end", "sigma", "center1", "center2", "carrier", "snapshot_stride", "initial_file", "plateau_min",
    "plateau_max", "predict",
];

fn run_evolve(cli: &Cli, geometry: Geometry, snapshots: bool) -> Result<Verdict> {
    let cfg = load_config(&cli.config)?;
    cfg.check_run_keys(EVOLVE_KEYS)?;
    let need = |k: &str| -> Result<f64> { cfg.run_f64(k)?.ok_or_else(|| Error::Config { line: 0, msg: format!("missing [run] key '{k}'") }) };
    let (p, _) = cfg.params.nondimensionalize()?;
    let model = rydberg_eit::pair::PairModel::new(&p)?;
    let n = need("n")? as usize;
    let period = need("period")?;
    let z_min = cfg.run_f64("z_min")?.unwrap_or(-0.5 * period);
    let grid = timedomain::ring_grid(z_min, period, n)?;
    let initial = match cfg.run.get("initial_file") {
        Some(f) => InitialCondition::CustomFile(PathBuf::from(f)),
        None => {
            let sigma = need("sigma")?;
            let carrier = cfg.run_f64("carrier")?.unwrap_or(0.0);
            InitialCondition::DarkProductGaussian {
                pulse1: PulseSpec { center: need("center1")?, sigma, carrier },
                pulse2: PulseSpec { center: need("center2")?, sigma, carrier },
            }
        }
    };
    let ecfg = EvolutionConfig {
        dt: need("dt")?,
        t_end: need("t_end")?,
        snapshot_stride: cfg.run_f64("snapshot_stride")?.unwrap_or(0.0) as usize,
        initial,
        snapshot_dir: snapshots.then(|| cli.out.join("snapshots")),
    };
    let start = Instant::now();
    let res = timedomain::evolve(grid, geometry, &ecfg, &model)?;
    let mut kv = Kv(Vec::new());
    kv.put("geometry", if geometry == Geometry::Counter { "counter" } else { "co" });
    kv.put("n", n);
    kv.num("dz", grid.z1.dz);
    kv.num("dt", res.dt);
    kv.put("steps", res.steps);
    kv.num("wall_time", start.elapsed().as_secs_f64());
    kv.num("blockaded_depth", model.derived.blockaded_depth());
    kv.num("phi", res.report.phase);
    kv.num("eta", res.report.eta);
    kv.num("eta_overlap", res.eta_overlap());
    kv.num("group_delay", res.report.group_delay);
    kv.num("norm_in", res.initial.norm());
    kv.num("norm_out", res.state.norm());
    kv.num("max_norm_increase", res.norm_trace.max_increase);
    for (i, w) in res.warnings.iter().enumerate() {
        kv.put(&format!("warning.{i}"), w);
    }
    let mut ok = check(&mut kv, "finite", res.state.is_finite());
    if p.gamma > 0.0 {
        ok &= check(&mut kv, "norm_non_increasing", res.norm_trace.max_increase <= 1e-10);
    }
    match geometry {
        Geometry::Counter => {
            if p.delta != 0.0 {
                let a = counter_analytics(&p)?;
                kv.num("phi_analytic", a.phase);
                kv.num("eta_analytic", a.eta);
            }
            if cfg.run.get("predict").map(|s| s != "false").unwrap_or(true) {
                let pred = timedomain::predicted_counter_overlap(&res.reference, &model, false)?;
                let k0 = timedomain::predicted_counter_overlap(&res.reference, &model, true)?;
                let (pp, pe) = (pred.phase(), pred.eta());
                kv.num("phi_predicted", pp);
                kv.num("eta_predicted", pe);
                kv.num("eta_overlap_predicted", pred.eta_overlap());
                kv.num("phi_predicted_k0", k0.phase());
                kv.num("eta_predicted_k0", k0.eta());
                ok &= check(&mut kv, "phi_within_5pct_of_prediction", rel(res.report.phase, pp) <= 0.05);
                ok &= check(&mut kv, "eta_within_5pct_of_prediction", rel(res.report.eta, pe) <= 0.05);
            }
        }
        Geometry::Co => {
            let zb = model.derived.z_b;
            let plateau = (cfg.run_f64("plateau_min")?.unwrap_or(3.0 * zb), cfg.run_f64("plateau_max")?.unwrap_or(6.0 * zb));
            let g = timedomain::pair_correlation(&res.state, Some(&res.reference), plateau)?;
            let g0 = g.iter().find(|x| x.0 == 0.0).map(|x| x.1).unwrap_or(f64::NAN);
            let hw = timedomain::dip_half_width(&g, 0.5).unwrap_or(f64::NAN);
            kv.num("z_b", zb);
            kv.num("g0", g0);
            kv.num("dip_half_width", hw);
            let csv: String = std::iter::once("r,g\n".to_string()).chain(g.iter().map(|(r, v)| format!("{},{}\n", fmt17(*r), fmt17(*v)))).collect();
            std::fs::write(cli.out.join("pair_correlation.csv"), csv)?;
            if p.delta == 0.0 {
                ok &= check(&mut kv, "g0_below_0.1", g0 < 0.1);
                ok &= check(&mut kv, "half_width_within_25pct_of_z_b", rel(hw, zb) <= 0.25);
            }
        }
    }
    kv.write(&cli.out.join("report.kv"))?;
    Ok(ok)
}

fn scan_records(cli: &Cli) -> Result<Vec<scan::RunRecord>> {
    let cfg = load_config(&cli.config)?;
    let spec = ScanSpec::from_config(&cfg)?;
    let records = scan::run_scan(&spec)?;
    if cli.verbose {
        for r in &records {
            eprintln!("point {} {}={} {:.3}s {}", r.index, r.swept_key, r.swept_value, r.wall_time, r.error.as_deref().unwrap_or("ok"));
        }
    }
    Ok(records)
}

fn run_scan_cmd(cli: &Cli, compare: bool, golden: &Option<PathBuf>) -> Result<Verdict> {
    let records = scan_records(cli)?;
    std::fs::write(cli.out.join("scan.csv"), scan::to_csv(&records))?;
    if let Some(g) = golden {
        scan::emit_golden(&records, g)?;
    }
    let cmp = if compare { Some(scan::compare_to_analytic(&records)?) } else { None };
    std::fs::write(cli.out.join("report.kv"), scan::report_kv(&records, cmp.as_ref()))?;
    Ok(records.iter().all(|r| r.ok()) && cmp.map(|c| c.pass).unwrap_or(true))
}

fn run_check_golden(cli: &Cli, golden: &Path) -> Result<Verdict> {
    let records = scan_records(cli)?;
    let v = scan::check_golden(&records, golden)?;
    let mut kv = Kv(Vec::new());
    kv.put("golden", golden.display());
    kv.put("mismatches", v.mismatches.len());
    for (i, m) in v.mismatches.iter().enumerate() {
        kv.put(&format!("mismatch.{i}"), m);
        eprintln!("{m}");
    }
    kv.write(&cli.out.join("report.kv"))?;
    Ok(v.pass())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Validation(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot set up {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(2);
    }
    let start = Instant::now();
    let result = match &cli.command {
        Command::Single { sigma_t } => run_single(&cli, *sigma_t),
        Command::CounterAnalytic { depths } => run_counter_analytic(&cli, depths),
        Command::Evolve { geometry, snapshots } => run_evolve(&cli, *geometry, *snapshots),
        Command::Scan { compare, emit_golden } => run_scan_cmd(&cli, *compare, emit_golden),
        Command::CheckGolden { golden } => run_check_golden(&cli, golden),
    };
    if cli.verbose {
        eprintln!("finished in {:.2}s", start.elapsed().as_secs_f64());
    }
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed; see {}", cli.out.join("report.kv").display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
