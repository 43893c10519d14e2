//! `rivers`: command-line front end for simulation, estimation, river
//! localization, the expansion and the acceptance suites.
//!
//! Exit status: 0 on success, 2 on invalid input or a failed validation,
//! 1 on any other runtime error.

use clap::{Parser, Subcommand};
use rivers::estimators::{
    estimate_b, estimate_band_exit_time, estimate_c, estimate_chi, estimate_p_plus, estimate_rho, write_theorem2_csv,
    Theorem2Config,
};
use rivers::linear_river::TruncationPolicy;
use rivers::paths::{make_path, BrownianPath, Grid};
use rivers::river::{expand_river, locate_river, track_river, write_river_csv};
use rivers::sde::{simulate, SimOptions};
use rivers::validation::{run_criterion, Suite};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// One trajectory on a seeded path
    Simulate,
    /// Monte Carlo estimate of one probability or mean exit time
    Estimate,
    /// Blow-up probabilities near the diagonal against phi(z)
    Theorem2,
    /// Bracket the river at one time
    Locate,
    /// Bracket the river along a time grid
    Track,
    /// Recursive expansion R_0 .. R_n on a time grid
    Expand,
    /// Run acceptance suites
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum Quantity {
    /// blow-up probability from (s, x)
    B,
    /// convergence probability from (s, x)
    C,
    /// upper band exit from offset x - s
    PPlus,
    /// hitting 0 before s from (s, x)
    Rho,
    /// staying near zero from (s, 0)
    Chi,
    /// mean band exit time from offset x - s
    ExitTime,
}

/// Parameters of a run. Unset values take the defaults of the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Params {
    s: f64,
    x: Option<f64>,
    z: Vec<f64>,
    sigma: f64,
    n: usize,
    tol: f64,
    quantity: Quantity,
    /// expansion order
    order: usize,
    /// end of the time grid for `track` and `expand`
    s_end: Option<f64>,
    s_step: f64,
    suite: String,
    sim: SimOptions<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            s: 25.0,
            x: None,
            z: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            sigma: 1.0,
            n: 10_000,
            tol: 1e-3,
            quantity: Quantity::B,
            order: 3,
            s_end: None,
            s_step: 1.0,
            suite: "all".into(),
            sim: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    command: Command,
    #[serde(default)]
    params: Params,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "rivers", version, about = "Rivers of dX = X(X - t) dt + sigma dW")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// JSON run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    s: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    x: Option<f64>,
    /// comma-separated list
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    z: Option<Vec<f64>>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    dt0: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quantity: Option<Quantity>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    s_end: Option<f64>,
    #[arg(long, global = true)]
    s_step: Option<f64>,
    #[arg(long, global = true)]
    suite: Option<String>,
    /// output file; CSV goes to stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads for path ensembles
    #[arg(long, global = true, env = "RIVER_THREADS")]
    threads: Option<usize>,
    /// omit the timestamp line of the metadata header
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// print the resolved configuration as JSON and exit
    #[arg(long, global = true)]
    dump_config: bool,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<rivers::Error> for Failure {
    fn from(e: rivers::Error) -> Self {
        use rivers::Error as E;
        let code = match e {
            E::InvalidArgument(_) | E::InvalidGrid(_) | E::OffGrid { .. } => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn resolve(cli: &Cli) -> Res<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| Failure::invalid(format!("config: {e}")))?
        }
        None => RunConfig {
            command: cli.command.ok_or_else(|| Failure::invalid("no command given; see --help"))?,
            params: Params::default(),
            seed: 0,
            out: None,
        },
    };
    if let Some(c) = cli.command {
        cfg.command = c;
    }
    let p = &mut cfg.params;
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = cli.$flag.clone() { $field = v; })*
        };
    }
    set!(s => p.s, sigma => p.sigma, n => p.n, tol => p.tol, z => p.z, quantity => p.quantity,
         order => p.order, s_step => p.s_step, suite => p.suite,
         dt0 => p.sim.dt0, horizon => p.sim.horizon, seed => cfg.seed);
    if cli.x.is_some() {
        p.x = cli.x;
    }
    if cli.s_end.is_some() {
        p.s_end = cli.s_end;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    check(&cfg)?;
    Ok(cfg)
}

fn check(cfg: &RunConfig) -> Res<()> {
    let p = &cfg.params;
    let bad = |m: String| Err(Failure::invalid(m));
    if !p.s.is_finite() {
        return bad(format!("s = {} must be finite", p.s));
    }
    if !(p.sigma >= 0.0 && p.sigma.is_finite()) {
        return bad(format!("sigma = {} must be finite and nonnegative", p.sigma));
    }
    if !(p.tol > 0.0) {
        return bad(format!("tol = {} must be positive", p.tol));
    }
    if !(p.s_step > 0.0) {
        return bad(format!("s_step = {} must be positive", p.s_step));
    }
    if !(p.sim.horizon > 0.0) {
        return bad(format!("horizon = {} must be positive", p.sim.horizon));
    }
    if cfg.command == Command::Validate {
        p.suite.parse::<Suite>()?;
    }
    p.sim.validate()?;
    Ok(())
}

/// SHA-256 of the configuration without its output path.
fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(&RunConfig { out: None, ..cfg.clone() }).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn header(cfg: &RunConfig, timestamp: bool) -> String {
    let mut h = format!(
        "# rivers {}\n# command={} seed={} config_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        serde_json::to_value(cfg.command).unwrap().as_str().unwrap(),
        cfg.seed,
        config_hash(cfg)
    );
    if timestamp {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let _ = writeln!(h, "# timestamp={secs}");
    }
    h
}

/// Path on `[t0, t1]` at the configured step, with one spare step.
fn seeded_path(cfg: &RunConfig, t0: f64, t1: f64) -> Res<BrownianPath<f64>> {
    let dt = cfg.params.sim.dt0;
    Ok(make_path(cfg.seed, Grid::new(t0, t1 + dt, dt)?)?)
}

/// Longest run a locator probe may need, counting horizon doublings.
fn probe_span(sim: &SimOptions<f64>) -> f64 {
    sim.horizon * 2f64.powi(sim.max_doublings as i32) + 1.0
}

fn time_grid(p: &Params, default_len: f64) -> Vec<f64> {
    let end = p.s_end.unwrap_or(p.s + default_len);
    let k = ((end - p.s) / p.s_step + 1e-9).floor().max(0.0) as usize;
    (0..=k).map(|i| p.s + i as f64 * p.s_step).collect()
}

/// Runs the command; returns the artifact body, a summary line and whether
/// the command itself passed.
fn execute(cfg: &RunConfig) -> Res<(Vec<u8>, String, bool)> {
    let p = &cfg.params;
    let mut buf = Vec::new();
    let summary = match cfg.command {
        Command::Simulate => {
            let x = p.x.unwrap_or(p.s);
            let path = seeded_path(cfg, p.s, p.s + probe_span(&p.sim))?;
            let tr = simulate(p.s, x, p.sigma, &path, &p.sim)?;
            tr.write_csv(&mut buf)?;
            format!("simulate: fate={} steps={} substeps={}", tr.fate, tr.steps, tr.substeps)
        }
        Command::Estimate => {
            let x = p.x.unwrap_or(p.s);
            let (s, sig, n, o, seed) = (p.s, p.sigma, p.n, &p.sim, cfg.seed);
            let name = serde_json::to_value(p.quantity).unwrap().as_str().unwrap().to_string();
            writeln!(buf, "quantity,s,x,estimate,std_err,n,n_undecided")?;
            let (v, se, und) = match p.quantity {
                Quantity::ExitTime => {
                    let e = estimate_band_exit_time(s, x - s, sig, n, o, seed)?;
                    (e.mean, e.std_err, e.n_undecided)
                }
                q => {
                    let e = match q {
                        Quantity::B => estimate_b(s, x, sig, n, o, seed)?,
                        Quantity::C => estimate_c(s, x, sig, n, o, seed)?,
                        Quantity::PPlus => estimate_p_plus(s, x - s, sig, n, o, seed)?,
                        Quantity::Rho => estimate_rho(s, x, sig, n, o, seed)?,
                        _ => estimate_chi(s, sig, n, o, seed)?,
                    };
                    (e.p_hat, e.std_err, e.n_undecided)
                }
            };
            writeln!(buf, "{name},{s},{x},{v},{se},{n},{und}")?;
            format!("estimate: {name} = {v} ± {se} (n = {n}, undecided {und})")
        }
        Command::Theorem2 => {
            let t2 = Theorem2Config { s: vec![p.s], z: p.z.clone(), sigma: p.sigma, n: p.n, seed0: cfg.seed, opts: p.sim };
            let rows = t2.run()?;
            write_theorem2_csv(&rows, &mut buf)?;
            let worst = rows.iter().map(|r| r.deviation()).fold(0.0, f64::max);
            format!("theorem2: {} rows, max |p_hat - phi(z)| = {worst:.4}", rows.len())
        }
        Command::Locate => {
            let path = seeded_path(cfg, p.s, p.s + probe_span(&p.sim))?;
            let e = locate_river(&path, p.s, p.sigma, p.tol, &p.sim)?;
            write_river_csv(&[e], &mut buf)?;
            format!("locate: {} in [{}, {}] at s = {}", e.status, e.lo, e.hi, e.s)
        }
        Command::Track => {
            let grid = time_grid(p, 10.0);
            let last = *grid.last().unwrap();
            let path = seeded_path(cfg, p.s, last + probe_span(&p.sim))?;
            let series = track_river(&path, &grid, p.sigma, p.tol, &p.sim)?;
            write_river_csv(&series, &mut buf)?;
            let located = series.iter().filter(|e| e.is_located()).count();
            format!("track: {located}/{} located", series.len())
        }
        Command::Expand => {
            let grid = time_grid(p, 10.0);
            let last = *grid.last().unwrap();
            let trunc = TruncationPolicy::new(p.sim.horizon, 1e-12);
            let path = seeded_path(cfg, p.s, last + p.sim.horizon)?;
            let st = expand_river(&path, p.order, &grid, p.sigma, &trunc)?;
            st.write_csv(&mut buf)?;
            format!("expand: orders 0..={} on {} times, tail bound {:.1e}", p.order, grid.len(), st.tail_bound)
        }
        Command::Validate => {
            let suite: Suite = p.suite.parse()?;
            writeln!(buf, "id,name,pass,seconds,detail")?;
            let mut failed = 0;
            let ids = suite.criteria();
            for &id in &ids {
                let r = run_criterion(id)?;
                eprintln!("{r}");
                failed += usize::from(!r.pass);
                writeln!(buf, "{},{},{},{:.3},\"{}\"", r.id, r.name, r.pass, r.seconds, r.detail.replace('"', "'"))?;
            }
            let line = format!("validate {}: {}/{} passed", p.suite, ids.len() - failed, ids.len());
            return Ok((buf, line, failed == 0));
        }
    };
    Ok((buf, summary, true))
}

fn run(cli: &Cli) -> Res<bool> {
    let cfg = resolve(cli)?;
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        return Ok(true);
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    }
    let (body, summary, passed) = execute(&cfg)?;
    let mut out = header(&cfg, !cli.no_timestamp).into_bytes();
    out.extend_from_slice(&body);
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &out)?;
            println!("{summary}");
        }
        None => {
            std::io::stdout().lock().write_all(&out)?;
            eprintln!("{summary}");
        }
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
