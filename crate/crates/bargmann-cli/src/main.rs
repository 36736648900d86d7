//! `bargmann`: scenario runner for the coherent-state propagator library.

mod config;
mod demo;
mod output;
mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;

use config::{parse_methods, ConfigError, Format, LabelSpec, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "bargmann", version, about = "Exact, bare semiclassical and uniform coherent-state propagators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep T and tabulate the propagator for each method.
    Propagate(ScenarioArgs),
    /// Validate the conjugate transform and its inverse against closed forms.
    TransformDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabulate |m_vv| along the continued trajectory family and locate a caustic.
    CausticScan(ScenarioArgs),
}

/// Scenario selection and overrides; flags win over the config file.
#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Built-in scenario (fig1, ho-sanity) or path to a config file.
    #[arg(long, default_value = "fig1")]
    scenario: String,
    /// Model id: ho or quartic-number.
    #[arg(long)]
    model: Option<String>,
    /// Oscillator frequency for the ho model.
    #[arg(long)]
    omega: Option<f64>,
    /// Real part of the initial label z0.
    #[arg(long = "z0-re", allow_hyphen_values = true)]
    z0_re: Option<f64>,
    /// Imaginary part of the initial label z0.
    #[arg(long = "z0-im", allow_hyphen_values = true)]
    z0_im: Option<f64>,
    /// Initial label as phase-space position q.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["z0_re", "z0_im"])]
    q0: Option<f64>,
    /// Initial label as phase-space momentum p.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["z0_re", "z0_im"])]
    p0: Option<f64>,
    /// Real part of the final label z.
    #[arg(long = "zf-re", allow_hyphen_values = true)]
    zf_re: Option<f64>,
    /// Imaginary part of the final label z.
    #[arg(long = "zf-im", allow_hyphen_values = true)]
    zf_im: Option<f64>,
    /// Final label as phase-space position q.
    #[arg(long = "zf-q", allow_hyphen_values = true, conflicts_with_all = ["zf_re", "zf_im"])]
    zf_q: Option<f64>,
    /// Final label as phase-space momentum p.
    #[arg(long = "zf-p", allow_hyphen_values = true, conflicts_with_all = ["zf_re", "zf_im"])]
    zf_p: Option<f64>,
    /// First time of the grid.
    #[arg(long = "t-min")]
    t_min: Option<f64>,
    /// Last time of the grid.
    #[arg(long = "t-max")]
    t_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated subset of exact, bare, uniform, conjugate.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Conjugate endpoint u'' as `re,im`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    w: Option<Vec<f64>>,
    /// Planck constant; b c must equal hbar.
    #[arg(long)]
    hbar: Option<f64>,
    /// Position scale b.
    #[arg(long)]
    b: Option<f64>,
    /// Momentum scale c.
    #[arg(long)]
    c: Option<f64>,
    /// Output file (stdout if absent).
    #[arg(long)]
    out: Option<String>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<Format>,
    /// Seed for the multistart root search.
    #[arg(long)]
    seed: Option<u64>,
}

fn label_override(current: LabelSpec, re: Option<f64>, im: Option<f64>, q: Option<f64>, p: Option<f64>) -> LabelSpec {
    match (current, re.or(im).is_some(), q.or(p).is_some()) {
        (_, true, _) => {
            let base = if let LabelSpec::Z(z) = current { z } else { C64::new(0.0, 0.0) };
            LabelSpec::Z(C64::new(re.unwrap_or(base.re), im.unwrap_or(base.im)))
        }
        (_, _, true) => {
            let (q0, p0) = if let LabelSpec::Qp(q, p) = current { (q, p) } else { (0.0, 0.0) };
            LabelSpec::Qp(q.unwrap_or(q0), p.unwrap_or(p0))
        }
        _ => current,
    }
}

impl ScenarioArgs {
    fn config(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::load(&self.scenario)?;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(model, omega, t_min, t_max, steps, hbar, b, c, format, seed);
        cfg.z0 = label_override(cfg.z0, self.z0_re, self.z0_im, self.q0, self.p0);
        cfg.zf = label_override(cfg.zf, self.zf_re, self.zf_im, self.zf_q, self.zf_p);
        if let Some(m) = &self.methods {
            cfg.methods = parse_methods(m)?;
        }
        match self.w.as_deref() {
            None => {}
            Some([re, im]) => cfg.w = Some(C64::new(*re, *im)),
            Some(_) => return Err(ConfigError::Invalid { field: "w", message: "expected `re,im`".into() }),
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sink(out: &Option<String>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn propagate(args: &ScenarioArgs) -> anyhow::Result<ExitCode> {
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let rows = match run::run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    output::write_rows(&rows, cfg.format, sink(&cfg.out)?)?;
    let failed = rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} points did not produce a finite value", rows.len());
    }
    Ok(if failed == rows.len() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn caustic_scan(args: &ScenarioArgs) -> anyhow::Result<ExitCode> {
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let model = match run::build_model(&cfg) {
        Ok(m) => m,
        Err(e) => return config_error(e),
    };
    let params = cfg.params()?;
    let (z0, zf) = (cfg.z0.label(&params), cfg.zf.label(&params));
    let (rows, found) = demo::caustic_scan(model.as_ref(), z0.z0, zf.z0.conj(), &cfg.times());
    output::write_table(&["T", "abs_m_vv", "re_m_vv", "im_m_vv", "status"], &rows, sink(&cfg.out)?)?;
    match found {
        Some((t_c, m)) => eprintln!("caustic at T_c = {} (|m_vv| = {m:e})", output::num(t_c)),
        None => eprintln!("no real-time caustic in [{}, {}]", cfg.t_min, cfg.t_max),
    }
    let ok = rows.iter().any(|r| r.last().is_some_and(|s| s == "ok"));
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn transform_demo(seed: u64) -> ExitCode {
    let checks = demo::transform_demo(seed);
    for c in &checks {
        println!("{:<30} max rel err {:.3e} (tol {:.0e}) {}", c.name, c.max_err, c.tol, if c.passed() { "PASS" } else { "FAIL" });
    }
    ExitCode::SUCCESS
}

fn config_error(e: ConfigError) -> anyhow::Result<ExitCode> {
    eprintln!("config error: {e}");
    Ok(ExitCode::from(1))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Propagate(a) => propagate(a),
        Command::CausticScan(a) => caustic_scan(a),
        Command::TransformDemo { seed } => Ok(transform_demo(*seed)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
