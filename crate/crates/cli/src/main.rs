//! Command line front end: configure a run (problem, M, N, seed, intensity,
//! truncation), execute solve + evaluate over a sweep, and emit CSV reports
//! plus plain two-column plot-data files.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical or I/O failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde::Deserialize;

use cr_bsde_core::{
    evaluate_fixed_control, preset_problem, report, run_once, solve_lq_riccati, EstimateReport,
    LqParams, PresetName, RngPolicy, RunSettings, TimeGrid,
};

#[derive(Parser, Debug)]
#[command(name = "cr-bsde", about = "Monte Carlo solver for controlled diffusions via control randomization", version)]
struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Benchmark preset (lq, uv_callspread, uv_digital, uvm_callspread_corr,
    /// uv_outperformer, uv_outperformer_rho, uv_outperformer_spread,
    /// uv_outperformer_spread_rho)
    #[arg(long)]
    problem: Option<String>,

    /// Path counts: "2^17", "131072", a comma list, or a doubling range
    /// "2^16..2^21"
    #[arg(long)]
    paths: Option<String>,

    /// Time step counts: "64", a comma list "8,16,32,64,128", or a doubling
    /// range "8..128"
    #[arg(long)]
    steps: Option<String>,

    /// Base seed for all random streams
    #[arg(long)]
    seed: Option<u64>,

    /// Jump intensity of the randomized control: a positive real or "auto"
    /// (= 2/T)
    #[arg(long)]
    intensity: Option<String>,

    /// Cap the worker thread count (results do not depend on it)
    #[arg(long)]
    threads: Option<usize>,

    /// Directory for report.csv, plot-data and policy files
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Serialize the fitted policy per run; for lq also write the estimated
    /// feedback coefficients A(t), B(t) alongside the Riccati oracle
    #[arg(long)]
    emit_policy: bool,

    /// Disable all localization clamps (ablation)
    #[arg(long)]
    no_truncation: bool,

    /// Constant controls to price for comparison curves, e.g.
    /// "rho=-0.8,0,0.8"; components of one vector are ':'-separated
    #[arg(long, allow_hyphen_values = true)]
    fixed_control_grid: Option<String>,

    /// Moneyness sweep for uvm_callspread_corr (S1(0) = 50 + m): a comma
    /// list, "lo..hi" with step 1, or "lo..hi:step"
    #[arg(long, allow_hyphen_values = true)]
    moneyness: Option<String>,
}

/// Intensity in the config file may be spelled "auto", a float, or an int.
#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

/// Paths/steps in the config file may be a single count or a sweep spec.
#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum CountSpec {
    Num(u64),
    Str(String),
}

impl CountSpec {
    fn as_string(&self) -> String {
        match self {
            CountSpec::Num(n) => n.to_string(),
            CountSpec::Str(s) => s.clone(),
        }
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<String>,
    paths: Option<CountSpec>,
    steps: Option<CountSpec>,
    seed: Option<u64>,
    intensity: Option<NumOrStr>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
    emit_policy: Option<bool>,
    no_truncation: Option<bool>,
    fixed_control_grid: Option<String>,
    moneyness: Option<String>,
}

/// Fully resolved configuration after merging file and flags.
struct RunConfig {
    problem: PresetName,
    paths: Vec<usize>,
    steps: Vec<usize>,
    seed: u64,
    intensity: Option<f64>,
    threads: Option<usize>,
    output_dir: PathBuf,
    emit_policy: bool,
    no_truncation: bool,
    /// (label, control vector) pairs to price at a constant control.
    fixed_controls: Vec<(String, Vec<f64>)>,
    moneyness: Vec<f64>,
}

fn config_err(msg: impl std::fmt::Display) -> String {
    format!("config error: {msg}")
}

mod parse {
    /// "2^17" -> 131072, plain integers pass through.
    pub fn count(tok: &str) -> Result<usize, String> {
        let tok = tok.trim();
        if let Some(exp) = tok.strip_prefix("2^") {
            let k: u32 = exp
                .trim()
                .parse()
                .map_err(|_| format!("bad exponent in '{tok}'"))?;
            if k >= usize::BITS {
                return Err(format!("2^{k} overflows"));
            }
            return Ok(1usize << k);
        }
        tok.parse()
            .map_err(|_| format!("bad count '{tok}' (expected an integer or 2^k)"))
    }

    /// Comma list of counts; "lo..hi" expands by doubling (inclusive), so
    /// "2^16..2^21" and "8..128" give the usual sweep grids.
    pub fn counts(spec: &str) -> Result<Vec<usize>, String> {
        let mut out = Vec::new();
        for tok in spec.split(',') {
            if let Some((lo, hi)) = tok.split_once("..") {
                let (lo, hi) = (count(lo)?, count(hi)?);
                if lo == 0 || lo > hi {
                    return Err(format!("bad range '{tok}'"));
                }
                let mut m = lo;
                while m <= hi {
                    out.push(m);
                    if m > hi / 2 {
                        break;
                    }
                    m *= 2;
                }
            } else {
                out.push(count(tok)?);
            }
        }
        if out.is_empty() || out.contains(&0) {
            return Err(format!("empty or zero entry in '{spec}'"));
        }
        Ok(out)
    }

    /// "auto" -> None (module default 2/T), otherwise a positive real.
    pub fn intensity(spec: &str) -> Result<Option<f64>, String> {
        if spec.trim().eq_ignore_ascii_case("auto") {
            return Ok(None);
        }
        let v: f64 = spec
            .trim()
            .parse()
            .map_err(|_| format!("bad intensity '{spec}'"))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(format!("intensity must be positive, got {v}"));
        }
        Ok(Some(v))
    }

    /// "rho=-0.8,0,0.8": optional "name=" prefix, comma-separated entries,
    /// ':'-separated components inside one control vector.
    pub fn fixed_controls(spec: &str) -> Result<Vec<(String, Vec<f64>)>, String> {
        let (name, values) = match spec.split_once('=') {
            Some((n, v)) => (n.trim(), v),
            None => ("a", spec),
        };
        let mut out = Vec::new();
        for tok in values.split(',') {
            let comps: Result<Vec<f64>, _> = tok.split(':').map(|c| c.trim().parse::<f64>()).collect();
            let comps = comps.map_err(|_| format!("bad control '{tok}'"))?;
            if comps.is_empty() {
                return Err(format!("empty control in '{spec}'"));
            }
            out.push((format!("{name}={}", tok.trim()), comps));
        }
        if out.is_empty() {
            return Err(format!("no controls in '{spec}'"));
        }
        Ok(out)
    }

    /// Comma list of reals, or "lo..hi" (step 1) / "lo..hi:step" inclusive.
    pub fn moneyness(spec: &str) -> Result<Vec<f64>, String> {
        if let Some((range, step)) = split_range(spec)? {
            let (lo, hi) = range;
            if step <= 0.0 || hi < lo {
                return Err(format!("bad moneyness range '{spec}'"));
            }
            let n = ((hi - lo) / step).round() as usize;
            return Ok((0..=n).map(|k| lo + step * k as f64).collect());
        }
        spec.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad moneyness '{t}'"))
            })
            .collect()
    }

    fn split_range(spec: &str) -> Result<Option<((f64, f64), f64)>, String> {
        let Some((lo, rest)) = spec.split_once("..") else {
            return Ok(None);
        };
        let (hi, step) = match rest.split_once(':') {
            Some((h, s)) => (h, s.trim().parse::<f64>().map_err(|_| format!("bad step '{s}'"))?),
            None => (rest, 1.0),
        };
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad bound '{lo}'"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad bound '{hi}'"))?;
        Ok(Some(((lo, hi), step)))
    }
}

fn resolve(cli: Cli) -> Result<RunConfig, String> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let problem_name = cli
        .problem
        .or(file.problem)
        .ok_or_else(|| config_err("no problem selected (use --problem or a config file)"))?;
    let problem: PresetName = problem_name.parse().map_err(|e| config_err(e))?;

    let paths_spec = cli
        .paths
        .or_else(|| file.paths.as_ref().map(CountSpec::as_string))
        .unwrap_or_else(|| "2^17".into());
    let steps_spec = cli
        .steps
        .or_else(|| file.steps.as_ref().map(CountSpec::as_string))
        .unwrap_or_else(|| "64".into());
    let intensity_spec = cli.intensity.or(match file.intensity {
        Some(NumOrStr::Num(v)) => Some(v.to_string()),
        Some(NumOrStr::Str(s)) => Some(s),
        None => None,
    });

    let fixed_spec = cli.fixed_control_grid.or(file.fixed_control_grid);
    let moneyness_spec = cli.moneyness.or(file.moneyness);

    let config = RunConfig {
        problem,
        paths: parse::counts(&paths_spec).map_err(config_err)?,
        steps: parse::counts(&steps_spec).map_err(config_err)?,
        seed: cli.seed.or(file.seed).unwrap_or(1),
        intensity: match intensity_spec {
            Some(s) => parse::intensity(&s).map_err(config_err)?,
            None => None,
        },
        threads: cli.threads.or(file.threads),
        output_dir: cli
            .output_dir
            .or(file.output_dir)
            .unwrap_or_else(|| PathBuf::from("out")),
        emit_policy: cli.emit_policy || file.emit_policy.unwrap_or(false),
        no_truncation: cli.no_truncation || file.no_truncation.unwrap_or(false),
        fixed_controls: match fixed_spec {
            Some(s) => parse::fixed_controls(&s).map_err(config_err)?,
            None => Vec::new(),
        },
        moneyness: match moneyness_spec {
            Some(s) => parse::moneyness(&s).map_err(config_err)?,
            None => Vec::new(),
        },
    };

    if !config.moneyness.is_empty() && config.problem != PresetName::UvmCallspreadCorr {
        return Err(config_err("--moneyness applies only to uvm_callspread_corr"));
    }
    if let Some(0) = config.threads {
        return Err(config_err("--threads must be at least 1"));
    }
    Ok(config)
}

/// Everything after config validation; any error here exits with code 3.
fn execute(cfg: &RunConfig) -> Result<(), String> {
    let stage = |s: &str, e: cr_bsde_core::Error| format!("{s} failed: {e}");

    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| format!("creating {} failed: {e}", cfg.output_dir.display()))?;
    let csv_path = cfg.output_dir.join("report.csv");
    let mut csv = BufWriter::new(
        File::create(&csv_path).map_err(|e| format!("creating report.csv failed: {e}"))?,
    );
    report::write_csv_header(&mut csv).map_err(|e| stage("report", e))?;

    // moneyness sweep shifts S1(0); an empty sweep means one pass at the
    // preset's own initial state
    let shifts: Vec<Option<f64>> = if cfg.moneyness.is_empty() {
        vec![None]
    } else {
        cfg.moneyness.iter().copied().map(Some).collect()
    };

    // (m_label, series, x, value) points for the moneyness plot files
    let mut moneyness_points: Vec<(String, f64, f64)> = Vec::new();

    for &shift in &shifts {
        let (mut problem, basis, refs) =
            preset_problem(cfg.problem).map_err(|e| stage("preset", e))?;
        let mut tag = String::new();
        let mut ref_value = refs.price;
        if let Some(m) = shift {
            problem.initial_state[0] = 50.0 + m;
            tag = format!("[m={m}]");
            // published reference applies to the unshifted initial state only
            if m != 0.0 {
                ref_value = None;
            }
        }

        for &m_paths in &cfg.paths {
            // (N, mid) series for this M, written as a plot-data file below
            let mut series: Vec<(usize, f64)> = Vec::new();
            for &n_steps in &cfg.steps {
                let mut settings = RunSettings::new(m_paths, n_steps, cfg.seed);
                settings.intensity = cfg.intensity;
                settings.no_truncation = cfg.no_truncation;
                let out =
                    run_once(&problem, &basis, &settings, ref_value).map_err(|e| stage("solve", e))?;
                let mut rep = out.report;
                rep.problem = format!("{}{tag}", rep.problem);
                report::write_csv_row(&mut csv, &rep).map_err(|e| stage("report", e))?;
                series.push((n_steps, rep.mid));
                if shift.is_some() {
                    moneyness_points.push((
                        format!("M{m_paths}_N{n_steps}_optimal"),
                        shift.unwrap(),
                        rep.mid,
                    ));
                }

                for (label, a) in &cfg.fixed_controls {
                    let grid = TimeGrid::uniform(problem.horizon, n_steps)
                        .map_err(|e| stage("grid", e))?;
                    let start = Instant::now();
                    let eval = evaluate_fixed_control(
                        &problem,
                        a,
                        &grid,
                        m_paths,
                        &RngPolicy::new(cfg.seed),
                    )
                    .map_err(|e| stage("fixed-control evaluation", e))?;
                    // a constant-control price has no upper/lower split; the
                    // estimate fills all three value columns
                    let rep = EstimateReport {
                        problem: format!("{}{tag}[{label}]", problem.name),
                        basis: "none".into(),
                        paths: m_paths,
                        steps: n_steps,
                        seed: cfg.seed,
                        p1: eval.p2,
                        p1_stderr: eval.p2_stderr,
                        p2: eval.p2,
                        p2_stderr: eval.p2_stderr,
                        mid: eval.p2,
                        runtime_s: start.elapsed().as_secs_f64(),
                        ref_value: None,
                    };
                    report::write_csv_row(&mut csv, &rep).map_err(|e| stage("report", e))?;
                    if shift.is_some() {
                        moneyness_points.push((
                            format!("M{m_paths}_N{n_steps}_{label}"),
                            shift.unwrap(),
                            eval.p2,
                        ));
                    }
                }

                if cfg.emit_policy {
                    emit_policy_files(cfg, &tag, m_paths, n_steps, &out.backward.policy)?;
                }
            }

            let name = format!("{}{tag}_M{m_paths}.dat", problem.name);
            write_series(&cfg.output_dir.join(sanitize(&name)), &series)?;
        }
    }

    // one two-column file per (M, N, series): x = moneyness, y = price
    let mut by_series: Vec<(&str, Vec<(f64, f64)>)> = Vec::new();
    for (series, x, y) in &moneyness_points {
        match by_series.iter_mut().find(|(s, _)| s == series) {
            Some((_, pts)) => pts.push((*x, *y)),
            None => by_series.push((series, vec![(*x, *y)])),
        }
    }
    for (series, pts) in by_series {
        let name = format!("{}_moneyness_{series}.dat", cfg.problem.as_str());
        write_series(&cfg.output_dir.join(sanitize(&name)), &pts)?;
    }

    csv.flush().map_err(|e| format!("writing report.csv failed: {e}"))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn emit_policy_files(
    cfg: &RunConfig,
    tag: &str,
    m_paths: usize,
    n_steps: usize,
    policy: &cr_bsde_core::PolicyTable,
) -> Result<(), String> {
    let name = format!("policy_{}{tag}_M{m_paths}_N{n_steps}.txt", policy.problem_name);
    let mut out = BufWriter::new(
        File::create(cfg.output_dir.join(sanitize(&name)))
            .map_err(|e| format!("creating policy file failed: {e}"))?,
    );
    report::write_policy(&mut out, policy).map_err(|e| format!("policy serialization failed: {e}"))?;

    if cfg.problem == PresetName::Lq {
        // estimated linear feedback a(t, x) = A(t) x + B(t) from the fitted
        // quadratic surface, next to the Riccati oracle
        let ric = solve_lq_riccati(&LqParams::default(), &policy.grid)
            .map_err(|e| format!("riccati oracle failed: {e}"))?;
        let name = format!("lq_coefficients_M{m_paths}_N{n_steps}.csv");
        let mut out = BufWriter::new(
            File::create(cfg.output_dir.join(name))
                .map_err(|e| format!("creating lq coefficient file failed: {e}"))?,
        );
        writeln!(out, "t,a_hat,b_hat,a_oracle,b_oracle")
            .map_err(|e| format!("writing lq coefficients failed: {e}"))?;
        for (i, step) in policy.steps.iter().enumerate() {
            // basis order: 1, x, a, x*a, x^2, a^2; the inner-surface argmax
            // in a is -(c3 x + c2) / (2 c5)
            let c = &step.y_fit.coefficients;
            let (a_hat, b_hat) = (-c[3] / (2.0 * c[5]), -c[2] / (2.0 * c[5]));
            writeln!(
                out,
                "{},{a_hat},{b_hat},{},{}",
                policy.grid.knots()[i],
                ric.a_coef[i],
                ric.b_coef[i]
            )
            .map_err(|e| format!("writing lq coefficients failed: {e}"))?;
        }
    }
    Ok(())
}

fn write_series<X: std::fmt::Display, Y: std::fmt::Display>(
    path: &std::path::Path,
    pts: &[(X, Y)],
) -> Result<(), String> {
    let mut out = BufWriter::new(
        File::create(path).map_err(|e| format!("creating {} failed: {e}", path.display()))?,
    );
    for (x, y) in pts {
        writeln!(out, "{x} {y}").map_err(|e| format!("writing {} failed: {e}", path.display()))?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c == '/' || c.is_whitespace() { '_' } else { c })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("config error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse;

    #[test]
    fn count_specs() {
        assert_eq!(parse::count("2^17").unwrap(), 131072);
        assert_eq!(parse::count("64").unwrap(), 64);
        assert!(parse::count("2^99").is_err());
        assert!(parse::count("abc").is_err());
    }

    #[test]
    fn sweep_expansion() {
        assert_eq!(
            parse::counts("2^16..2^19").unwrap(),
            vec![65536, 131072, 262144, 524288]
        );
        assert_eq!(parse::counts("8..128").unwrap(), vec![8, 16, 32, 64, 128]);
        assert_eq!(parse::counts("8,16,64").unwrap(), vec![8, 16, 64]);
        assert!(parse::counts("16..8").is_err());
    }

    #[test]
    fn intensity_spec() {
        assert_eq!(parse::intensity("auto").unwrap(), None);
        assert_eq!(parse::intensity("8").unwrap(), Some(8.0));
        assert!(parse::intensity("-1").is_err());
        assert!(parse::intensity("x").is_err());
    }

    #[test]
    fn fixed_control_grid() {
        let g = parse::fixed_controls("rho=-0.8,0,0.8").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], ("rho=-0.8".into(), vec![-0.8]));
        assert_eq!(g[1].1, vec![0.0]);
        let multi = parse::fixed_controls("0.1:0.2,0.3:0.4").unwrap();
        assert_eq!(multi[1].1, vec![0.3, 0.4]);
    }

    #[test]
    fn moneyness_specs() {
        assert_eq!(parse::moneyness("-2..2").unwrap(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(parse::moneyness("-10..10:5").unwrap(), vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert_eq!(parse::moneyness("1.5,2.5").unwrap(), vec![1.5, 2.5]);
        assert!(parse::moneyness("5..1").is_err());
    }
}
