//! Command-line front end: model diagnostics, Kac-Rice curves, field
//! simulation, critical point extraction, estimation and the CLT
//! replication experiment. Outputs are plot-ready CSV files with a `#`
//! JSON metadata header, or JSON reports.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 mathematical
//! degeneracy, 4 runtime cap exceeded.

use clap::{Args, Parser, Subcommand, ValueEnum};
use critpp_core::covmodels::SpectralMoments;
use critpp_core::critpoints::{extract, ExtractionConfig, PointPattern};
use critpp_core::fieldsim::{
    default_bandwidth, simulate_lattice, simulate_spectral, smooth_lattice,
    CosineTestField, FieldRealization, SmoothField, Window,
};
use critpp_core::kacrice::{
    intensity_closed_form, intensity_goe_mc_all, kfun_eta_curve, kfun_eta_g,
    model_with_intensity, pcf_curve, repulsion_index_curve, smallr_exponent,
    smallr_slope, IndexSet, SummaryCurve,
};
use critpp_core::stats::{clt_experiment, default_eta, k_hat_eta_multi, rho_hat};
use critpp_core::{CovarianceModel, CritError, Family};
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "critpp", version, about = "critical point processes of Gaussian random fields")]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Abort with exit code 4 when a command exceeds this many seconds
    #[arg(long, global = true)]
    time_cap_secs: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance model diagnostics: spectral moments, integrability,
    /// pairwise non-degeneracy margins
    Model(ModelCmd),
    /// Intensity parameters: closed form (d <= 4) and GOE Monte Carlo
    Intensity(IntensityCmd),
    /// Monte Carlo pair correlation curve
    Pcf(PcfCmd),
    /// Modified Ripley K-function curve
    Kfun(KfunCmd),
    /// Repulsion index curve
    Repulsion(RepulsionCmd),
    /// Log-log slope of a pcf curve on a window
    Slope(SlopeCmd),
    /// Simulate a field realization (spectral or lattice-smoothed)
    Simulate(SimulateCmd),
    /// Extract critical points from a realization
    Extract(ExtractCmd),
    /// Estimate intensity and modified K from a point pattern
    Estimate(EstimateCmd),
    /// CLT replication experiment across growing windows
    Clt(CltCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Matern,
    Gauss,
    Rwm,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Matern => Family::Matern,
            FamilyArg::Gauss => Family::GaussianLimit,
            FamilyArg::Rwm => Family::RandomWave,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Covariance family
    #[arg(long, value_enum)]
    family: FamilyArg,

    /// Dimension
    #[arg(long)]
    d: usize,

    /// Matern smoothness
    #[arg(long)]
    nu: Option<f64>,

    /// Scale parameter (exclusive with --target-rho)
    #[arg(long)]
    phi: Option<f64>,

    /// Scale the model so that rho_L equals this intensity
    #[arg(long)]
    target_rho: Option<f64>,

    /// Index set: all | extrema | maxima | minima | saddles | "0,2"
    #[arg(long, default_value = "all")]
    l_set: String,
}

impl ModelArgs {
    fn index_set(&self) -> Result<IndexSet, CritError> {
        parse_index_set(&self.l_set, self.d)
    }

    fn model(&self) -> Result<CovarianceModel, CritError> {
        let family: Family = self.family.into();
        if let Family::Matern = family {
            if self.nu.is_none() {
                return Err(CritError::InvalidConfig("--nu required for matern".into()));
            }
        }
        match (self.phi, self.target_rho) {
            (Some(_), Some(_)) => Err(CritError::InvalidConfig(
                "--phi and --target-rho are mutually exclusive".into(),
            )),
            (Some(phi), None) => Ok(match family {
                Family::Matern => CovarianceModel::matern(self.d, self.nu.unwrap(), phi),
                Family::GaussianLimit => CovarianceModel::gaussian_limit(self.d, phi),
                Family::RandomWave => CovarianceModel::random_wave(self.d, phi),
            }),
            (None, Some(rho)) => {
                model_with_intensity(family, self.d, self.nu, &self.index_set()?, rho)
            }
            (None, None) => Err(CritError::InvalidConfig(
                "one of --phi or --target-rho is required".into(),
            )),
        }
    }
}

fn parse_index_set(text: &str, d: usize) -> Result<IndexSet, CritError> {
    match text {
        "all" => Ok(IndexSet::all(d)),
        "extrema" => Ok(IndexSet::extrema(d)),
        "maxima" => Ok(IndexSet::maxima(d)),
        "minima" => Ok(IndexSet::minima(d)),
        "saddles" => {
            if d < 2 {
                return Err(CritError::InvalidConfig("saddles need d >= 2".into()));
            }
            Ok(IndexSet::saddles(d))
        }
        list => {
            let members: Result<Vec<usize>, _> =
                list.split(',').map(|s| s.trim().parse::<usize>()).collect();
            let members = members.map_err(|e| {
                CritError::InvalidConfig(format!("bad index set {list:?}: {e}"))
            })?;
            if members.is_empty() || members.iter().any(|&l| l > d) {
                return Err(CritError::InvalidConfig(format!(
                    "index set {list:?} out of range for d = {d}"
                )));
            }
            Ok(IndexSet::new(d, members))
        }
    }
}

#[derive(Args)]
struct OutputArg {
    /// Output file (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl OutputArg {
    fn write(&self, content: &str) -> std::io::Result<()> {
        match &self.output {
            Some(path) => std::fs::write(path, content),
            None => {
                print!("{content}");
                Ok(())
            }
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("note: no --seed given, generated seed {s} (recorded in output)");
            s
        }
    }
}

#[derive(Args)]
struct ModelCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Serialize)]
struct ModelReport {
    model: CovarianceModel,
    lambda: Vec<(usize, f64)>,
    moment_ratio: Option<f64>,
    integrability_ok: bool,
    tail_integral: f64,
    divergent_oscillatory: bool,
    second_order_degenerate: bool,
    nondegeneracy: Vec<(f64, f64, f64, bool)>,
}

fn cmd_model(cmd: &ModelCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let sm = SpectralMoments::compute(&model, 3);
    let integ = model.check_integrability();
    let mut nondeg = Vec::new();
    for k in 1..=12 {
        let r = 0.25 * k as f64 * model.phi();
        if let Ok(c) = model.check_pairwise_nondegeneracy(r) {
            nondeg.push((r, c.margin1, c.margin2, c.ok));
        }
    }
    let report = ModelReport {
        model,
        lambda: sm.iter().collect(),
        moment_ratio: model.moment_ratio().ok(),
        integrability_ok: integ.ok,
        tail_integral: integ.tail_integral,
        divergent_oscillatory: integ.divergent_oscillatory,
        second_order_degenerate: model.is_second_order_degenerate(),
        nondegeneracy: nondeg,
    };
    if model.is_second_order_degenerate() {
        eprintln!(
            "warning: random wave model with d = 1 is second-order degenerate at r in pi*phi*Z"
        );
    }
    Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
}

#[derive(Args)]
struct IntensityCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// GOE Monte Carlo sample count (0 disables the MC column)
    #[arg(long, default_value_t = 1_000_000)]
    n_samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_intensity(cmd: &IntensityCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let l_set = cmd.model.index_set()?;
    let seed = resolve_seed(cmd.seed);
    let d = model.dim();
    let mc = if cmd.n_samples > 0 {
        Some(intensity_goe_mc_all(&model, cmd.n_samples, seed)?)
    } else {
        None
    };
    let meta = serde_json::json!({
        "model": model, "l_set": l_set.to_string(),
        "n_samples": cmd.n_samples, "seed": seed, "kind": "intensity",
    });
    let mut out = format!("# {meta}\nindex,closed_form,mc_value,mc_stderr\n");
    for l in 0..=d {
        let closed = intensity_closed_form(&model, &IndexSet::new(d, [l]))?;
        match &mc {
            Some(ests) => out.push_str(&format!(
                "{l},{closed:.12e},{:.12e},{:.12e}\n",
                ests[l].value, ests[l].stderr
            )),
            None => out.push_str(&format!("{l},{closed:.12e},,\n")),
        }
    }
    let closed = intensity_closed_form(&model, &l_set)?;
    let (mcv, mcs) = match &mc {
        Some(ests) => {
            let v: f64 = l_set.members().map(|l| ests[l].value).sum();
            let s: f64 = l_set.members().map(|l| ests[l].stderr * ests[l].stderr).sum();
            (format!("{:.12e}", v), format!("{:.12e}", s.sqrt()))
        }
        None => (String::new(), String::new()),
    };
    out.push_str(&format!("L,{closed:.12e},{mcv},{mcs}\n"));
    Ok(out)
}

#[derive(Args)]
struct GridArgs {
    /// Smallest distance
    #[arg(long)]
    r_min: f64,
    /// Largest distance
    #[arg(long)]
    r_max: f64,
    /// Number of grid points
    #[arg(long, default_value_t = 50)]
    r_count: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<Vec<f64>, CritError> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_count >= 2) {
            return Err(CritError::InvalidConfig(
                "need 0 < r-min < r-max and r-count >= 2".into(),
            ));
        }
        let n = self.r_count;
        Ok((0..n)
            .map(|i| self.r_min + (self.r_max - self.r_min) * i as f64 / (n - 1) as f64)
            .collect())
    }
}

#[derive(Args)]
struct PcfCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Second index set for cross pair correlation (defaults to --l-set)
    #[arg(long)]
    lp_set: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_pcf(cmd: &PcfCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let l_set = cmd.model.index_set()?;
    let lp_set = match &cmd.lp_set {
        Some(text) => parse_index_set(text, model.dim())?,
        None => l_set.clone(),
    };
    let seed = resolve_seed(cmd.seed);
    let curve = pcf_curve(&model, &l_set, &lp_set, &cmd.grid.grid()?, cmd.n_mc, seed)?;
    Ok(curve.to_csv())
}

#[derive(Args)]
struct KfunCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Shell inner radius (default 0.05 rho^{-1/d})
    #[arg(long)]
    eta: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Poisson reference hook: integrate g == 1 instead of the MC pcf
    #[arg(long, default_value_t = false)]
    g_one: bool,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_kfun(cmd: &KfunCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let l_set = cmd.model.index_set()?;
    let d = model.dim();
    let rho = intensity_closed_form(&model, &l_set)?;
    let eta = cmd.eta.unwrap_or_else(|| default_eta(rho, d));
    let grid = cmd.grid.grid()?;
    if eta >= grid[0] {
        return Err(CritError::InvalidConfig(format!(
            "eta = {eta} must lie below r-min = {}",
            grid[0]
        )));
    }
    let seed = resolve_seed(cmd.seed);
    let (values, meta_kind): (Vec<f64>, &str) = if cmd.g_one {
        (
            grid.iter().map(|&r| kfun_eta_g(&|_| 1.0, d, eta, r)).collect(),
            "kfun-poisson-reference",
        )
    } else {
        let curve = pcf_curve(&model, &l_set, &l_set, &pcf_support_grid(&model, &grid), cmd.n_mc, seed)?;
        (
            grid.iter().map(|&r| kfun_eta_curve(&curve, eta, r)).collect(),
            "kfun",
        )
    };
    let meta = serde_json::json!({
        "model": model, "l_set": l_set.to_string(), "eta": eta,
        "n_mc": cmd.n_mc, "seed": seed, "kind": meta_kind,
    });
    let mut out = format!("# {meta}\nr,value,stderr\n");
    for (r, v) in grid.iter().zip(&values) {
        out.push_str(&format!("{r:.12e},{v:.12e},0\n"));
    }
    Ok(out)
}

/// pcf support grid for quadrature: extends slightly past the requested
/// distances and resolves the small-r region.
fn pcf_support_grid(model: &CovarianceModel, rs: &[f64]) -> Vec<f64> {
    let lo = critpp_core::kacrice::pcf_lower_cutoff(model) * 0.5;
    let hi = rs.last().unwrap() * 1.02;
    let n = (rs.len() * 2).clamp(60, 160);
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

#[derive(Args)]
struct RepulsionCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_repulsion(cmd: &RepulsionCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let l_set = cmd.model.index_set()?;
    let rho = intensity_closed_form(&model, &l_set)?;
    let grid = cmd.grid.grid()?;
    let seed = resolve_seed(cmd.seed);
    let curve = pcf_curve(&model, &l_set, &l_set, &pcf_support_grid(&model, &grid), cmd.n_mc, seed)?;
    let alpha = smallr_exponent(&l_set, &l_set, model.dim());
    let meta = serde_json::json!({
        "model": model, "l_set": l_set.to_string(), "rho": rho,
        "n_mc": cmd.n_mc, "seed": seed, "kind": "repulsion-index",
    });
    let mut out = format!("# {meta}\nr,value,stderr\n");
    for &r in &grid {
        let v = repulsion_index_curve(&curve, rho, alpha, r);
        out.push_str(&format!("{r:.12e},{v:.12e},0\n"));
    }
    Ok(out)
}

#[derive(Args)]
struct SlopeCmd {
    /// pcf curve CSV produced by the pcf command
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    window_lo: f64,
    #[arg(long)]
    window_hi: f64,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_slope(cmd: &SlopeCmd) -> Result<String, CritError> {
    let text = std::fs::read_to_string(&cmd.input)
        .map_err(|e| CritError::InvalidConfig(format!("cannot read input: {e}")))?;
    let curve = SummaryCurve::from_csv(&text)?;
    let fit = smallr_slope(&curve, (cmd.window_lo, cmd.window_hi))?;
    let report = serde_json::json!({
        "slope": fit.slope,
        "intercept": fit.intercept,
        "slope_stderr": fit.slope_stderr,
        "window": [cmd.window_lo, cmd.window_hi],
        "input_meta": curve.meta,
    });
    Ok(serde_json::to_string_pretty(&report).unwrap() + "\n")
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spectral,
    Lattice,
}

#[derive(Args)]
struct SimulateCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "spectral")]
    method: MethodArg,
    /// Spectral cosine terms
    #[arg(long, default_value_t = 4096)]
    n_terms: usize,
    /// Lattice refinement (spacing 1/n)
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Smoothing bandwidth (default n^{-1/(d+4)})
    #[arg(long)]
    xi: Option<f64>,
    /// Window as lo,hi per axis, e.g. "0,1" (cube)
    #[arg(long, default_value = "0,1")]
    window: String,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

fn parse_window(text: &str, d: usize) -> Result<Window, CritError> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse()).collect();
    let parts =
        parts.map_err(|e| CritError::InvalidConfig(format!("bad window {text:?}: {e}")))?;
    if parts.len() != 2 || parts[0] >= parts[1] {
        return Err(CritError::InvalidConfig(format!(
            "window must be lo,hi with lo < hi, got {text:?}"
        )));
    }
    Ok(Window::new(vec![parts[0]; d], vec![parts[1]; d]))
}

fn cmd_simulate(cmd: &SimulateCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let window = parse_window(&cmd.window, model.dim())?;
    let seed = resolve_seed(cmd.seed);
    let realization = match cmd.method {
        MethodArg::Spectral => FieldRealization::Spectral(simulate_spectral(
            &model, cmd.n_terms, &window, seed,
        )),
        MethodArg::Lattice => {
            let sim = simulate_lattice(&model, cmd.n, &window, seed)?;
            let xi = cmd.xi.unwrap_or_else(|| default_bandwidth(cmd.n, model.dim()));
            FieldRealization::Lattice(smooth_lattice(sim, xi)?)
        }
    };
    Ok(realization.to_json() + "\n")
}

#[derive(Args)]
struct ExtractCmd {
    /// Realization JSON produced by the simulate command
    #[arg(long, required_unless_present = "test_field")]
    input: Option<PathBuf>,
    /// Deterministic test fixture: "cosine" (d = 2 separable cosine field)
    #[arg(long)]
    test_field: Option<String>,
    /// Seeds per axis override
    #[arg(long)]
    seeds_per_axis: Option<usize>,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_extract(cmd: &ExtractCmd) -> Result<(String, Option<String>), CritError> {
    let (realization, config) = match &cmd.test_field {
        Some(name) if name == "cosine" => {
            let window = Window::new(vec![0.1, 0.1], vec![0.9, 0.9]);
            let field = CosineTestField::new(2, 1.0, window);
            let config = ExtractionConfig {
                seeds_per_axis: cmd.seeds_per_axis.unwrap_or(8),
                newton_max_iter: 60,
                newton_tol: 1e-10,
                dedup_radius: 1e-4,
                boundary_margin: 1e-3,
                morse_tol: 1e-6,
            };
            (FieldRealization::Cosine(field), config)
        }
        Some(other) => {
            return Err(CritError::InvalidConfig(format!(
                "unknown test field {other:?}"
            )))
        }
        None => {
            let path = cmd.input.as_ref().expect("clap enforces input");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CritError::InvalidConfig(format!("cannot read input: {e}")))?;
            let realization = FieldRealization::from_json(&text)?;
            let (model, window) = match &realization {
                FieldRealization::Spectral(f) => (*f.model(), f.window().clone()),
                FieldRealization::Lattice(f) => {
                    (*f.lattice().model(), f.window().clone())
                }
                FieldRealization::Cosine(_) => {
                    return Err(CritError::InvalidConfig(
                        "cosine fixtures carry no model; use --test-field".into(),
                    ))
                }
            };
            let mut config = ExtractionConfig::for_model(&model, &window)?;
            if let Some(s) = cmd.seeds_per_axis {
                config = config.with_seeds_per_axis(s);
            }
            (realization, config)
        }
    };
    let field = realization.as_field();
    let window = field.window().clone();
    let report = extract(field, &window, &config)?;
    let sidecar = serde_json::json!({
        "window": window,
        "config": config,
        "seeds": report.seeds,
        "converged": report.converged,
        "non_converged": report.non_converged,
        "rejected_non_morse": report.rejected_non_morse,
        "merged": report.merged,
        "boundary_discarded": report.boundary_discarded,
    });
    Ok((
        report.pattern.to_csv(),
        Some(serde_json::to_string_pretty(&sidecar).unwrap() + "\n"),
    ))
}

#[derive(Args)]
struct EstimateCmd {
    /// Pattern CSV produced by the extract command
    #[arg(long)]
    input: PathBuf,
    /// Window sidecar JSON (defaults to <input>.window.json)
    #[arg(long)]
    window_json: Option<PathBuf>,
    /// Index set for the estimators
    #[arg(long, default_value = "all")]
    l_set: String,
    #[arg(long)]
    eta: f64,
    /// Comma-separated distances
    #[arg(long)]
    r: String,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_estimate(cmd: &EstimateCmd) -> Result<String, CritError> {
    let side_path = cmd
        .window_json
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.window.json", cmd.input.display())));
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&side_path)
            .map_err(|e| CritError::InvalidConfig(format!("cannot read sidecar: {e}")))?,
    )
    .map_err(|e| CritError::InvalidConfig(format!("bad sidecar JSON: {e}")))?;
    let window: Window = serde_json::from_value(sidecar["window"].clone())
        .map_err(|e| CritError::InvalidConfig(format!("bad window in sidecar: {e}")))?;
    let text = std::fs::read_to_string(&cmd.input)
        .map_err(|e| CritError::InvalidConfig(format!("cannot read input: {e}")))?;
    let pattern = PointPattern::from_csv(&text, window)?;
    let l_set = parse_index_set(&cmd.l_set, pattern.dim())?;
    let rs: Result<Vec<f64>, _> = cmd.r.split(',').map(|s| s.trim().parse()).collect();
    let rs = rs.map_err(|e| CritError::InvalidConfig(format!("bad r list: {e}")))?;
    let rho = rho_hat(&pattern, &l_set);
    let ks = k_hat_eta_multi(&pattern, &l_set, cmd.eta, &rs)?;
    let report = serde_json::json!({
        "l_set": l_set.to_string(),
        "eta": cmd.eta,
        "n_points": pattern.len(),
        "rho_hat": rho,
        "k_hat": rs.iter().zip(&ks).map(|(r, k)| serde_json::json!({"r": r, "value": k})).collect::<Vec<_>>(),
    });
    Ok(serde_json::to_string_pretty(&report).unwrap() + "\n")
}

#[derive(Args)]
struct CltCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated window sizes
    #[arg(long, default_value = "10,20,40")]
    n: String,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 4096)]
    n_terms: usize,
    /// Shell inner radius (default 0.05 rho^{-1/d})
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated K-function distances
    #[arg(long, default_value = "0.5,1.0")]
    r: String,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArg,
}

fn cmd_clt(cmd: &CltCmd) -> Result<String, CritError> {
    let model = cmd.model.model()?;
    let l_set = cmd.model.index_set()?;
    let ns: Result<Vec<usize>, _> = cmd.n.split(',').map(|s| s.trim().parse()).collect();
    let ns = ns.map_err(|e| CritError::InvalidConfig(format!("bad n list: {e}")))?;
    let rs: Result<Vec<f64>, _> = cmd.r.split(',').map(|s| s.trim().parse()).collect();
    let rs = rs.map_err(|e| CritError::InvalidConfig(format!("bad r list: {e}")))?;
    let rho = intensity_closed_form(&model, &l_set)?;
    let eta = cmd.eta.unwrap_or_else(|| default_eta(rho, model.dim()));
    let seed = resolve_seed(cmd.seed);
    let report = clt_experiment(&model, &l_set, eta, &rs, &ns, cmd.reps, cmd.n_terms, seed)?;
    Ok(serde_json::to_string_pretty(&report).unwrap() + "\n")
}

fn exit_code(err: &CritError) -> i32 {
    match err {
        CritError::DegenerateJoint(_)
        | CritError::InsufficientSmoothness(_)
        | CritError::IntegrabilityViolation(_)
        | CritError::DegenerateField(_)
        | CritError::NonPositiveValues
        | CritError::EmptyPattern => 3,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let started = Instant::now();
    let result: Result<(), CritError> = (|| {
        match &cli.command {
            Command::Model(cmd) => cmd.out.write(&cmd_model(cmd)?),
            Command::Intensity(cmd) => cmd.out.write(&cmd_intensity(cmd)?),
            Command::Pcf(cmd) => cmd.out.write(&cmd_pcf(cmd)?),
            Command::Kfun(cmd) => cmd.out.write(&cmd_kfun(cmd)?),
            Command::Repulsion(cmd) => cmd.out.write(&cmd_repulsion(cmd)?),
            Command::Slope(cmd) => cmd.out.write(&cmd_slope(cmd)?),
            Command::Simulate(cmd) => cmd.out.write(&cmd_simulate(cmd)?),
            Command::Extract(cmd) => {
                let (csv, sidecar) = cmd_extract(cmd)?;
                cmd.out.write(&csv).and_then(|()| {
                    if let (Some(side), Some(path)) = (sidecar, &cmd.out.output) {
                        std::fs::write(
                            format!("{}.window.json", path.display()),
                            side,
                        )
                    } else {
                        Ok(())
                    }
                })
            }
            Command::Estimate(cmd) => cmd.out.write(&cmd_estimate(cmd)?),
            Command::Clt(cmd) => cmd.out.write(&cmd_clt(cmd)?),
        }
        .map_err(|e| CritError::InvalidConfig(format!("io error: {e}")))
    })();
    match result {
        Ok(()) => {
            if let Some(cap) = cli.time_cap_secs {
                if started.elapsed().as_secs() > cap {
                    eprintln!("error: runtime cap of {cap}s exceeded");
                    std::process::exit(4);
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
