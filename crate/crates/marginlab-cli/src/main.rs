//! Command-line driver: sample datasets, fit max-margin classifiers, audit
//! concentration events and theorem preconditions, evaluate risk and bounds,
//! compute geometric decompositions, and run parameter sweeps.
//!
//! Exit codes: 0 success, 2 validation error (bad inputs), 3 numerical
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use marginlab::classify::{
    cosine, hard_margin_oracle, logistic_gd, ls_interpolator, support_condition, Classifier,
};
use marginlab::error::Error;
use marginlab::events::{
    em_event_parameters, event_report, theorem_preconditions, verify_quad_bounds,
    TheoremChecklist, SUPPORTED_THEOREMS,
};
use marginlab::geometry::clean_noisy_decomposition;
use marginlab::gram::{
    expansion_vector, gram_quantities, woodbury_inverse,
};
use marginlab::model::{sample_dataset, Dataset, ModelSpec, XiLaw};
use marginlab::risk::{
    risk_bounds, sandwich_check, test_error_exact_spec, test_error_mc, zeta,
};
use marginlab::sweep::{
    emit_csv, emit_summary_csv, emit_svg, run_sweep, PlotScales, SweepConfig,
};

#[derive(Parser)]
#[command(name = "marginlab", version, about = "Numerical laboratory for benign overfitting of max-margin linear classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a model spec and save it as JSON.
    Gen(GenArgs),
    /// Fit a max-margin classifier to a saved dataset.
    Fit(FitArgs),
    /// Audit concentration events, proven inequalities, and theorem
    /// preconditions on a saved dataset.
    Audit(AuditArgs),
    /// Evaluate test error, bound values, and the error sandwich.
    Risk(RiskArgs),
    /// Compute the clean/noisy geometric decomposition of a fit.
    Geom(GeomArgs),
    /// Run a parameter sweep from a config file; write CSV and optional SVG.
    Sweep(SweepArgs),
    /// Run the full invariant suite on randomized instances.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Model spec JSON file.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ls,
    Oracle,
    Gd,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset JSON file produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ls")]
    method: MethodArg,
    /// Convergence tolerance (oracle method).
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: usize,
    /// Output classifier JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    data: PathBuf,
    /// Probability level for the predicted event parameters.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Theorem id for a precondition checklist (may repeat); `all` runs
    /// every supported checklist that applies.
    #[arg(long)]
    theorem: Vec<String>,
    /// JSON file of named constants (defaults to 1 where absent).
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Output JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RiskArgs {
    #[arg(long)]
    data: PathBuf,
    /// Classifier JSON from `fit`; defaults to refitting with `ls`.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    constants: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Absolute tolerance band for the sandwich check.
    #[arg(long, default_value_t = 0.0)]
    band: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GeomArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for rows.csv / summary.csv / plot.svg.
    #[arg(long)]
    out: PathBuf,
    /// Sweep axis to use as the SVG x axis (no SVG when absent).
    #[arg(long)]
    svg_x: Option<String>,
    /// Output names to plot (may repeat).
    #[arg(long)]
    svg_y: Vec<String>,
    #[arg(long, default_value_t = false)]
    x_log: bool,
    #[arg(long, default_value_t = false)]
    y_log: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn read_to_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn write_string(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| Error::InvalidArgument(format!("bad dataset JSON in {}: {e}", path.display())))
}

fn load_constants(path: &Option<PathBuf>) -> Result<BTreeMap<String, f64>, Error> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => serde_json::from_str(&read_to_string(p)?).map_err(|e| {
            Error::InvalidArgument(format!("bad constants JSON in {}: {e}", p.display()))
        }),
    }
}

fn load_classifier(
    path: &Option<PathBuf>,
    dataset: &Dataset,
) -> Result<Classifier, Error> {
    match path {
        Some(p) => Classifier::from_json(&read_to_string(p)?),
        None => ls_interpolator(dataset),
    }
}

/// Renders rows of (label, value) as an aligned two-column table.
fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("  {k:<width$}  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

fn checklist_table(c: &TheoremChecklist) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    for item in &c.common {
        rows.push((
            item.name.clone(),
            format!(
                "{} {} {}  [{}]",
                fmt(item.realized),
                item.relation,
                fmt(item.required),
                if item.pass { "ok" } else { "FAIL" }
            ),
        ));
    }
    for regime in &c.regimes {
        rows.push((
            format!("regime `{}`", regime.name),
            if regime.pass { "ok".into() } else { "FAIL".into() },
        ));
        for item in &regime.items {
            rows.push((
                format!("  {}", item.name),
                format!(
                    "{} {} {}  [{}]",
                    fmt(item.realized),
                    item.relation,
                    fmt(item.required),
                    if item.pass { "ok" } else { "FAIL" }
                ),
            ));
        }
    }
    rows.push(("overall".into(), if c.pass { "ok".into() } else { "FAIL".into() }));
    format!("theorem `{}` (delta = {}):\n{}", c.theorem, c.delta, table(&rows))
}

fn cmd_gen(args: &GenArgs) -> Result<(), Error> {
    let spec = ModelSpec::from_json(&read_to_string(&args.spec)?)?;
    let dataset = sample_dataset(&spec, args.seed)?;
    write_string(&args.out, &serde_json::to_string(&dataset).expect("serializable"))?;
    println!(
        "sampled n={} p={} (noisy labels: {}) with seed {} -> {}",
        dataset.n(),
        dataset.p(),
        dataset.noisy_count(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.data)?;
    let classifier = match args.method {
        MethodArg::Ls => ls_interpolator(&dataset)?,
        MethodArg::Oracle => hard_margin_oracle(&dataset, args.tol, args.max_iter)?,
        MethodArg::Gd => logistic_gd(&dataset, None, args.max_iter, 0)?.final_classifier,
    };
    let support = support_condition(&dataset)?;
    let rows = vec![
        ("method".to_string(), format!("{:?}", classifier.method)),
        ("min margin".to_string(), fmt(classifier.min_margin())),
        ("separates".to_string(), classifier.separates().to_string()),
        ("support condition".to_string(), support.holds.to_string()),
        ("iterations".to_string(), format!("{:?}", classifier.iterations)),
        ("converged".to_string(), classifier.converged.to_string()),
    ];
    println!("{}", table(&rows));
    if let Some(out) = &args.out {
        write_string(out, &classifier.to_json())?;
    }
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.data)?;
    let constants = load_constants(&args.constants)?;
    let predicted = em_event_parameters(&dataset.spec, args.delta)?;
    let report = event_report(&dataset, &predicted.thresholds())?;
    let gram = gram_quantities(&dataset)?;
    let bound_checks = verify_quad_bounds(&dataset, &gram, &report)?;

    let rows = vec![
        ("eps (realized / threshold)".to_string(),
            format!("{} / {}", fmt(report.eps_realized), fmt(report.thresholds.eps))),
        ("alpha2".to_string(),
            format!("{} / {}", fmt(report.alpha2_realized), fmt(report.thresholds.alpha2))),
        ("alpha_inf".to_string(),
            format!("{} / {}", fmt(report.alpha_inf_realized), fmt(report.thresholds.alpha_inf))),
        ("max row norm".to_string(),
            format!("{} / {}", fmt(report.m_realized), fmt(report.thresholds.m_cap))),
        ("beta".to_string(),
            format!("{} / {}", fmt(report.beta_realized), fmt(report.thresholds.beta))),
        ("gamma".to_string(),
            format!("{} / {}", fmt(report.gamma_realized), fmt(report.thresholds.gamma))),
        ("events (E1..E5)".to_string(),
            format!("{} {} {} {} {}",
                report.holds.e1, report.holds.e2, report.holds.e3,
                report.holds.e4, report.holds.e5)),
        ("threshold gate passes".to_string(), predicted.gate_passes.to_string()),
    ];
    println!("event audit (delta = {}):\n{}", args.delta, table(&rows));

    let violations: Vec<&str> = bound_checks
        .iter()
        .filter(|c| c.is_violation())
        .map(|c| c.name.as_str())
        .collect();
    if violations.is_empty() {
        println!("proven-inequality audit: no violations ({} checks)", bound_checks.len());
    } else {
        println!("proven-inequality audit: VIOLATIONS: {}", violations.join(", "));
    }

    let requested: Vec<String> = if args.theorem.iter().any(|t| t == "all") {
        SUPPORTED_THEOREMS.iter().map(|s| s.to_string()).collect()
    } else {
        args.theorem.clone()
    };
    let mut checklists = Vec::new();
    for id in &requested {
        match theorem_preconditions(&dataset.spec, args.delta, id, &constants) {
            Ok(c) => {
                println!("{}", checklist_table(&c));
                checklists.push(c);
            }
            Err(e) if args.theorem.iter().any(|t| t == "all") && e.is_validation() => {
                println!("theorem `{id}`: not applicable ({e})");
            }
            Err(e) => return Err(e),
        }
    }

    if let Some(out) = &args.out {
        let payload = serde_json::json!({
            "events": report,
            "predicted": predicted,
            "bound_checks": bound_checks,
            "checklists": checklists,
        });
        write_string(out, &serde_json::to_string_pretty(&payload).expect("serializable"))?;
    }
    if !violations.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "proven inequalities violated: {}",
            violations.join(", ")
        )));
    }
    Ok(())
}

fn cmd_risk(args: &RiskArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.data)?;
    let spec = &dataset.spec;
    let constants = load_constants(&args.constants)?;
    let classifier = load_classifier(&args.classifier, &dataset)?;
    let mu = spec.mu_vector();

    let mut rows: Vec<(String, String)> = Vec::new();
    let exact = if spec.is_gaussian_noise() {
        let e = test_error_exact_spec(&classifier.w, spec)?;
        rows.push(("exact test error".into(), fmt(e.value)));
        Some(e.value)
    } else {
        None
    };
    let mc = test_error_mc(&classifier.w, spec, args.n_mc, args.seed)?;
    rows.push((
        format!("mc test error (n={})", args.n_mc),
        format!("{} +/- {}", fmt(mc.value), fmt(mc.standard_error)),
    ));
    let z = zeta(&classifier.w, &mu)?;
    rows.push(("zeta".into(), fmt(z)));

    let rho = spec.g.law.moment(-2.0) / spec.sigma.trace();
    let bounds = risk_bounds(spec.eta, spec.n as f64 * rho, mu.norm(), spec.sigma.op_norm(), &constants)?;
    rows.push((
        "noiseless polynomial bound".into(),
        format!(
            "{}{}",
            fmt(bounds.noiseless_bound.value),
            if bounds.noiseless_bound.vacuous { " (vacuous)" } else { "" }
        ),
    ));
    if let Some(b) = &bounds.noisy_bound {
        rows.push((
            "noisy polynomial bound".into(),
            format!("{}{}", fmt(b.value), if b.vacuous { " (vacuous)" } else { "" }),
        ));
    }

    let sandwich = if 0.0 < spec.eta && spec.eta < 0.5 && matches!(spec.xi, XiLaw::Gaussian) {
        let s = sandwich_check(&dataset, &classifier, args.band, args.n_mc, args.seed)?;
        rows.push((
            "sandwich (lower/excess/upper)".into(),
            format!(
                "{} <= {} <= {}  [{}]",
                fmt(s.lower),
                fmt(s.observed_excess),
                fmt(s.upper),
                if s.pass { "ok" } else { "FAIL" }
            ),
        ));
        Some(s)
    } else {
        rows.push(("sandwich".into(), "skipped (needs Gaussian xi and eta in (0,1/2))".into()));
        None
    };
    println!("{}", table(&rows));

    if let Some(out) = &args.out {
        let payload = serde_json::json!({
            "exact": exact,
            "monte_carlo": mc,
            "zeta": z,
            "bounds": bounds,
            "sandwich": sandwich,
        });
        write_string(out, &serde_json::to_string_pretty(&payload).expect("serializable"))?;
    }
    Ok(())
}

fn cmd_geom(args: &GeomArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.data)?;
    let classifier = load_classifier(&args.classifier, &dataset)?;
    let decomposition = clean_noisy_decomposition(&dataset, &classifier)?;
    let rows = vec![
        ("nu_c (clean mass)".to_string(), fmt(decomposition.nu_c)),
        ("nu_n (noisy mass)".to_string(), fmt(decomposition.nu_n)),
        ("reconstruction residual".to_string(), fmt(decomposition.reconstruction_residual)),
        ("clean side empty".to_string(), decomposition.clean_empty.to_string()),
        ("noisy side empty".to_string(), decomposition.noisy_empty.to_string()),
    ];
    println!("{}", table(&rows));
    if let Some(out) = &args.out {
        write_string(out, &decomposition.to_json())?;
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let config = SweepConfig::from_json(&read_to_string(&args.config)?)?;
    let table_data = run_sweep(&config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::Io { path: args.out.display().to_string(), source: e })?;
    let rows_path = args.out.join("rows.csv");
    let summary_path = args.out.join("summary.csv");
    emit_csv(&table_data, &rows_path)?;
    emit_summary_csv(&table_data, &summary_path)?;
    let ok = table_data.rows.iter().filter(|r| r.status == "ok").count();
    println!(
        "sweep complete: {} rows ({} ok) -> {}, {}",
        table_data.rows.len(),
        ok,
        rows_path.display(),
        summary_path.display()
    );
    if let Some(x_axis) = &args.svg_x {
        let svg_path = args.out.join("plot.svg");
        let ys: Vec<&str> = if args.svg_y.is_empty() {
            table_data.output_names.iter().map(|s| s.as_str()).collect()
        } else {
            args.svg_y.iter().map(|s| s.as_str()).collect()
        };
        emit_svg(
            &table_data,
            x_axis,
            &ys,
            PlotScales { x_log: args.x_log, y_log: args.y_log },
            &svg_path,
        )?;
        println!("plot -> {}", svg_path.display());
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Error> {
    use marginlab::model::{GLawSpec, MuSpec, SigmaSpec};
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("  [{}] {name}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    for trial in 0..10u64 {
        let spec = ModelSpec {
            mu: MuSpec::Axis { norm: 2.0 },
            sigma: SigmaSpec::Identity { p: 60 },
            eta: if trial % 2 == 0 { 0.2 } else { 0.0 },
            g: GLawSpec::constant_one(),
            xi: XiLaw::Gaussian,
            n: 8,
            p: 60,
        };
        let dataset = sample_dataset(&spec, args.seed.wrapping_add(trial))?;
        let gram = gram_quantities(&dataset)?;

        let xxt = dataset.x.clone() * dataset.x.transpose();
        let direct = xxt.clone().try_inverse().ok_or_else(|| {
            Error::SingularGram { min_eig: 0.0, max_eig: 0.0 }
        })?;
        let wood = woodbury_inverse(&gram)?;
        check(
            &format!("closed-form gram inverse matches direct solve (trial {trial})"),
            (&wood - &direct).norm() / direct.norm() <= 1e-8,
        );

        let v = expansion_vector(&gram)?;
        let resid = (&xxt * &v - DVector::from_iterator(dataset.n(), dataset.y_noisy.iter().cloned())).norm();
        check(
            &format!("expansion vector solves the normal system (trial {trial})"),
            resid <= 1e-8 * dataset.y_noisy.norm().max(1.0),
        );

        let classifier = ls_interpolator(&dataset)?;
        let decomposition = clean_noisy_decomposition(&dataset, &classifier)?;
        check(
            &format!("clean/noisy reconstruction identity (trial {trial})"),
            decomposition.reconstruction_residual <= 1e-8,
        );

        let oracle = hard_margin_oracle(&dataset, 1e-10, 1_000_000)?;
        let sc = support_condition(&dataset)?;
        if sc.holds {
            check(
                &format!("oracle direction agrees with interpolator (trial {trial})"),
                cosine(&oracle.w, &classifier.w) >= 1.0 - 1e-8,
            );
        }

        let a = sample_dataset(&spec, args.seed.wrapping_add(trial))?;
        check(
            &format!("sampling is seed-deterministic (trial {trial})"),
            a.x == dataset.x && a.y_noisy == dataset.y_noisy,
        );
    }

    if failures == 0 {
        println!("verify: all checks passed");
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{failures} invariant checks failed")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Risk(args) => cmd_risk(args),
        Command::Geom(args) => cmd_geom(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
