use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hicorr_core::data::check_uvc;
use hicorr_core::inference::PairInference;
use hicorr_core::shrinkage::{
    cross_validate_kappa, shrinkage_estimate, CvConfig, DEFAULT_KAPPA_GRID,
};
use hicorr_core::sim::{run_study, StudyConfig};
use hicorr_core::table::{fmt_f64, format_matrix};
use hicorr_core::{
    aggregate, baseline_correlation, estimate, fisher_test, infer_all, BindingMap, CovEstimate,
    CrossProducts, DMatrix, Error, ErrorKind, Method, MomentEngine, SampleMatrix, UniqueSets,
    VDenominator,
};
use serde_json::{json, Value};

use crate::args::{Cli, Command, InputArgs, ShrinkArgs, TestArgs};
use crate::output::Run;

const DEFAULT_SEED: u64 = 1;

/// A command failure with its exit-code class.
#[derive(Debug)]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ErrorKind::Validation => "validation",
            ErrorKind::Io => "io",
            ErrorKind::Numerical => "numerical",
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        kind: ErrorKind::Validation,
        message: msg.into(),
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Validate { binding } => validate(binding),
        Command::Estimate {
            input,
            shrink,
            shrink_args,
            v_denominator,
        } => cmd_estimate(
            &cli.out,
            input,
            shrink.then_some(shrink_args),
            *v_denominator,
            seed,
        ),
        Command::Infer { input, test } => cmd_infer(&cli.out, input, test),
        Command::Shrink {
            input,
            shrink_args,
            v_denominator,
        } => cmd_shrink(&cli.out, input, shrink_args, *v_denominator, seed),
        Command::Aggregate { input, method } => cmd_aggregate(&cli.out, input, method),
        Command::Compare {
            input,
            test,
            method,
        } => cmd_compare(&cli.out, input, test, method),
        Command::Simulate { config, reps } => cmd_simulate(&cli.out, config, *reps, cli.seed),
    }
}

// ---- validate ---------------------------------------------------------------

/// Two-line summary: sizes, then unique counts per higher-level variable.
pub fn validate_report(map: &BindingMap, sets: &UniqueSets) -> String {
    let mut parts: Vec<String> = map
        .higher_names()
        .iter()
        .enumerate()
        .map(|(l, name)| format!("{name}: {} unique", sets.size(l)))
        .collect();
    parts.push(format!("shared: {}", sets.shared.len()));
    let bad = sets.violations();
    if bad.is_empty() {
        parts.push("UVC: PASS".into());
    } else {
        let names: Vec<&str> = bad
            .iter()
            .map(|&l| map.higher_names()[l].as_str())
            .collect();
        parts.push(format!("UVC: FAIL ({})", names.join(", ")));
    }
    format!("q: {}; p: {}\n{}", map.q(), map.p(), parts.join("; "))
}

fn validate(binding: &Path) -> Outcome {
    let map = BindingMap::read(binding)?;
    let sets = UniqueSets::derive(&map);
    println!("{}", validate_report(&map, &sets));
    let bad = sets.violations();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Uvc(bad.iter().map(|&l| map.higher_names()[l].clone()).collect()).into())
    }
}

// ---- shared loading ---------------------------------------------------------

struct Loaded {
    map: BindingMap,
    sets: UniqueSets,
    z: SampleMatrix,
}

fn input_config(input: &InputArgs) -> Value {
    json!({
        "data": input.data.display().to_string(),
        "binding": input.binding.display().to_string(),
        "center": input.centered(),
        "uvc": format!("{:?}", input.uvc).to_lowercase(),
    })
}

fn load(input: &InputArgs, run: &mut Run) -> Outcome<Loaded> {
    let original = run.time("read_binding", || BindingMap::read(&input.binding))?;
    let checked = check_uvc(&original, input.uvc)?;
    if !checked.dropped_higher.is_empty() {
        run.warn(format!(
            "dropped {} higher-level variable(s) failing the unique-variable condition: {}",
            checked.dropped_higher.len(),
            checked.dropped_higher.join(", ")
        ));
    }
    if !checked.dropped_lower.is_empty() {
        run.warn(format!(
            "dropped {} lower-level variable(s) left without a parent",
            checked.dropped_lower.len()
        ));
    }
    let full = run.time("read_data", || {
        SampleMatrix::read(&input.data, &original, input.centered())
    })?;
    let z = if checked.dropped_lower.is_empty() {
        full
    } else {
        let idx: Vec<usize> = checked
            .map
            .lower_names()
            .iter()
            .map(|name| {
                original
                    .lower_names()
                    .iter()
                    .position(|o| o == name)
                    .unwrap()
            })
            .collect();
        full.select_columns(&idx)
    };
    if !input.centered() {
        run.warn("columns not centered; estimates assume mean-zero data");
    }
    Ok(Loaded {
        map: checked.map,
        sets: checked.sets,
        z,
    })
}

fn sample_names(z: &SampleMatrix) -> Vec<String> {
    match z.sample_ids() {
        Some(ids) => ids.to_vec(),
        None => (1..=z.n()).map(|i| format!("s{i}")).collect(),
    }
}

fn names_of(map: &BindingMap, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&l| map.higher_names()[l].clone()).collect()
}

fn check_test_args(test: &TestArgs) -> Outcome {
    if !(test.xi >= 0.0 && test.xi.is_finite()) {
        return Err(invalid(format!(
            "--xi must be a finite number >= 0, got {}",
            test.xi
        )));
    }
    if !(test.alpha > 0.0 && test.alpha < 1.0) {
        return Err(invalid(format!(
            "--alpha must lie in (0, 1), got {}",
            test.alpha
        )));
    }
    Ok(())
}

fn note_estimate(run: &mut Run, loaded: &Loaded, cov: &CovEstimate) -> Value {
    let invalid = cov.invalid();
    if !invalid.is_empty() {
        run.warn(format!(
            "non-positive variance estimate for {}; their correlations are undefined",
            names_of(&loaded.map, &invalid).join(", ")
        ));
    }
    if !cov.out_of_range.is_empty() {
        run.warn(format!(
            "{} correlation estimate(s) outside [-1, 1]",
            cov.out_of_range.len()
        ));
    }
    let names = loaded.map.higher_names();
    json!({
        "n": loaded.z.n(),
        "p": loaded.map.p(),
        "q": loaded.map.q(),
        "centered": loaded.z.is_centered(),
        "unique_sizes": (0..loaded.sets.p()).map(|l| loaded.sets.size(l)).collect::<Vec<_>>(),
        "shared": loaded.sets.shared.len(),
        "undefined": names_of(&loaded.map, &invalid),
        "out_of_range": cov.out_of_range.iter().map(|&(l, k)| [names[l].clone(), names[k].clone()]).collect::<Vec<_>>(),
    })
}

// ---- estimate / shrink ------------------------------------------------------

fn cmd_estimate(
    out: &Path,
    input: &InputArgs,
    shrink: Option<&ShrinkArgs>,
    denom: VDenominator,
    seed: u64,
) -> Outcome {
    let mut config = input_config(input);
    if let Some(s) = shrink {
        config["shrink"] = shrink_config(s, denom, seed);
    }
    let mut run = Run::new(out, "estimate", config)?;
    let loaded = load(input, &mut run)?;
    let (c, cov) = run.time("estimate", || estimate(&loaded.z, &loaded.sets))?;
    let names = loaded.map.higher_names();
    run.write(
        "covariance.tsv",
        &format_matrix("higher", names, names, &cov.sigma_hat),
    )?;
    run.write(
        "correlation.tsv",
        &format_matrix("higher", names, names, &cov.r_hat),
    )?;
    let mut result = note_estimate(&mut run, &loaded, &cov);
    if let Some(s) = shrink {
        result["shrink"] = shrink_step(&mut run, &loaded, &c, &cov, s, denom, seed)?;
    }
    run.finish(result)?;
    Ok(())
}

fn cmd_shrink(
    out: &Path,
    input: &InputArgs,
    s: &ShrinkArgs,
    denom: VDenominator,
    seed: u64,
) -> Outcome {
    let mut config = input_config(input);
    config["shrink"] = shrink_config(s, denom, seed);
    let mut run = Run::new(out, "shrink", config)?;
    let loaded = load(input, &mut run)?;
    let (c, cov) = run.time("estimate", || estimate(&loaded.z, &loaded.sets))?;
    let mut result = note_estimate(&mut run, &loaded, &cov);
    result["shrink"] = shrink_step(&mut run, &loaded, &c, &cov, s, denom, seed)?;
    run.finish(result)?;
    Ok(())
}

fn shrink_config(s: &ShrinkArgs, denom: VDenominator, seed: u64) -> Value {
    json!({
        "kappa": s.kappa,
        "cv_grid": s.cv_grid.clone().unwrap_or_else(|| DEFAULT_KAPPA_GRID.to_vec()),
        "cv_splits": s.cv_splits,
        "split_ratio": s.split_ratio,
        "seed": seed,
        "v_denominator": denom,
    })
}

fn shrink_step(
    run: &mut Run,
    loaded: &Loaded,
    c: &CrossProducts,
    cov: &CovEstimate,
    s: &ShrinkArgs,
    denom: VDenominator,
    seed: u64,
) -> Outcome<Value> {
    if !cov.all_valid() {
        return Err(Failure {
            kind: ErrorKind::Numerical,
            message: format!(
                "shrinkage needs positive variance estimates; drop {} and rerun",
                names_of(&loaded.map, &cov.invalid()).join(", ")
            ),
        });
    }
    let (kappa, cv) = if s.kappa.eq_ignore_ascii_case("cv") {
        let cfg = CvConfig {
            grid: s
                .cv_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_KAPPA_GRID.to_vec()),
            splits: s.cv_splits,
            split_ratio: s.split_ratio,
            seed,
            denom,
        };
        let report = run.time("cross_validation", || {
            cross_validate_kappa(&loaded.z, &loaded.sets, &cfg)
        })?;
        (report.chosen_kappa, Some(report))
    } else {
        let k: f64 = s.kappa.parse().map_err(|_| {
            invalid(format!(
                "--kappa must be a positive number or `cv`, got {:?}",
                s.kappa
            ))
        })?;
        (k, None)
    };
    let engine = MomentEngine::new(&loaded.z, c, &loaded.sets, denom);
    let res = run.time("shrink", || shrinkage_estimate(&engine, cov, kappa))?;
    if res.risk_clamped {
        run.warn("risk-minimizing weight fell outside [0, 1) and was clamped");
    }
    let names = loaded.map.higher_names();
    run.write(
        "covariance_sh.tsv",
        &format_matrix("higher", names, names, &res.sigma_sh),
    )?;
    run.write(
        "correlation_sh.tsv",
        &format_matrix("higher", names, names, &res.r_sh),
    )?;
    Ok(json!({ "estimate": res, "cv": cv }))
}

// ---- infer ------------------------------------------------------------------

fn pair_rows(table: hicorr_core::InferenceTable) -> Vec<PairInference> {
    let mut rows: Vec<PairInference> = table.pairs.into_iter().chain(table.skipped).collect();
    rows.sort_by_key(|r| (r.l, r.k));
    rows
}

fn cmd_infer(out: &Path, input: &InputArgs, test: &TestArgs) -> Outcome {
    check_test_args(test)?;
    let mut config = input_config(input);
    config["xi"] = json!(test.xi);
    config["alpha"] = json!(test.alpha);
    config["v_denominator"] = json!(test.v_denominator);
    let mut run = Run::new(out, "infer", config)?;
    let loaded = load(input, &mut run)?;
    let (c, cov) = run.time("estimate", || estimate(&loaded.z, &loaded.sets))?;
    let engine = MomentEngine::new(&loaded.z, &c, &loaded.sets, test.v_denominator);
    let table = run.time("infer", || infer_all(&engine, &cov, test.xi))?;
    let skipped = table.skipped.len();
    let rows = pair_rows(table);

    let names = loaded.map.higher_names();
    let mut text = String::from(
        "higher_l\thigher_k\tr_hat\tdelta2\tt_plus\tt_minus\tp_value\tp_bh\tsignificant\tflags\n",
    );
    let mut significant = 0usize;
    for r in &rows {
        let sig = r.p_value < test.alpha;
        significant += usize::from(sig);
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            names[r.l],
            names[r.k],
            fmt_f64(r.r_hat),
            fmt_f64(r.delta2_hat),
            fmt_f64(r.t_plus),
            fmt_f64(r.t_minus),
            fmt_f64(r.p_value),
            fmt_f64(r.p_bh),
            sig,
            flags.join(",")
        );
    }
    run.write("pairs.tsv", &text)?;
    let mut result = note_estimate(&mut run, &loaded, &cov);
    result["tests"] = json!(rows.len());
    result["skipped"] = json!(skipped);
    result["significant"] = json!(significant);
    result["percent_significant"] = json!(percent(significant, rows.len()));
    run.finish(result)?;
    Ok(())
}

fn percent(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

// ---- aggregate / compare ----------------------------------------------------

fn methods_or_all(m: &[Method]) -> Vec<Method> {
    if m.is_empty() {
        Method::ALL.to_vec()
    } else {
        m.to_vec()
    }
}

/// Baseline correlation expanded to all `p` higher-level variables, NaN
/// where a variable has no usable score.
fn baseline_full(
    loaded: &Loaded,
    m: Method,
    run: &mut Run,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let scores = run.time(&format!("aggregate_{}", m.name()), || {
        aggregate(&loaded.z, &loaded.map, &loaded.sets, m)
    });
    for (l, why) in &scores.skipped {
        run.warn(format!(
            "{}: no score for {} ({why})",
            m.name(),
            loaded.map.higher_names()[*l]
        ));
    }
    let (r, undefined) = baseline_correlation(&scores.scores);
    for &i in &undefined {
        run.warn(format!(
            "{}: constant score for {}; correlation undefined",
            m.name(),
            loaded.map.higher_names()[scores.columns[i]]
        ));
    }
    let p = loaded.map.p();
    let mut pos = vec![None; p];
    for (i, &l) in scores.columns.iter().enumerate() {
        pos[l] = Some(i);
    }
    let full = DMatrix::from_fn(p, p, |a, b| match (pos[a], pos[b]) {
        (Some(i), Some(j)) => r[(i, j)],
        _ => f64::NAN,
    });
    (scores.scores, full, scores.columns)
}

fn cmd_aggregate(out: &Path, input: &InputArgs, method: &[Method]) -> Outcome {
    let methods = methods_or_all(method);
    let mut config = input_config(input);
    config["methods"] = json!(methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    let mut run = Run::new(out, "aggregate", config)?;
    let loaded = load(input, &mut run)?;
    let samples = sample_names(&loaded.z);
    let names = loaded.map.higher_names();
    let mut summary = Vec::new();
    for m in methods {
        let (scores, r, columns) = baseline_full(&loaded, m, &mut run);
        let cols = names_of(&loaded.map, &columns);
        run.write(
            &format!("scores_{}.tsv", m.name()),
            &format_matrix("sample", &samples, &cols, &scores),
        )?;
        run.write(
            &format!("correlation_{}.tsv", m.name()),
            &format_matrix("higher", names, names, &r),
        )?;
        summary.push(json!({ "method": m.name(), "scored": columns.len() }));
    }
    run.finish(json!({ "n": loaded.z.n(), "p": loaded.map.p(), "methods": summary }))?;
    Ok(())
}

fn cmd_compare(out: &Path, input: &InputArgs, test: &TestArgs, method: &[Method]) -> Outcome {
    check_test_args(test)?;
    let methods = methods_or_all(method);
    let mut config = input_config(input);
    config["xi"] = json!(test.xi);
    config["alpha"] = json!(test.alpha);
    config["v_denominator"] = json!(test.v_denominator);
    config["methods"] = json!(methods.iter().map(|m| m.name()).collect::<Vec<_>>());
    let mut run = Run::new(out, "compare", config)?;
    let loaded = load(input, &mut run)?;
    let n = loaded.z.n();
    let p = loaded.map.p();
    let names = loaded.map.higher_names();

    let (c, cov) = run.time("estimate", || estimate(&loaded.z, &loaded.sets))?;
    let engine = MomentEngine::new(&loaded.z, &c, &loaded.sets, test.v_denominator);
    let direct = pair_rows(run.time("infer", || infer_all(&engine, &cov, test.xi))?);
    let direct_sig: Vec<bool> = direct.iter().map(|r| r.p_value < test.alpha).collect();

    let mut text = String::from("method\thigher_l\thigher_k\tr\tp_value\tsignificant\n");
    let mut summary = Vec::new();
    for (r, &sig) in direct.iter().zip(&direct_sig) {
        let _ = writeln!(
            text,
            "DIR\t{}\t{}\t{}\t{}\t{sig}",
            names[r.l],
            names[r.k],
            fmt_f64(r.r_hat),
            fmt_f64(r.p_value)
        );
    }
    let dir_count = direct_sig.iter().filter(|&&s| s).count();
    summary.push(json!({
        "method": "DIR",
        "tests": direct.len(),
        "significant": dir_count,
        "percent_significant": percent(dir_count, direct.len()),
    }));

    for m in methods {
        let (_, r, _) = baseline_full(&loaded, m, &mut run);
        let (mut tests, mut sig_count, mut shared) = (0usize, 0usize, 0usize);
        let mut idx = 0;
        for l in 0..p {
            for k in (l + 1)..p {
                let dir_sig = direct_sig[idx];
                idx += 1;
                let rv = r[(l, k)];
                if rv.is_nan() {
                    continue;
                }
                let f = fisher_test(rv, n, test.xi)?;
                let sig = f.p_value < test.alpha;
                tests += 1;
                sig_count += usize::from(sig);
                shared += usize::from(sig && dir_sig);
                let _ = writeln!(
                    text,
                    "{}\t{}\t{}\t{}\t{}\t{sig}",
                    m.name(),
                    names[l],
                    names[k],
                    fmt_f64(rv),
                    fmt_f64(f.p_value)
                );
            }
        }
        summary.push(json!({
            "method": m.name(),
            "tests": tests,
            "significant": sig_count,
            "percent_significant": percent(sig_count, tests),
            "percent_also_direct": percent(shared, sig_count),
        }));
    }
    run.write("compare.tsv", &text)?;
    run.finish(json!({ "n": n, "p": p, "methods": summary }))?;
    Ok(())
}

// ---- simulate ---------------------------------------------------------------

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_f64)
}

fn cmd_simulate(out: &Path, config: &Path, reps: Option<usize>, seed: Option<u64>) -> Outcome {
    let text = fs::read_to_string(config).map_err(|e| {
        Error::from(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", config.display()),
        ))
    })?;
    let mut cfg = StudyConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    let echo = serde_json::to_value(&cfg).map_err(|e| invalid(e.to_string()))?;
    let mut run = Run::new(
        out,
        "simulate",
        json!({ "config_file": config.display().to_string(), "study": echo }),
    )?;
    let report = run.time("study", || run_study(&cfg))?;

    let mut long = String::from(
        "rep\tmethod\tfne\tnull_rejected\tnull_tests\talt_rejected\talt_tests\terror\n",
    );
    for rec in &report.reps {
        for o in &rec.outcomes {
            let (mut nr, mut nt, mut ar, mut at) = (0usize, 0usize, 0usize, 0usize);
            for (j, rej) in o.rejections.iter().enumerate() {
                if let Some(rej) = rej {
                    if report.null_pair[j] {
                        nt += 1;
                        nr += usize::from(*rej);
                    } else {
                        at += 1;
                        ar += usize::from(*rej);
                    }
                }
            }
            let _ = writeln!(
                long,
                "{}\t{}\t{}\t{nr}\t{nt}\t{ar}\t{at}\t{}",
                rec.rep,
                o.method.name(),
                opt(o.fne),
                o.error.as_deref().unwrap_or("")
            );
        }
    }
    run.write("simulation.tsv", &long)?;

    let mut summary = String::from(
        "method\tfne_median\tfne_mean\tfne_count\tfailures\ttype1\tpower\tnull_tests\talt_tests\n",
    );
    println!(
        "{:<8} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "method", "FNE med", "FNE mean", "fail", "type-I", "power"
    );
    for s in &report.summaries {
        let _ = writeln!(
            summary,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.method.name(),
            fmt_f64(s.fne_median),
            fmt_f64(s.fne_mean),
            s.fne_count,
            s.failures,
            opt(s.type1),
            opt(s.power),
            s.null_tests,
            s.alt_tests
        );
        let short = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>8} {:>8} {:>8}",
            s.method.name(),
            s.fne_median,
            s.fne_mean,
            s.failures,
            short(s.type1),
            short(s.power)
        );
        if s.failures > 0 {
            run.warn(format!(
                "{}: {} replication(s) without a usable estimate",
                s.method.name(),
                s.failures
            ));
        }
    }
    run.write("summary.tsv", &summary)?;
    let shrink: Vec<_> = report.reps.iter().map(|r| &r.shrink).collect();
    run.finish(json!({
        "max_abs_correlation": report.max_abs_correlation,
        "pairs": report.pairs.len(),
        "null_pairs": report.null_pair.iter().filter(|&&b| b).count(),
        "summaries": report.summaries,
        "shrink": shrink,
    }))?;
    Ok(())
}
