use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use netsurv::baseline_pp::{pohar_perme, PPSubject};
use netsurv::copulas::{CopulaFamily, CopulaSpec};
use netsurv::inference::{self, FitOptions, FitResult, NetSurvivalEstimate};
use netsurv::lifetable::{self, LifeTable, LifeTables, Sex, SubjectRecord};
use netsurv::likelihood::LikelihoodProblem;
use netsurv::simulate::{self, SimulationError, SimulationReport, StudyFile};

use crate::error::CliError;
use crate::output::{self, percent, permille, raw, Manifest, Outputs};
use crate::{DataArgs, ModelArgs, TableArgs};

/// Age bands at diagnosis, inclusive on both ends in completed years.
pub const AGE_BANDS: [(u32, u32); 5] = [(15, 44), (45, 54), (55, 64), (65, 74), (75, 99)];

/// Prefixes a file path onto an error message, keeping its exit code.
fn in_file(path: &Path, e: CliError) -> CliError {
    let msg = format!("{}: {e}", path.display());
    match e {
        CliError::Parse(_) => CliError::Parse(msg),
        CliError::Coverage(_) => CliError::Coverage(msg),
        CliError::Optimization(_) => CliError::Optimization(msg),
        CliError::Other(_) => CliError::Other(msg),
    }
}

fn load_tables(args: &TableArgs, manifest: &mut Manifest) -> Result<LifeTables, CliError> {
    let mut load = |path: &Option<std::path::PathBuf>, sex: Sex| -> Result<Option<LifeTable>, CliError> {
        let Some(path) = path else { return Ok(None) };
        let bytes = output::read_file(path)?;
        manifest.input(&format!("table_{}", sex.to_string().to_lowercase()), path, &bytes);
        lifetable::parse_hmd(bytes.as_slice(), sex)
            .map(Some)
            .map_err(|e| in_file(path, e.into()))
    };
    let female = load(&args.table_f, Sex::F)?;
    let male = load(&args.table_m, Sex::M)?;
    if female.is_none() && male.is_none() {
        return Err(CliError::Parse("at least one of --table-f and --table-m is required".into()));
    }
    Ok(LifeTables::new(female, male))
}

fn load_cohort(path: &Path, manifest: &mut Manifest) -> Result<Vec<SubjectRecord>, CliError> {
    let bytes = output::read_file(path)?;
    manifest.input("cohort", path, &bytes);
    lifetable::read_cohort_csv(bytes.as_slice()).map_err(|e| in_file(path, e.into()))
}

fn load_data(data: &DataArgs, manifest: &mut Manifest) -> Result<(Vec<SubjectRecord>, LifeTables), CliError> {
    let cohort = load_cohort(&data.cohort, manifest)?;
    let tables = load_tables(&data.tables, manifest)?;
    Ok((cohort, tables))
}

fn check_times(times: &[f64]) -> Result<(), CliError> {
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CliError::Parse(format!("--times must be non-negative numbers, got {times:?}")));
    }
    Ok(())
}

fn copula_for(family: CopulaFamily, tau: f64) -> Result<CopulaSpec, CliError> {
    if family == CopulaFamily::Product && tau == 0.0 {
        return Ok(CopulaSpec::Product);
    }
    CopulaSpec::from_tau(family, tau).map_err(|e| CliError::Parse(format!("--tau: {e}")))
}

fn record_model(manifest: &mut Manifest, model: &ModelArgs) {
    manifest.set("family", model.family.name());
    manifest.set("times", join(&model.times));
    manifest.set("seed", model.seed);
    manifest.set("starts", model.starts);
}

fn fit_options(model: &ModelArgs) -> FitOptions {
    FitOptions {
        starts: model.starts,
        ..FitOptions::default()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn check_tables(args: &TableArgs, cohort: Option<&Path>) -> Result<(), CliError> {
    let mut manifest = Manifest::new("check-tables");
    let tables = load_tables(args, &mut manifest)?;
    for table in [&tables.female, &tables.male].into_iter().flatten() {
        let (first, last) = table.years();
        println!(
            "sex {}: years {first}-{last}, ages 0-{}, {} cells",
            table.sex(),
            table.max_age(),
            table.len()
        );
    }
    let Some(path) = cohort else { return Ok(()) };
    let subjects = load_cohort(path, &mut manifest)?;
    let mut failures = Vec::new();
    for s in &subjects {
        if let Err(e) = tables.match_subject(s, s.follow_up) {
            failures.push(format!("subject {}: {e}", s.id));
        }
    }
    if failures.is_empty() {
        println!("all {} subjects covered through their follow-up", subjects.len());
        return Ok(());
    }
    for f in &failures {
        eprintln!("{f}");
    }
    Err(CliError::Coverage(format!(
        "{} of {} subjects not covered; first: {}",
        failures.len(),
        subjects.len(),
        failures[0]
    )))
}

fn estimate_rows(est: &NetSurvivalEstimate) -> Vec<Vec<String>> {
    est.times
        .iter()
        .zip(&est.survival)
        .zip(&est.std_err)
        .map(|((t, s), se)| vec![t.to_string(), percent(Some(*s)), permille(Some(*se))])
        .collect()
}

fn fit_summary(fit: &FitResult, problem: &LikelihoodProblem, copula: &CopulaSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "family {}, copula {}, tau {}, subjects {}, events {}",
        problem.family().name(),
        copula.family().name(),
        fit.tau,
        problem.observations().len(),
        problem.n_events()
    );
    let _ = writeln!(s, "log-likelihood {:.6}, converged {}", fit.loglik, fit.converged);
    let se: Vec<f64> = fit.covariance().variances().iter().map(|v| v.sqrt()).collect();
    for ((name, eta), se) in problem.family().param_names().iter().zip(&fit.eta_hat).zip(se) {
        let _ = writeln!(s, "  {name} = {eta:.6} (SE {})", raw(Some(se)));
    }
    s
}

fn warn_fit(fit: &FitResult, est: &NetSurvivalEstimate, label: &str) {
    if !fit.positive_definite {
        warn!("{label}: observed information is not positive definite; standard errors use a pseudo-inverse");
    }
    if fit.at_boundary {
        warn!("{label}: estimate lies at a parameter bound");
    }
    if let Some(w) = &est.warning {
        warn!("{label}: {w}");
    }
}

pub fn fit(data: &DataArgs, model: &ModelArgs, family: CopulaFamily, tau: f64, out: Option<&Path>) -> Result<(), CliError> {
    check_times(&model.times)?;
    let copula = copula_for(family, tau)?;
    let mut outputs = Outputs::new(out, "fit")?;
    let (cohort, tables) = load_data(data, &mut outputs.manifest)?;
    record_model(&mut outputs.manifest, model);
    outputs.manifest.set("copula", family.name());
    outputs.manifest.set("tau", tau);

    let problem = LikelihoodProblem::from_cohort(&cohort, &tables, copula, model.family)?;
    let fit = inference::fit_seeded(&problem, &fit_options(model), model.seed)?;
    let est = inference::net_survival(&fit, &problem, &model.times)?;
    warn_fit(&fit, &est, "fit");

    let mut csv = String::from("t,survival,std_err\n");
    for k in 0..est.times.len() {
        let _ = writeln!(csv, "{},{},{}", est.times[k], est.survival[k], est.std_err[k]);
    }
    let text = format!(
        "{}\n{}",
        fit_summary(&fit, &problem, &copula),
        output::table(&["t", "S_T1 (x10^-2)", "SE (x10^-3)"], &estimate_rows(&est))
    );
    print!("{text}");
    outputs.write("fit.csv", &csv)?;
    outputs.write("fit.txt", &text)?;
    outputs.manifest.set("converged", fit.converged);
    outputs.finish()?;
    if !fit.converged {
        return Err(CliError::Optimization("optimizer did not converge from any start".into()));
    }
    Ok(())
}

fn band_label((lo, hi): (u32, u32)) -> String {
    format!("{lo}-{hi}")
}

/// Partitions the cohort by completed age at diagnosis. Subjects outside
/// every band are returned separately.
pub fn age_strata(cohort: &[SubjectRecord]) -> (Vec<(String, Vec<SubjectRecord>)>, usize) {
    let mut strata: Vec<(String, Vec<SubjectRecord>)> = AGE_BANDS.iter().map(|&b| (band_label(b), Vec::new())).collect();
    let mut outside = 0;
    for s in cohort {
        let age = s.age_at_diagnosis.floor();
        match AGE_BANDS.iter().position(|&(lo, hi)| age >= lo as f64 && age <= hi as f64) {
            Some(k) => strata[k].1.push(s.clone()),
            None => outside += 1,
        }
    }
    (strata, outside)
}

struct GroupResult {
    group: String,
    n: usize,
    /// Per tau: estimate at the requested times plus the plotting curve.
    points: Vec<(f64, Option<(NetSurvivalEstimate, NetSurvivalEstimate)>)>,
}

fn curve_grid(times: &[f64]) -> Vec<f64> {
    let end = times.iter().copied().fold(0.0, f64::max);
    let steps = 100;
    (0..=steps).map(|i| end * i as f64 / steps as f64).collect()
}

pub fn sensitivity(
    data: &DataArgs,
    model: &ModelArgs,
    family: CopulaFamily,
    taus: &[f64],
    by_age_groups: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    check_times(&model.times)?;
    if taus.is_empty() {
        return Err(CliError::Parse("--taus needs at least one value".into()));
    }
    for &tau in taus {
        copula_for(family, tau)?;
    }
    let mut outputs = Outputs::new(out, "sensitivity")?;
    let (cohort, tables) = load_data(data, &mut outputs.manifest)?;
    record_model(&mut outputs.manifest, model);
    outputs.manifest.set("copula", family.name());
    outputs.manifest.set("taus", join(taus));
    outputs.manifest.set("by_age_groups", by_age_groups);

    let mut strata = vec![("all".to_string(), cohort.clone())];
    outputs.manifest.set("strata.all", cohort.len());
    if by_age_groups {
        let (bands, outside) = age_strata(&cohort);
        for (label, members) in &bands {
            outputs.manifest.set(&format!("strata.{label}"), members.len());
        }
        outputs.manifest.set("strata.outside", outside);
        if outside > 0 {
            warn!("{outside} subjects fall outside every age band and appear only in the overall rows");
        }
        strata.extend(bands);
    }

    let grid = curve_grid(&model.times);
    let options = fit_options(model);
    let mut results = Vec::new();
    for (group, members) in strata {
        let n = members.len();
        if members.is_empty() {
            warn!("age band {group} is empty; its rows are marked {}", output::ABSENT);
            results.push(GroupResult {
                group,
                n,
                points: taus.iter().map(|&t| (t, None)).collect(),
            });
            continue;
        }
        let template = LikelihoodProblem::from_cohort(&members, &tables, CopulaSpec::Product, model.family)?;
        let sweep = inference::sensitivity_sweep(&template, family, taus, &model.times, &options, model.seed);
        let mut points = Vec::new();
        for point in sweep {
            let value = match point.outcome {
                Ok((fit, est)) => {
                    let problem = template.with_copula(copula_for(family, point.tau)?);
                    let curve = inference::net_survival(&fit, &problem, &grid)?;
                    warn_fit(&fit, &est, &format!("{group} tau={}", point.tau));
                    if !fit.converged {
                        warn!("{group} tau={}: optimizer did not converge; rows are marked {}", point.tau, output::ABSENT);
                        None
                    } else {
                        Some((est, curve))
                    }
                }
                Err(e @ netsurv::inference::InferenceError::Likelihood(_)) => return Err(e.into()),
                Err(e) => {
                    warn!("{group} tau={}: {e}; rows are marked {}", point.tau, output::ABSENT);
                    None
                }
            };
            points.push((point.tau, value));
        }
        results.push(GroupResult { group, n, points });
    }

    let mut csv = String::from("group,tau,t,survival,std_err\n");
    let mut curves = String::from("group,tau,t,survival\n");
    let mut text = String::new();
    for r in &results {
        for (tau, value) in &r.points {
            for (k, t) in model.times.iter().enumerate() {
                let (s, se) = value.as_ref().map_or((None, None), |(e, _)| (Some(e.survival[k]), Some(e.std_err[k])));
                let _ = writeln!(csv, "{},{tau},{t},{},{}", r.group, raw(s), raw(se));
            }
            if let Some((_, curve)) = value {
                for (t, s) in curve.times.iter().zip(&curve.survival) {
                    let _ = writeln!(curves, "{},{tau},{t},{s}", r.group);
                }
            }
        }
        let _ = writeln!(text, "group {} (n = {}), copula {}", r.group, r.n, family.name());
        let mut header = vec!["t".to_string()];
        header.extend(taus.iter().map(|t| format!("tau={t}")));
        let rows: Vec<Vec<String>> = model
            .times
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let mut row = vec![t.to_string()];
                row.extend(r.points.iter().map(|(_, v)| match v {
                    Some((e, _)) => format!("{} ({})", percent(Some(e.survival[k])), permille(Some(e.std_err[k]))),
                    None => output::ABSENT.to_string(),
                }));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        text.push_str(&output::table(&header, &rows));
        text.push('\n');
    }
    text.push_str("survival x10^-2, standard error x10^-3 in parentheses\n");
    print!("{text}");
    outputs.write("sensitivity.csv", &csv)?;
    outputs.write("sensitivity_curves.csv", &curves)?;
    outputs.write("sensitivity.txt", &text)?;
    outputs.finish()
}

pub fn compare(data: &DataArgs, model: &ModelArgs, out: Option<&Path>) -> Result<(), CliError> {
    check_times(&model.times)?;
    let mut outputs = Outputs::new(out, "compare")?;
    let (cohort, tables) = load_data(data, &mut outputs.manifest)?;
    record_model(&mut outputs.manifest, model);

    let problem = LikelihoodProblem::from_cohort(&cohort, &tables, CopulaSpec::Product, model.family)?;
    let fit = inference::fit_seeded(&problem, &fit_options(model), model.seed)?;
    let est = inference::net_survival(&fit, &problem, &model.times)?;
    warn_fit(&fit, &est, "compare");
    if !fit.converged {
        return Err(CliError::Optimization("optimizer did not converge from any start".into()));
    }

    let curves = cohort
        .iter()
        .map(|s| tables.match_subject(s, s.follow_up))
        .collect::<Result<Vec<_>, _>>()?;
    let subjects: Vec<PPSubject> = cohort
        .iter()
        .zip(&curves)
        .map(|(s, curve)| PPSubject {
            time: s.follow_up,
            event: s.event,
            curve,
        })
        .collect();
    let pp = pohar_perme(&subjects, &model.times).map_err(|e| CliError::Other(e.to_string()))?;
    if let Some(t) = pp.truncated_at {
        warn!("Pohar-Perme risk set empties at t = {t}; later rows are marked {}", output::ABSENT);
    }

    let mut csv = String::from("t,pp,parametric,std_err,abs_diff\n");
    let mut rows = Vec::new();
    for (k, &t) in model.times.iter().enumerate() {
        let p = pp.survival_at(t);
        let (s, se) = (est.survival[k], est.std_err[k]);
        let diff = p.map(|p| (p - s).abs());
        let _ = writeln!(csv, "{t},{},{s},{se},{}", raw(p), raw(diff));
        rows.push(vec![
            t.to_string(),
            percent(p),
            percent(Some(s)),
            permille(Some(se)),
            percent(diff),
        ]);
    }
    let text = format!(
        "{}\n{}survival x10^-2, standard error x10^-3\n",
        fit_summary(&fit, &problem, &CopulaSpec::Product),
        output::table(&["t", "PP", "S_T1 (tau=0)", "SE", "|diff|"], &rows)
    );
    print!("{text}");
    outputs.write("compare.csv", &csv)?;
    outputs.write("compare.txt", &text)?;
    outputs.finish()
}

pub fn simulate(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let bytes = output::read_file(config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Parse(format!("{}: {e}", config.display())))?;
    let study = StudyFile::parse(&text).map_err(|e| in_file(config, e.into()))?;
    let mut outputs = Outputs::new(out, "simulate")?;
    outputs.manifest.input("config", config, &bytes);
    if let Some(name) = &study.name {
        outputs.manifest.set("study", name);
    }
    outputs.manifest.set("seed", study.seed);
    let cells = study.expand();
    outputs.manifest.set("cells", cells.len());

    let mut reports: Vec<SimulationReport> = Vec::new();
    let mut failure = None;
    for (k, cfg) in cells.iter().enumerate() {
        log::info!("cell {}/{}: n={} tau={} censoring={}", k + 1, cells.len(), cfg.n, cfg.tau, cfg.censor_target);
        match simulate::run_config(cfg) {
            Ok(r) => reports.push(r),
            Err(SimulationError::TooManyFailures {
                failures,
                replications,
                report,
            }) => {
                reports.push(*report);
                failure = Some(CliError::Optimization(format!(
                    "cell {} (n={}, tau={}, censoring={}): {failures} of {replications} replications failed; partial results kept",
                    k + 1,
                    cfg.n,
                    cfg.tau,
                    cfg.censor_target
                )));
                break;
            }
            Err(e) => {
                failure = Some(CliError::from(e));
                break;
            }
        }
    }
    outputs.manifest.set("cells_completed", reports.len());
    let text = simulate::reports_to_text(&reports);
    print!("{text}");
    outputs.write("simulation.csv", &simulate::reports_to_csv(&reports))?;
    outputs.write("simulation.txt", &text)?;
    outputs.finish()?;
    failure.map_or(Ok(()), Err)
}
