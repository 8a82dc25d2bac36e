use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netsurv::copulas::CopulaSpec;
use netsurv::inference::{self, FitOptions};
use netsurv::likelihood::{LikelihoodProblem, Observation};
use netsurv::marginals::{Family, MarginalModel};
use netsurv::simulate::StudyFile;
use tempfile::TempDir;

fn netsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netsurv")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hmd_table(years: std::ops::RangeInclusive<i32>, rate: impl Fn(i32, u32) -> f64) -> String {
    let mut s = String::from("Synthetic - Life tables (period 1x1)\n\n   Year   Age    mx    qx    ax    lx    dx    Lx    Tx    ex\n");
    for y in years {
        for a in 0..=110u32 {
            let age = if a == 110 { "110+".to_string() } else { a.to_string() };
            let _ = writeln!(s, "{y} {age} {:.8} 0.0 0.5 100000 0 0 0 0.0", rate(y, a));
        }
    }
    s
}

fn gompertz(y: i32, a: u32) -> f64 {
    5e-4 + 2.5e-5 * (0.1 * a as f64).exp() * 0.985f64.powi(y - 1990)
}

/// Deterministic cohort: Weibull disease times on a low-discrepancy grid,
/// administrative censoring at 12 years and some early loss to follow-up.
fn cohort_csv(n: usize) -> (String, Vec<(f64, bool)>) {
    let t1 = MarginalModel::weibull(0.05, 1.2).unwrap();
    let mut s = String::from("id,age,sex,diag_year,time,status\n");
    let mut data = Vec::new();
    for i in 0..n {
        let u = ((i as f64 + 0.5) * 0.618_033_988_749_895).fract();
        let mut time = t1.quantile(u).unwrap();
        let mut event = true;
        let limit = if i % 7 == 3 { 1.0 + (i % 11) as f64 } else { 12.0 };
        if time > limit {
            time = limit;
            event = false;
        }
        let age = 30 + (i * 37) % 60;
        let sex = if i % 2 == 0 { "F" } else { "M" };
        let year = 1995 + (i % 5);
        let _ = writeln!(s, "p{i},{age}.5,{sex},{year}.25,{time},{}", event as u8);
        data.push((time, event));
    }
    (s, data)
}

struct Fixture {
    dir: TempDir,
    data: Vec<(f64, bool)>,
}

impl Fixture {
    fn new(n: usize, rate: fn(i32, u32) -> f64) -> Self {
        let dir = TempDir::new().unwrap();
        let (cohort, data) = cohort_csv(n);
        fs::write(dir.path().join("cohort.csv"), cohort).unwrap();
        fs::write(dir.path().join("f.txt"), hmd_table(1990..=2015, rate)).unwrap();
        fs::write(dir.path().join("m.txt"), hmd_table(1990..=2015, |y, a| 1.4 * rate(y, a))).unwrap();
        Self { dir, data }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data_args(&self) -> Vec<String> {
        vec![
            "--cohort".into(),
            self.path("cohort.csv"),
            "--table-f".into(),
            self.path("f.txt"),
            "--table-m".into(),
            self.path("m.txt"),
        ]
    }

    fn run(&self, cmd: &str, extra: &[&str], out: &str) -> Output {
        let mut args: Vec<String> = vec![cmd.into()];
        args.extend(self.data_args());
        args.extend(extra.iter().map(|s| s.to_string()));
        args.extend(["--out-dir".to_string(), self.path(out)]);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        netsurv(&refs)
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn without_duration(manifest: &str) -> String {
    manifest.lines().filter(|l| !l.starts_with("duration_secs")).collect::<Vec<_>>().join("\n")
}

#[test]
fn zero_mortality_fit_is_plain_parametric_fit() {
    let fx = Fixture::new(400, |_, _| 0.0);
    let o = fx.run("fit", &["--tau", "0", "--seed", "5"], "out");
    assert!(o.status.success(), "{}", stderr(&o));

    let obs = fx
        .data
        .iter()
        .enumerate()
        .map(|(i, &(t, d))| Observation {
            id: i.to_string(),
            time: t,
            event: d,
            background_cdf: 0.0,
            background_survival: 1.0,
            background_density: 0.0,
        })
        .collect();
    let problem = LikelihoodProblem::new(obs, CopulaSpec::Product, Family::Weibull).unwrap();
    let fit = inference::fit_seeded(&problem, &FitOptions::default(), 5).unwrap();
    let est = inference::net_survival(&fit, &problem, &[2.0, 5.0, 10.0, 15.0]).unwrap();

    let rows = csv_rows(&read(&fx.out("out/fit.csv")));
    assert_eq!(rows.len(), 4);
    for (row, (s, se)) in rows.iter().zip(est.survival.iter().zip(&est.std_err)) {
        assert!((row[1].parse::<f64>().unwrap() - s).abs() < 1e-12);
        assert!((row[2].parse::<f64>().unwrap() - se).abs() < 1e-12);
    }
    let manifest = read(&fx.out("out/manifest.txt"));
    assert!(manifest.contains("subcommand = fit"));
    assert!(manifest.contains("input.cohort = "));
    assert!(manifest.contains("output.fit.csv = sha256:"));
}

#[test]
fn positive_dependence_lowers_long_term_net_survival() {
    let fx = Fixture::new(600, gompertz);
    let a = fx.run("fit", &["--copula", "gumbel", "--tau", "0"], "ind");
    let b = fx.run("fit", &["--copula", "gumbel", "--tau", "0.5"], "dep");
    assert!(a.status.success() && b.status.success(), "{}{}", stderr(&a), stderr(&b));
    let s10 = |dir: &str| -> f64 { csv_rows(&read(&fx.out(&format!("{dir}/fit.csv"))))[2][1].parse().unwrap() };
    assert!(s10("dep") < s10("ind"));
    let text = String::from_utf8(b.stdout).unwrap();
    assert!(text.contains("S_T1 (x10^-2)"));
}

#[test]
fn missing_life_table_year_exits_with_coverage_code() {
    let fx = Fixture::new(50, gompertz);
    fs::write(fx.path("short.txt"), hmd_table(1990..=1997, gompertz)).unwrap();
    let mut args = vec!["fit".to_string()];
    args.extend(["--cohort".into(), fx.path("cohort.csv"), "--table-f".into(), fx.path("short.txt")]);
    args.extend(["--table-m".into(), fx.path("short.txt")]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = netsurv(&refs);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("(year 1998, age"), "{msg}");
    assert!(msg.contains("sex "), "{msg}");

    let (short, cohort) = (fx.path("short.txt"), fx.path("cohort.csv"));
    let o = netsurv(&["check-tables", "--table-f", &short, "--table-m", &short, "--cohort", &cohort]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn parse_errors_name_the_file_and_line() {
    let fx = Fixture::new(20, gompertz);
    let mut bad = read(&fx.out("cohort.csv"));
    bad.push_str("px,abc,F,1995,1.0,1\n");
    fs::write(fx.path("cohort.csv"), bad).unwrap();
    let o = fx.run("fit", &[], "out");
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("cohort.csv") && msg.contains("line 22"), "{msg}");

    let o = netsurv(&["fit", "--cohort", "x.csv", "--family", "gamma"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fx.run("fit", &["--copula", "clayton", "--tau", "1.0"], "out");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cohort_without_events_is_an_optimization_failure() {
    let fx = Fixture::new(10, gompertz);
    let text = read(&fx.out("cohort.csv"));
    let censored: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("{}0\n", &l[..l.len() - 1]) })
        .collect();
    fs::write(fx.path("cohort.csv"), censored).unwrap();
    let o = fx.run("fit", &[], "out");
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn sensitivity_by_age_group_partitions_cohort() {
    let fx = Fixture::new(300, gompertz);
    let o = fx.run("sensitivity", &["--taus", "0,0.5", "--by-age-groups", "--times", "2,5"], "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = read(&fx.out("out/manifest.txt"));
    let count = |key: &str| -> usize {
        manifest
            .lines()
            .find_map(|l| l.strip_prefix(&format!("strata.{key} = ")))
            .unwrap_or_else(|| panic!("{key} missing"))
            .parse()
            .unwrap()
    };
    let bands: usize = ["15-44", "45-54", "55-64", "65-74", "75-99", "outside"].iter().map(|k| count(k)).sum();
    assert_eq!(bands, 300);
    assert_eq!(count("all"), 300);

    let rows = csv_rows(&read(&fx.out("out/sensitivity.csv")));
    assert_eq!(rows.len(), 6 * 2 * 2);
    // ages run from 30 to 89, so the youngest band is partly filled and none is empty
    assert!(rows.iter().all(|r| r[3] != "NA"));
    let curves = read(&fx.out("out/sensitivity_curves.csv"));
    assert!(curves.starts_with("group,tau,t,survival\n"));
}

#[test]
fn empty_age_band_yields_absent_rows() {
    let fx = Fixture::new(120, gompertz);
    let text = read(&fx.out("cohort.csv"));
    // drop everyone aged 75 and over
    let kept: String = text
        .lines()
        .filter(|l| l.starts_with("id") || l.split(',').nth(1).unwrap().parse::<f64>().unwrap() < 75.0)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(fx.path("cohort.csv"), kept).unwrap();
    let o = fx.run("sensitivity", &["--taus", "0", "--by-age-groups", "--times", "2"], "out");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("age band 75-99 is empty"));
    let rows = csv_rows(&read(&fx.out("out/sensitivity.csv")));
    let old: Vec<_> = rows.iter().filter(|r| r[0] == "75-99").collect();
    assert_eq!(old.len(), 1);
    assert_eq!(old[0][3], "NA");
    assert_eq!(old[0][4], "NA");
}

#[test]
fn single_tau_sweep_matches_fit() {
    let fx = Fixture::new(300, gompertz);
    let a = fx.run("sensitivity", &["--taus", "0"], "sweep");
    let b = fx.run("fit", &["--tau", "0"], "fit");
    assert!(a.status.success() && b.status.success());
    let sweep = csv_rows(&read(&fx.out("sweep/sensitivity.csv")));
    let fit = csv_rows(&read(&fx.out("fit/fit.csv")));
    assert_eq!(sweep.len(), fit.len());
    for (s, f) in sweep.iter().zip(&fit) {
        assert_eq!(s[2..], f[..]);
    }
}

#[test]
fn compare_with_zero_mortality_is_nelson_aalen() {
    let fx = Fixture::new(250, |_, _| 0.0);
    let o = fx.run("compare", &["--times", "1,3,6"], "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&read(&fx.out("out/compare.csv")));
    for row in rows {
        let t: f64 = row[0].parse().unwrap();
        let mut na = 0.0;
        let mut times: Vec<f64> = fx.data.iter().filter(|d| d.1 && d.0 <= t).map(|d| d.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for s in times {
            let at_risk = fx.data.iter().filter(|d| d.0 >= s).count() as f64;
            let deaths = fx.data.iter().filter(|d| d.1 && d.0 == s).count() as f64;
            na += deaths / at_risk;
        }
        let pp: f64 = row[1].parse().unwrap();
        assert!((pp - (-na).exp()).abs() < 1e-10, "t={t}: {pp}");
        let diff: f64 = row[4].parse().unwrap();
        assert!((diff - (pp - row[2].parse::<f64>().unwrap()).abs()).abs() < 1e-15);
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let fx = Fixture::new(300, gompertz);
    let a = fx.run("compare", &["--threads", "1"], "a");
    let b = fx.run("compare", &["--threads", "3"], "b");
    assert!(a.status.success() && b.status.success());
    assert_eq!(read(&fx.out("a/compare.csv")), read(&fx.out("b/compare.csv")));
    assert_eq!(a.stdout, b.stdout);
    let strip = |m: String| without_duration(&m).replace(&fx.path("a"), "").replace(&fx.path("b"), "");
    assert_eq!(strip(read(&fx.out("a/manifest.txt"))), strip(read(&fx.out("b/manifest.txt"))));
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn smoke_study_runs_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let config = configs_dir().join("smoke.cfg");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = netsurv(&["simulate", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        read(&out.join("simulation.csv"))
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.lines().count() > 1);
    let manifest = read(&dir.path().join("a/manifest.txt"));
    assert!(manifest.contains("input.config = "));
    assert!(manifest.contains("cells_completed = "));
}

#[test]
fn shipped_table5_config_covers_the_grid() {
    let text = read(&configs_dir().join("table5_gumbel.cfg"));
    let study = StudyFile::parse(&text).unwrap();
    let cells = study.expand();
    assert_eq!(cells.len(), 2 * 4 * 2 * 2);
    let mut taus: Vec<f64> = cells.iter().map(|c| c.tau).collect();
    taus.dedup();
    assert!(taus.starts_with(&[0.0, 0.25, 0.5, 0.75]));
    assert!(cells.iter().all(|c| [1000, 5000].contains(&c.n)));
    assert!(cells.iter().all(|c| [0.1, 0.5].contains(&c.censor_target)));
}

#[test]
fn bad_study_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "seed = 1\nreplications = 2\nunknown_key = 3\n").unwrap();
    let o = netsurv(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg"));
}
