use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmgva_cli::config::{Mode, RunConfig, TargetSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmgva"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("CMGVA_THREADS", "2").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let h = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (h, rows)
}

const GAUSS: &str = "\
# small standard normal run
[target]
name = gaussian
dim = 4

[boost]
iters_first = 400
iters_per_component = 200
max_components = 3
elbo_window = 100
seed = 11
";

#[test]
fn parser_reports_line_numbers() {
    let base = Path::new(".");
    let cases = [
        ("[target]\nname = gaussian\ndim = 2\n[bogus]\n", 4, "unknown section"),
        ("[target]\nname = gaussian\ndim = 2\ncolour = red\n", 4, "unknown key"),
        ("[target]\nname = gaussian\ndim = 2\ndim = 3\n", 4, "repeated"),
        ("name = gaussian\n", 1, "outside any section"),
        ("[target]\nname = gaussian\n\ndim = two\n", 4, "invalid value"),
        ("[target]\nname = gaussian\ndim = 2\n[boost]\ninit_mode = magic\n", 5, "init_mode"),
        ("[target]\nname = gaussian\ndim = 2\njunk\n", 4, "key = value"),
        ("[target]\nname = wiggle\n", 2, "unknown target"),
        ("[target]\nname = mixnormal\ndim = 2\nmeans = 1,2; 3\n", 4, "has 1 entries"),
    ];
    for (text, line, needle) in cases {
        let e = RunConfig::parse(text, base).unwrap_err();
        assert_eq!(e.line, Some(line), "{text:?}: {e}");
        assert!(e.message.contains(needle), "{text:?}: {e}");
    }
    assert!(RunConfig::parse("[boost]\nseed = 1\n", base).is_err());
}

#[test]
fn parser_reads_every_section() {
    let text = "\
[target]
name = mixnormal
dim = 2
rho = 0.3
means = -1, 0; 1, 0.5
; semicolon comment
[boost]
samples = 20
alpha_mu = 0.02
preconditioner = closedform
selection = proportional
fit_gamma = false
[output]
dir = out
mode = gcopula
";
    let rc = RunConfig::parse(text, Path::new("/base")).unwrap();
    match &rc.target {
        TargetSpec::Mixnormal { dim, rho, means, .. } => {
            assert_eq!(*dim, 2);
            assert_eq!(*rho, 0.3);
            assert_eq!(means.as_ref().unwrap(), &vec![vec![-1.0, 0.0], vec![1.0, 0.5]]);
        }
        t => panic!("{t:?}"),
    }
    assert_eq!(rc.boost.samples, 20);
    assert_eq!(rc.boost.alpha_mu, 0.02);
    assert!(!rc.boost.fit_gamma);
    assert_eq!(rc.out_dir.as_deref(), Some(Path::new("/base/out")));
    assert_eq!(rc.mode, Mode::Gcopula);
}

#[test]
fn fit_writes_one_segment_per_component() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.ini", GAUSS);
    let out = dir.path().join("run");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("trace.csv"));
    assert_eq!(h, ["iter", "K", "elbo", "elbo_ma"]);
    assert_eq!(rows.len(), 400 + 2 * 200);
    for k in 1..=3 {
        let seg: Vec<_> = rows.iter().filter(|r| r[1] == k as f64).collect();
        assert_eq!(seg.len(), if k == 1 { 400 } else { 200 });
        assert_eq!(seg[0][0], 1.0);
        assert!(out.join(format!("checkpoint_K{k}.json")).exists());
    }
    let (h, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(h, ["K", "elbo_last500_avg"]);
    assert_eq!(rows.len(), 3);
    assert!(!out.join(".cmgva.lock").exists());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["checkpoints"].as_array().unwrap().len(), 3);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.ini", GAUSS);
    let outs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5"]);
            assert!(o.status.success(), "{}", stderr(&o));
            out
        })
        .collect();
    for f in ["trace.csv", "summary.csv", "manifest.json", "checkpoint_K3.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    // a different thread count changes nothing
    let out = dir.path().join("c");
    let o = bin()
        .args(["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5"])
        .env("CMGVA_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(outs[0].join("trace.csv")).unwrap(), fs::read(out.join("trace.csv")).unwrap());
}

#[test]
fn bimodal_target_prefers_two_components() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.ini",
        "[target]\nname = mixnormal\ndim = 2\nrho = 0\nmeans = -2.5, 0; 2.5, 0\n\
         [boost]\niters_first = 20000\niters_per_component = 5000\nmax_components = 2\nseed = 3\n\
         [output]\ndir = run\n",
    );
    let o = run(&["fit", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&dir.path().join("run/summary.csv"));
    assert!(rows[1][1] > rows[0][1], "{rows:?}");
}

#[test]
fn modes_restrict_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.ini", GAUSS);
    let out = dir.path().join("gc");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "gcopula"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_csv(&out.join("summary.csv")).1.len(), 1);

    let out = dir.path().join("mn");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "mixnorm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 1..=3 {
        let s = fs::read_to_string(out.join(format!("checkpoint_K{k}.json"))).unwrap();
        let st = cmgva::mixture::CmgvaState::<f64>::from_json(&s).unwrap();
        assert!(st.yj().gamma().iter().all(|&g| g == 1.0));
    }
}

#[test]
fn existing_lock_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.ini", GAUSS);
    let out = dir.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".cmgva.lock"), "1").unwrap();
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lock"));
}

#[test]
fn bad_config_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.ini", "[target]\nname = gaussian\ndim = 2\n[boost]\nsamples = x\n");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
    let o = bin().args(["fit", "--config", cfg.to_str().unwrap()]).env("CMGVA_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn fitted_gaussian(dir: &Path) -> PathBuf {
    let cfg = write(
        dir,
        "one.ini",
        "[target]\nname = gaussian\ndim = 3\n[boost]\niters_first = 200\nmax_components = 1\nfit_gamma = false\n",
    );
    let out = dir.join("fit");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("checkpoint_K1.json")
}

#[test]
fn sampling_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fitted_gaussian(dir.path());
    let ck = ck.to_str().unwrap();

    let empty = dir.path().join("empty.csv");
    let o = run(&["sample", "--checkpoint", ck, "--draws", "0", "--out", empty.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&empty).unwrap(), "theta_1,theta_2,theta_3\n");

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let grid = dir.path().join("grid.csv");
    for p in [&a, &b] {
        let o = run(&["sample", "--checkpoint", ck, "--draws", "100000", "--seed", "9", "--out", p.to_str().unwrap(), "--grid", "50", "--grid-out", grid.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    // with identity transforms the draw mean estimates μ
    let st = cmgva_cli::commands::read_checkpoint(Path::new(ck)).unwrap();
    let mu = st.components()[0].mu().to_vec();
    let (_, rows) = read_csv(&a);
    assert_eq!(rows.len(), 100_000);
    for j in 0..3 {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / rows.len() as f64;
        let se = (var / rows.len() as f64).sqrt();
        assert!((mean - mu[j]).abs() < 5.0 * se, "coord {j}: {mean} vs {}", mu[j]);
    }

    let (h, rows) = read_csv(&grid);
    assert_eq!(h, ["coord", "theta", "log_density"]);
    assert_eq!(rows.len(), 150);
    // each marginal grid covers most of its mass
    for c in 1..=3 {
        let pts: Vec<_> = rows.iter().filter(|r| r[0] == c as f64).collect();
        let h = pts[1][1] - pts[0][1];
        let mass: f64 = pts.iter().map(|r| r[2].exp() * h).sum();
        assert!((mass - 1.0).abs() < 0.02, "{mass}");
    }
}

const TRAIN: &str = "x1,x2,y\n0,0,0.517\n1,0,1.341\n0,1,0.017\n1,1,0.735\n2,1,1.645\n1,2,0.322\n2,2,1.073\n0,2,-0.471\n3,0,2.918\n0,3,-0.985\n3,1,2.401\n1,3,-0.173\n";

fn linear_cfg(dir: &Path) -> PathBuf {
    write(dir, "train.csv", TRAIN);
    write(
        dir,
        "lin.ini",
        "[target]\nname = linear\ndata = train.csv\nresponse = y\n\
         [boost]\niters_first = 6000\nmax_components = 1\nalpha_mu = 0.05\nseed = 4\n",
    )
}

#[test]
fn predictive_score_of_a_near_perfect_fit() {
    // y = 0.5 + 0.8 x1 - 0.5 x2 plus noise of sd 0.05
    let dir = tempfile::tempdir().unwrap();
    let cfg = linear_cfg(dir.path());
    let out = dir.path().join("fit");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let test = write(dir.path(), "test.csv", "x1,x2,y\n4,1,3.2\n2,3,0.6\n");
    let ck = out.join("checkpoint_K1.json");
    let score_csv = dir.path().join("pps.csv");
    let o = run(&[
        "pps",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--draws",
        "4000",
        "--seed",
        "0",
        "--out",
        score_csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    let (h, rows) = read_csv(&score_csv);
    assert_eq!(h, ["n_test", "pps"]);
    assert_eq!(rows[0], vec![2.0, printed]);

    // Gaussian log score at the same posterior mean, written out by hand
    let st = cmgva_cli::commands::read_checkpoint(&ck).unwrap();
    let th = cmgva::targets::posterior_mean(&st, 4000, &mut cmgva::rng::seeded(0)).unwrap();
    let tau2 = th[3].exp();
    let rows = [([1.0, 4.0, 1.0], 3.2), ([1.0, 2.0, 3.0], 0.6)];
    let mut want = 0.0;
    for (x, y) in rows {
        let r: f64 = y - (x[0] * th[0] + x[1] * th[1] + x[2] * th[2]);
        want += 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * tau2.ln() + 0.5 * r * r / tau2;
    }
    want /= 2.0;
    assert!((printed - want).abs() < 1e-12, "{printed} vs {want}");
    // residuals far below unit scale give a negative score
    assert!(printed < -0.5, "{printed}");
    // frozen from a seeded run
    assert!((printed - (-2.283497361433171)).abs() < 1e-9, "{printed}");
}

#[test]
fn divergence_exits_with_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.ini",
        "[target]\nname = tcopula\ndim = 3\n[boost]\niters_first = 300\niters_per_component = 100\n\
         max_components = 2\nalpha_mu = 1000\nalpha_beta = 1000\nalpha_d = 1000\nalpha_gamma = 1000\n",
    );
    let out = dir.path().join("run");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    // checkpoints are still written and loadable
    for k in 1..=2 {
        cmgva_cli::commands::read_checkpoint(&out.join(format!("checkpoint_K{k}.json"))).unwrap();
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["diverged"][0], true);
}

#[test]
fn corrupt_checkpoint_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write(dir.path(), "bad.json", "{\"weights\": [0.5]}");
    let o = run(&["sample", "--checkpoint", ck.to_str().unwrap(), "--out", dir.path().join("s.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_response_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "train.csv", "a,b\n1,2\n3,4\n");
    let cfg = write(dir.path(), "c.ini", "[target]\nname = logistic\ndata = train.csv\nresponse = outcome\n");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'outcome'"), "{}", stderr(&o));

    write(dir.path(), "bad.csv", "x1,y\n1,2\nfoo,3\n");
    let cfg = write(dir.path(), "d.ini", "[target]\nname = linear\ndata = bad.csv\nresponse = y\n");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":3:") && stderr(&o).contains("'x1'"), "{}", stderr(&o));
}

#[test]
fn pps_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fitted_gaussian(dir.path());
    let cfg = linear_cfg(dir.path());
    let test = write(dir.path(), "test.csv", "x1,x2,y\n4,1,8\n");
    let o = run(&["pps", "--checkpoint", ck.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--test", test.to_str().unwrap()]);
    // 3 parameters against the 4 the linear model needs
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

fn reemit(p: &Path) -> Vec<u8> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(r.headers().unwrap()).unwrap();
    for rec in r.records() {
        let vals: Vec<String> = rec.unwrap().iter().map(|f| f.parse::<f64>().unwrap().to_string()).collect();
        w.write_record(&vals).unwrap();
    }
    w.into_inner().unwrap()
}

#[test]
fn csv_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ck = fitted_gaussian(dir.path());
    let p = dir.path().join("s.csv");
    let g = dir.path().join("g.csv");
    let o = run(&["sample", "--checkpoint", ck.to_str().unwrap(), "--draws", "50", "--out", p.to_str().unwrap(), "--grid", "20", "--grid-out", g.to_str().unwrap()]);
    assert!(o.status.success());
    let fit = ck.parent().unwrap();
    for f in [p, g, fit.join("trace.csv"), fit.join("summary.csv")] {
        assert_eq!(reemit(&f), fs::read(&f).unwrap(), "{}", f.display());
    }
}
