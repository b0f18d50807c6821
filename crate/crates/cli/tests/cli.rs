use std::path::Path;
use std::process::{Command, Output};

fn kqse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kqse"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_grid(dir: &Path) {
    ok(&kqse(
        dir,
        &[
            "--seed", "3", "--n", "200", "--n-mu", "12", "--mu-max", "4", "kcfe",
        ],
    ));
}

#[test]
fn sample_then_kde_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&kqse(d, &["--n", "300", "sample", "--noisy"]));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("samples.json")).unwrap()).unwrap();
    assert_eq!(side["n"], 300);
    assert!(side["noise"].is_object());
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("samples.plan.json")).unwrap())
            .unwrap();
    assert_eq!(plan["plan"]["lattice"]["n"], 300);

    let input = d.join("samples.csv");
    ok(&kqse(
        d,
        &[
            "kde",
            "--input",
            input.to_str().unwrap(),
            "--kernel",
            "epanechnikov",
            "--bandwidth",
            "0.4",
        ],
    ));
    let text = std::fs::read_to_string(d.join("kde.csv")).unwrap();
    assert!(text.starts_with("x,density\n"));
    assert_eq!(text.lines().count(), 802);
    ok(&kqse(
        d,
        &["kde", "--input", input.to_str().unwrap(), "--histogram"],
    ));
}

#[test]
fn same_seed_same_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(&kqse(d, &["--seed", "9", "--n", "100", "sample"]));
    }
    assert_eq!(
        std::fs::read(a.path().join("samples.csv")).unwrap(),
        std::fs::read(b.path().join("samples.csv")).unwrap()
    );
}

#[test]
fn simulated_lattice_reconstructs_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_grid(d);
    let cf = d.join("cf.csv");
    let cf = cf.to_str().unwrap();
    assert!(ok(&kqse(d, &["validate", "--cf", cf])).contains("valid"));
    ok(&kqse(d, &["reconstruct", "--cf", cf]));
    assert!(std::fs::read_to_string(d.join("rho.csv"))
        .unwrap()
        .starts_with("y,yp,re,im\n"));
    ok(&kqse(d, &["trace", "--cf", cf]));
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("trace.json")).unwrap()).unwrap();
    let ov = t["overlap"].as_f64().unwrap();
    assert!(ov > 0.8 && ov < 1.1, "overlap {ov}");
}

#[test]
fn corrupted_lattice_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_grid(d);
    let path = d.join("cf.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    // Flip the sign of the imaginary part in the upper half of the lattice.
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut f: Vec<String> = l.split(',').map(str::to_owned).collect();
            if i > 0 && f[0].parse::<f64>().unwrap() > 0.0 {
                let im: f64 = f[3].parse().unwrap();
                f[3] = format!("{}", -im + 0.5);
            }
            f.join(",")
        })
        .collect();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = kqse(d, &["validate", "--cf", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("plan.toml");
    std::fs::write(
        &cfg,
        "[state]\nkind = \"fock\"\nm = 1\n\n[lattice]\nn = 150\n",
    )
    .unwrap();
    ok(&kqse(d, &["--config", cfg.to_str().unwrap(), "sample"]));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("samples.json")).unwrap()).unwrap();
    assert_eq!(side["n"], 150);
    assert_eq!(side["state"]["kind"], "fock");

    std::fs::write(&cfg, "[lattice]\nbogus = 1\n").unwrap();
    assert_eq!(
        kqse(d, &["--config", cfg.to_str().unwrap(), "sample"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(kqse(d, &["slopes", "nonsense"]).status.code(), Some(2));
    assert_eq!(
        kqse(d, &["--kappa", "1.5", "sample"]).status.code(),
        Some(2)
    );
    assert_eq!(kqse(d, &["table", "9"]).status.code(), Some(2));
    let missing = d.join("absent.csv");
    assert_eq!(
        kqse(d, &["validate", "--cf", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn plotdata_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&kqse(
        d,
        &["--reps", "1", "--n", "200", "plotdata", "tomogram-kde"],
    ));
    assert!(out.contains("rows"));
    let text = std::fs::read_to_string(d.join("plot_tomogram-kde.csv")).unwrap();
    assert!(text.lines().count() > 10);
}
