use std::path::Path;
use std::process::{Command, Output};

fn semcom(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semcom"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("LDSC_OUTPUT_DIR");
    if let Some(d) = out_dir {
        cmd.env("LDSC_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

/// Results file contents with the timing column blanked.
fn without_timing(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.conf",
        "experiment = sweep-bits\ngamma = 1.5\nchannel = nakagami\nsnr_db = loud\ncheckpoint = missing.ckpt\n",
    );
    let out = semcom(&["validate", &cfg], None);
    assert!(!out.status.success());
    let err = stderr(&out);
    for needle in ["gamma", "channel", "snr_db", "missing.ckpt"] {
        assert!(err.contains(needle), "`{needle}` not reported in:\n{err}");
    }

    let good = write_config(dir.path(), "good.conf", "experiment = sweep-bits\ngamma = 0.3\n");
    let out = semcom(&["validate", &good], None);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn runs_are_reproducible_and_honour_the_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let body = "experiment = baseline\nchannel = rayleigh\nscheme = huffman, fixed5\nseeds = 1, 2\nsnr_db = 6, 18\neval_sentences = 40\n";
    let cfg = write_config(dir.path(), "b.conf", body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = semcom(&["run", &cfg], Some(d));
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let (fa, fb) = (a.join("baseline.csv"), b.join("baseline.csv"));
    assert!(!dir.path().join("results").exists(), "override ignored");
    let text = without_timing(&fa);
    assert_eq!(text, without_timing(&fb));
    assert!(text.starts_with("# ldsc-results v1\n"));
    // 2 seeds × 2 schemes × 2 SNRs × 5 metrics, plus two header lines
    assert_eq!(text.lines().count(), 2 + 40);

    let out = semcom(&["plot", fa.to_str().unwrap(), "fig7"], None);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = std::fs::read_to_string(a.join("baseline.fig7.csv")).unwrap();
    assert_eq!(table.lines().count(), 2 + 4, "{table}");
}

#[test]
fn plot_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    std::fs::write(&csv, "# ldsc-results v1\nexperiment,metric,value\nsweep-bits,psi,2\n").unwrap();
    let path = csv.to_str().unwrap();

    let out = semcom(&["plot", path, "fig42"], None);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown figure"), "{}", stderr(&out));

    let out = semcom(&["plot", path, "table3"], None);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("m_bits") && err.contains("gamma"), "{err}");
}

#[test]
fn empty_selection_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.conf", "experiment = sweep-bits\ngamma = 0.9\nm_bits = 8, 12\n");
    let out_dir = dir.path().join("out");
    assert!(semcom(&["run", &cfg], Some(&out_dir)).status.success());
    let target = dir.path().join("fig6.csv");
    let out = semcom(
        &["plot", out_dir.join("sweep-bits.csv").to_str().unwrap(), "fig6", "-o", target.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&target).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.ends_with("x,y,series,n\n"));
}
