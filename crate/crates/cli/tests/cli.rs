use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn khi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_khi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = khi(args);
    assert!(
        out.status.success(),
        "khi {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let (v, a, q) = (p(d, "v.bin"), p(d, "a.bin"), p(d, "q.bin"));
    ok(&[
        "synth",
        "--n",
        "3000",
        "--dim",
        "8",
        "--attrs",
        "3",
        "--attr-dist",
        "zipf:1.2",
        "--query-count",
        "20",
        "--seed",
        "7",
        "--vectors",
        &v,
        "--attrs-out",
        &a,
        "--queries",
        &q,
    ]);
    assert_eq!(fs::metadata(&v).unwrap().len(), 8 + 3000 * 8 * 4);
    assert_eq!(fs::metadata(&a).unwrap().len(), 8 + 3000 * 3 * 8);

    let w = p(d, "w.txt");
    ok(&[
        "genq",
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--query-vectors",
        &q,
        "--sigma",
        "0.0625",
        "--cardinality",
        "2",
        "--count",
        "20",
        "--seed",
        "3",
        "--out",
        &w,
    ]);
    let text = fs::read_to_string(&w).unwrap();
    assert_eq!(text.lines().count(), 20);
    assert!(text
        .lines()
        .all(|l| l.split_once(';').unwrap().1.split(',').count() == 2));

    let gt = p(d, "gt.bin");
    ok(&[
        "gt",
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--queries",
        &q,
        "--workload",
        &w,
        "--k",
        "10",
        "--out",
        &gt,
    ]);

    let (i1, i2) = (p(d, "i1.khi"), p(d, "i2.khi"));
    let report = ok(&[
        "build",
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--out",
        &i1,
        "--M",
        "16",
        "--ef-build",
        "16",
    ]);
    assert!(report.contains("built 3000 objects"), "{report}");
    ok(&[
        "build",
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--out",
        &i2,
        "--M",
        "16",
        "--ef-build",
        "16",
        "--threads",
        "3",
        "--deterministic",
    ]);
    let image = fs::read(&i1).unwrap();
    assert_eq!(&image[..4], b"KHI1");
    assert_eq!(image, fs::read(&i2).unwrap());

    let res = p(d, "res.csv");
    ok(&[
        "query",
        "--index",
        &i1,
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--queries",
        &q,
        "--workload",
        &w,
        "--k",
        "10",
        "--ef",
        "64",
        "--recon-order",
        "root",
        "--out",
        &res,
    ]);
    let rows = fs::read_to_string(&res).unwrap();
    assert!(rows.starts_with("query_id,rank,id,distance\n"));
    assert!(rows.lines().count() > 1);

    let bench = p(d, "bench.csv");
    ok(&[
        "bench",
        "--index",
        &i1,
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--queries",
        &q,
        "--workload",
        &w,
        "--gt",
        &gt,
        "--k",
        "10",
        "--ef-list",
        "16,64,256",
        "--out",
        &bench,
    ]);
    let csv = fs::read_to_string(&bench).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ef,recall,qps,dist_comps,hops,threads");
    assert_eq!(lines.len(), 4);
    let recall: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
    assert!(recall > 0.8, "{csv}");

    let trace = p(d, "trace.csv");
    ok(&[
        "trace",
        "--index",
        &i1,
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--queries",
        &q,
        "--workload",
        &w,
        "--out",
        &trace,
    ]);
    assert!(fs::read_to_string(&trace)
        .unwrap()
        .starts_with("query_id,hop,threshold\n0,1,"));
}

#[test]
fn reports_input_errors() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let out = khi(&[
        "build",
        "--vectors",
        &p(d, "missing"),
        "--attrs",
        &p(d, "missing2"),
        "--out",
        &p(d, "i"),
    ]);
    assert!(!out.status.success());

    let (v, a, q) = (p(d, "v"), p(d, "a"), p(d, "q"));
    ok(&[
        "synth",
        "--n",
        "50",
        "--dim",
        "4",
        "--attrs",
        "2",
        "--query-count",
        "2",
        "--vectors",
        &v,
        "--attrs-out",
        &a,
        "--queries",
        &q,
    ]);
    let idx = p(d, "i");
    ok(&["build", "--vectors", &v, "--attrs", &a, "--out", &idx]);
    let mut bytes = fs::read(&idx).unwrap();
    bytes[0] = b'Z';
    fs::write(&idx, &bytes).unwrap();
    fs::write(p(d, "w"), "0;0:-inf:inf\n").unwrap();
    let out = khi(&[
        "query",
        "--index",
        &idx,
        "--vectors",
        &v,
        "--attrs",
        &a,
        "--workload",
        &p(d, "w"),
        "--k",
        "5",
        "--ef",
        "10",
        "--out",
        &p(d, "r"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}
