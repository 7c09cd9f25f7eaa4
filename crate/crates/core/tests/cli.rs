use std::path::Path;
use std::process::{Command, Output};

fn prognet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prognet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const DEMO: [&str; 8] = [
    "--ai",
    "demo:ai.csv",
    "--goods",
    "demo:goods.csv",
    "--services",
    "demo:services.csv",
    "--taxonomy",
    "demo:taxonomy.csv",
];

fn with_demo<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(DEMO);
    v
}

#[test]
fn demo_writes_every_product() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let o = prognet(&["demo", "--samples", "199", "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for rel in [
        "config.txt",
        "labels.csv",
        "rca/rca_2010.csv",
        "rca/rca_2019.csv",
        "network/progression.json",
        "network/progression.graphml",
        "network/progression.dot",
        "network/progression_nodes.csv",
        "network/progression_validation.csv",
        "network/heatmap.csv",
        "network/ai_progression.json",
        "network/ai_cooccurrence.dot",
        "reports/USA.csv",
        "reports/USA_top.csv",
    ] {
        assert!(out.join(rel).is_file(), "missing {rel}");
    }
    let cfg = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(cfg.contains("samples = 199\n") && cfg.contains("seed = 7\n"));
    let dot = std::fs::read_to_string(out.join("network/ai_cooccurrence.dot")).unwrap();
    assert!(dot.starts_with("graph "));
    let rca = std::fs::read_to_string(out.join("rca/rca_2015.csv")).unwrap();
    assert!(rca.starts_with("country,layer,code,rca,m\n"));
    assert!(!rca.contains('\r'));
    let labels = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert!(labels.starts_with("country,layer,code,label,early_avg,late_avg\n"));

    let again = prognet(&["demo", "--output", out.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn bad_alpha_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = prognet(&["demo", "--alpha", "1.5", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: "), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn missing_taxonomy_is_an_io_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = prognet(&[
        "run",
        "--ai",
        "demo:ai.csv",
        "--goods",
        "demo:goods.csv",
        "--taxonomy",
        "/no/such/taxonomy.csv",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error[io]: ") && err.contains("/no/such/taxonomy.csv"), "{err}");
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn unknown_label_is_a_data_error_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let ai = tmp.path().join("ai.csv");
    std::fs::write(&ai, "country,sector,year,value\nUSA,Quantum Knitting,2015,1\n").unwrap();
    let out = tmp.path().join("x");
    let o = prognet(&[
        "run",
        "--ai",
        ai.to_str().unwrap(),
        "--goods",
        "demo:goods.csv",
        "--taxonomy",
        "demo:taxonomy.csv",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[data]: "));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    std::fs::write(
        &cfg,
        "ai = demo:ai.csv\ngoods = demo:goods.csv\ntaxonomy = demo:taxonomy.csv\nsamples = 50\nseed = 3\ncountries = USA\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = prognet(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "11",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("seed = 11\n") && echoed.contains("samples = 50\n"));
    assert!(out.join("reports/USA.csv").is_file());
    assert!(!out.join("reports/DEU.csv").exists());
}

#[test]
fn assist_marks_undefined_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let ai = tmp.path().join("ai.csv");
    let goods = tmp.path().join("goods.csv");
    std::fs::write(
        &ai,
        "country,sector,year,value\nUSA,Agtech,2015,5\nMEX,Agtech,2015,1\nMEX,Advertising,2015,5\nUSA,Education,2015,0\nMEX,Agtech,2016,1\nUSA,Education,2016,1\n",
    )
    .unwrap();
    std::fs::write(
        &goods,
        "country,sector,year,value\nUSA,HS I,2015,1\nMEX,HS II,2015,3\nUSA,HS I,2016,2\nMEX,HS II,2016,1\n",
    )
    .unwrap();
    let o = prognet(&[
        "assist",
        "--ai",
        ai.to_str().unwrap(),
        "--goods",
        goods.to_str().unwrap(),
        "--taxonomy",
        "demo:taxonomy.csv",
        "--delay",
        "1",
        "--year",
        "2015",
        "--target-layers",
        "Goods",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "source,Goods:live_animals,Goods:vegetable_products");
    // each specialized country is diversified in one AI and one goods sector at 2016
    assert_eq!(lines[1], "AI:advertising,0,0.5");
    assert_eq!(lines[2], "AI:agtech,0.5,0");
    assert_eq!(lines[3], "AI:education,undefined,undefined");
}

#[test]
fn single_pair_validation_and_network_formats() {
    let o = prognet(&with_demo(&["validate", "--delay", "3", "--year", "2012", "--samples", "99"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("source_layer,source,target_layer,target,observed_b,p_value,validated\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true") || l.ends_with(",false")));

    let o = prognet(&with_demo(&["network", "--samples", "99", "--format", "dot"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("digraph progression {"));
    let o = prognet(&with_demo(&["network", "--samples", "99", "--format", "svg"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_from_saved_network() {
    let tmp = tempfile::tempdir().unwrap();
    let net = tmp.path().join("net.json");
    let o = prognet(&with_demo(&["network", "--samples", "99", "--out", net.to_str().unwrap()]));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = prognet(&with_demo(&[
        "report",
        "--country",
        "KOR",
        "--top-k",
        "4",
        "--network",
        net.to_str().unwrap(),
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,target_layer,target,density,related_ai,status,application,no_support");
    assert_eq!(lines.len(), 5);

    let o = prognet(&with_demo(&["report", "--country", "ZZZ", "--network", net.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn ingest_rca_and_labels_subcommands() {
    let o = prognet(&["ingest", "--input", "demo:goods.csv", "--layer", "Goods", "--taxonomy", "demo:taxonomy.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("country,sector,year,value\n"));
    assert!(text.contains(",vehicles,") && !text.contains("HS XVII"));

    let o = prognet(&with_demo(&["rca", "--year", "2014"]));
    assert!(o.status.success());
    assert!(stdout(&o).lines().count() > 12 * 38);

    let o = prognet(&with_demo(&["labels", "--early", "2010-2012", "--late", "2018-2019"]));
    assert!(o.status.success());
    assert!(stdout(&o).contains(",Emerging,"));

    let o = prognet(&with_demo(&["labels", "--early", "1990-1995"]));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_prognet"))
            .env("PROGNET_THREADS", threads)
            .args(with_demo(&["network", "--samples", "99", "--seed", "5"]))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run("1"), run("4"));
    let bad = Command::new(env!("CARGO_BIN_EXE_prognet"))
        .env("PROGNET_THREADS", "0")
        .args(["rca", "--ai", "demo:ai.csv"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(Path::new(env!("CARGO_BIN_EXE_prognet")).exists());
}
