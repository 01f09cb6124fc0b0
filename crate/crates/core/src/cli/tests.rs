use std::collections::BTreeMap;
use std::path::Path;

use super::*;
use crate::datagen::anonymize_id;

const R: f64 = 6371.0;

fn no_env(_: &str) -> Option<String> {
    None
}

fn north(lat: f64, km: f64) -> f64 {
    lat + (km / R).to_degrees()
}

fn answer(lat: f64, lon: f64) -> String {
    format!("<answer>Latitude: {lat:.9}\nLongitude: {lon}</answer>")
}

/// Lay out a scripted corpus in `dir` and return the config path.
fn corpus(dir: &Path, rows: &[(&str, f64, f64)], script: &BTreeMap<&str, Vec<String>>, extra: &str) -> std::path::PathBuf {
    let mut csv = String::from("image_id,lat,lon\n");
    for (id, lat, lon) in rows {
        csv.push_str(&format!("{id},{lat},{lon}\n"));
    }
    fs::write(dir.join("gt.csv"), csv).unwrap();
    fs::write(dir.join("script.json"), serde_json::to_string(script).unwrap()).unwrap();
    let cfg = format!(
        "ground_truth = \"gt.csv\"\nout_dir = \"out\"\n{extra}\n[policy]\nkind = \"scripted\"\nscript = \"script.json\"\n"
    );
    let path = dir.join("config.toml");
    fs::write(&path, cfg).unwrap();
    path
}

fn run(args: &[&str], env: &dyn Fn(&str) -> Option<String>) -> (i32, String) {
    let mut out = Vec::new();
    let mut full = vec!["geoagent"];
    full.extend_from_slice(args);
    let code = run_cli_with(full, env, &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn cot_run_matches_hand_computed_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [("a", 10.0, 10.0), ("b", -20.0, 30.0), ("c", 45.0, -100.0)];
    let mut script = BTreeMap::new();
    for ((id, lat, lon), km) in rows.iter().zip([0.5, 30.0, 300.0]) {
        script.insert(*id, vec![format!("<think>x</think>{}", answer(north(*lat, km), *lon))]);
    }
    let cfg = corpus(dir.path(), &rows, &script, "");
    let (code, _) = run(&["--config", cfg.to_str().unwrap(), "run", "--mode", "cot"], &no_env);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let third = 1.0 / 3.0;
    let expected = format!("threshold_km,accuracy\n1,{third}\n25,{third}\n200,{}\n750,1\n2500,1\n", 2.0 * third);
    assert_eq!(csv, expected);
    let usage: ToolUsageReport = serde_json::from_str(&fs::read_to_string(dir.path().join("out/usage.json")).unwrap()).unwrap();
    assert_eq!(usage.combinations["none"], 1.0);
}

#[test]
fn agent_mode_without_tools_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = BTreeMap::new();
    script.insert("a", vec![answer(1.0, 1.0)]);
    let cfg = corpus(dir.path(), &[("a", 1.0, 1.0)], &script, "[tools]\nenabled = []\n");
    let (code, _) = run(&["--config", cfg.to_str().unwrap(), "run"], &no_env);
    assert_eq!(code, 2);
    let (code, _) = run(&["--config", cfg.to_str().unwrap(), "run", "--mode", "cot"], &no_env);
    assert_eq!(code, 0);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = BTreeMap::new();
    script.insert("a", vec![answer(1.0, 1.0)]);
    let cfg = corpus(dir.path(), &[("a", 1.0, 1.0)], &script, "");
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["--config", c, "filter", "--k-trials", "1"], &no_env).0, 2);
    assert_eq!(run(&["--config", c, "run", "--budget", "0"], &no_env).0, 2);
    assert_eq!(run(&["--config", c, "run", "--parallelism", "0"], &no_env).0, 2);
    assert_eq!(run(&["--config", c, "run", "--thresholds", "25,1"], &no_env).0, 2);
    assert_eq!(run(&["--config", c, "run", "--mode", "sideways"], &no_env).0, 2);
    assert_eq!(run(&["--config", "/nonexistent/config.toml", "run"], &no_env).0, 2);
    assert_eq!(run(&["run"], &no_env).0, 2);
    assert_eq!(run(&["frobnicate"], &no_env).0, 2);

    fs::write(dir.path().join("bad.toml"), "budgte = 3\n").unwrap();
    assert_eq!(run(&["--config", dir.path().join("bad.toml").to_str().unwrap(), "run"], &no_env).0, 2);
    fs::write(dir.path().join("gone.toml"), "ground_truth = \"missing.csv\"\n").unwrap();
    assert_eq!(run(&["--config", dir.path().join("gone.toml").to_str().unwrap(), "run"], &no_env).0, 2);
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = BTreeMap::new();
    script.insert("a", vec![answer(1.0, 1.0)]);
    let cfg = corpus(dir.path(), &[("a", 1.0, 1.0)], &script, "");
    // The output directory cannot be created under a regular file.
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = dir.path().join("blocker/sub");
    let (code, _) = run(&["--config", cfg.to_str().unwrap(), "run", "--out-dir", out.to_str().unwrap()], &no_env);
    assert_eq!(code, 1);
}

#[test]
fn precedence_flags_over_env_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "budget = 3\nparallelism = 2\nmode = \"cot\"\n[filter]\ntrials = 4\n").unwrap();
    let env = |k: &str| match k {
        "GEOAGENT_BUDGET" => Some("4".to_string()),
        "GEOAGENT_PARALLELISM" => Some("3".to_string()),
        "GEOAGENT_K_TRIALS" => Some("6".to_string()),
        _ => None,
    };
    let flags = Overrides { budget: Some(5), ..Overrides::default() };
    let cfg = resolve_config(Some(&path), &flags, &env).unwrap();
    assert_eq!(cfg.budget, 5);
    assert_eq!(cfg.parallelism, 3);
    assert_eq!(cfg.filter.trials, 6);
    assert_eq!(cfg.mode, ModeArg::Cot);

    let cfg = resolve_config(Some(&path), &Overrides::default(), &no_env).unwrap();
    assert_eq!((cfg.budget, cfg.parallelism, cfg.filter.trials), (3, 2, 4));

    let bad_env = |k: &str| (k == "GEOAGENT_BUDGET").then(|| "lots".to_string());
    assert!(matches!(resolve_config(Some(&path), &Overrides::default(), &bad_env), Err(CliError::Config(_))));
}

#[test]
fn thresholds_flag_overrides_ladders() {
    let flags = Overrides { thresholds: Some(vec![5.0, 50.0]), ..Overrides::default() };
    let cfg = resolve_config(None, &flags, &no_env).unwrap();
    assert_eq!(cfg.thresholds_km.thresholds(), [5.0, 50.0]);
    assert_eq!(cfg.filter.thresholds(), [5.0, 50.0]);
}

#[test]
fn relative_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("sub")).unwrap();
    let path = dir.path().join("sub/c.toml");
    fs::write(&path, "out_dir = \"o\"\n[policy]\nkind = \"scripted\"\nscript = \"s.json\"\n").unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.out_dir, dir.path().join("sub/o"));
    assert_eq!(cfg.policy, Some(PolicyConfig::Scripted { script: dir.path().join("sub/s.json") }));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = (0..6).map(|i| (["p", "q", "r", "s", "t", "u"][i], i as f64 * 10.0, i as f64 * -5.0)).collect();
    let mut script = BTreeMap::new();
    for (i, (id, lat, lon)) in rows.iter().enumerate() {
        let call = r#"<tool_call>{"name":"image_zoom_in_tool","arguments":{"bbox_2d":[0,0,10,10]}}</tool_call>"#;
        let msgs = if i % 2 == 0 { vec![call.to_string(), answer(*lat, *lon)] } else { vec![answer(north(*lat, 40.0), *lon)] };
        script.insert(*id, msgs);
    }
    let cfg = corpus(dir.path(), &rows, &script, "");
    let mut outputs = Vec::new();
    for (k, par) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let args = ["--config", cfg.to_str().unwrap(), "run", "--parallelism", par, "--out-dir", out.to_str().unwrap()];
        assert_eq!(run(&args, &no_env).0, 0);
        let files: Vec<_> = ["trajectories.jsonl", "report.json", "report.csv", "usage.json"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn datagen_counts_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = ["a", "b", "c", "d", "e"].iter().enumerate().map(|(i, id)| (*id, i as f64, i as f64)).collect();
    let mut script = BTreeMap::new();
    let mut observer = BTreeMap::new();
    for (i, (id, lat, lon)) in rows.iter().enumerate() {
        let km = if i < 2 { 1.0 } else { 50.0 };
        script.insert(*id, vec![answer(north(*lat, km), *lon)]);
        observer.insert(*id, vec!["Macro-scale: plains.".to_string()]);
    }
    fs::write(dir.path().join("observer.json"), serde_json::to_string(&observer).unwrap()).unwrap();
    let cfg = corpus(dir.path(), &rows, &script, "[observer]\nkind = \"scripted\"\nscript = \"observer.json\"\n");
    let (code, stdout) = run(&["--config", cfg.to_str().unwrap(), "datagen"], &no_env);
    assert_eq!(code, 0, "{stdout}");
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!((m.raw, m.accepted), (5, 2));
    assert_eq!(m.acceptance_rate, 0.4);
    assert_eq!(m.config, crate::datagen::CurationConfig::default());
    assert_eq!(fs::read_to_string(dir.path().join("out/sft.jsonl")).unwrap().lines().count(), 5);
    assert_eq!(fs::read_to_string(dir.path().join("out/observations.jsonl")).unwrap().lines().count(), 5);

    // Nothing passes a 0.1 km threshold: still a successful run.
    let strict = dir.path().join("strict.toml");
    let text = fs::read_to_string(&cfg).unwrap() + "[curation]\ndistance_threshold_km = 0.1\n";
    fs::write(&strict, text).unwrap();
    let (code, _) = run(&["--config", strict.to_str().unwrap(), "datagen", "--out-dir", dir.path().join("o2").to_str().unwrap()], &no_env);
    assert_eq!(code, 0);
    let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("o2/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.accepted, 0);
    assert_eq!(fs::read_to_string(dir.path().join("o2/trajectories.jsonl")).unwrap(), "");
}

#[test]
fn datagen_needs_an_observer() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = BTreeMap::new();
    script.insert("a", vec![answer(1.0, 1.0)]);
    let cfg = corpus(dir.path(), &[("a", 1.0, 1.0)], &script, "");
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "datagen"], &no_env).0, 2);
}

#[test]
fn filter_on_probe_fixture() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e/filter.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let (code, _) = run(&["--config", cfg.to_str().unwrap(), "filter", "--out-dir", out.to_str().unwrap()], &no_env);
    assert_eq!(code, 0);
    let m: ProbeManifest = serde_json::from_str(&fs::read_to_string(out.join("probe_manifest.json")).unwrap()).unwrap();
    let fx = m.images.iter().find(|e| e.record.image_id == "fx.jpg").unwrap();
    let counts: Vec<_> = fx.record.pass_counts.iter().map(|p| p.count).collect();
    assert_eq!(counts, [1, 2, 5, 6]);
    assert_eq!(
        fs::read_to_string(out.join("curriculum.jsonl")).unwrap(),
        "{\"phase\":1,\"image_id\":\"fx.jpg\"}\n{\"phase\":2,\"image_id\":\"fx.jpg\"}\n{\"phase\":2,\"image_id\":\"loose.jpg\"}\n"
    );

    let out2 = dir.path().join("g");
    let args = ["--config", cfg.to_str().unwrap(), "filter", "--thresholds", "1,1000", "--out-dir", out2.to_str().unwrap()];
    assert_eq!(run(&args, &no_env).0, 0);
    let m: ProbeManifest = serde_json::from_str(&fs::read_to_string(out2.join("probe_manifest.json")).unwrap()).unwrap();
    assert_eq!(m.thresholds_km, [1.0, 1000.0]);
}

#[test]
fn anonymize_table_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("gt.csv");
    fs::write(&table, "image_id,lat,lon\nx.jpg,1.5,2.5\ny.jpg,-3,4\n").unwrap();
    let env = |k: &str| (k == "ANON_SALT").then(|| "pepper".to_string());
    let out = dir.path().join("anon");
    let args = ["anonymize", "--input", table.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    assert_eq!(run(&args, &env).0, 0);
    let mapping = fs::read_to_string(out.join("mapping.csv")).unwrap();
    let hx = anonymize_id("x.jpg", "pepper").unwrap();
    assert!(mapping.starts_with(&format!("original_id,anonymized_id\nx.jpg,{hx}\n")));
    let renamed = crate::datagen::read_ground_truth(&out.join("ground_truth.csv")).unwrap();
    assert_eq!(renamed[0].0, hx);
    assert_eq!((renamed[1].1.lat(), renamed[1].1.lon()), (-3.0, 4.0));

    let list = dir.path().join("ids.txt");
    fs::write(&list, "a\n\nb\na\n").unwrap();
    let out = dir.path().join("anon2");
    let args = ["anonymize", "--input", list.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    assert_eq!(run(&args, &env).0, 0);
    assert_eq!(fs::read_to_string(out.join("mapping.csv")).unwrap().lines().count(), 3);

    assert_eq!(run(&args, &no_env).0, 2);
}

#[test]
fn report_renders_saved_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut script = BTreeMap::new();
    script.insert("a", vec![answer(1.0, 1.0)]);
    let cfg = corpus(dir.path(), &[("a", 1.0, 1.0)], &script, "");
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["--config", c, "run"], &no_env).0, 0);
    let (code, out) = run(&["--config", c, "report", "--format", "csv"], &no_env);
    assert_eq!(code, 0);
    assert!(out.starts_with("threshold_km,accuracy\n1,1\n"));
    let (code, out) = run(&["--config", c, "report", "--format", "json"], &no_env);
    assert_eq!(code, 0);
    assert!(out.contains("\"accuracy\""));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["report", "--in-dir", empty.to_str().unwrap()], &no_env).0, 2);
}
