mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use main_annotate::agreement::AnnotationStore;
use main_annotate::annotate::{
    annotate_corpus, AnnotateOptions, NarrativeStatus, RunManifest, RAW_DIR,
};
use main_annotate::chat::Story;
use main_annotate::corpus::{load_annotations, load_corpus};
use main_annotate::llm::LlmClient;
use main_annotate::report::{build_report, ReportFormat, ReportSpec};
use main_annotate::rubric::{AnnotationSet, ElementId};

use common::*;

const BIN: &str = env!("CARGO_BIN_EXE_main-annotate");

fn copy_corpus(to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(corpus_dir()).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, to.join(p.file_name().unwrap())).unwrap();
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json" || x == "txt"))
        .filter(|p| p.file_name().unwrap() != "run_manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

async fn annotate(corpus: &Path, out: &Path, mock: &MockLlm, resume: bool) -> RunManifest {
    let client = LlmClient::with_api_key(mock_config(&mock.base_url), None).unwrap();
    let corpus = load_corpus(corpus).unwrap();
    annotate_corpus(&corpus, "test", &client, out, &AnnotateOptions { resume })
        .await
        .unwrap()
}

#[tokio::test]
async fn fixtures_annotate_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let mock = start_mock(fixture_responder((2000, 150)), Duration::ZERO).await;
    let out = tmp.path().join("llm");
    let m = annotate(&corpus_dir(), &out, &mock, false).await;
    assert_eq!(m.narratives.len(), 3);
    assert_eq!(m.count(NarrativeStatus::Ok), 3, "{:#?}", m.narratives);
    assert_eq!(m.rater_id, "deepseek-r1");
    assert_eq!(m.ledger.requests, 3);
    assert_eq!(m.ledger.total_tokens, 3 * 2150);
    for n in &m.narratives {
        assert!(out.join(format!("{}.json", n.narrative_id)).exists());
        assert!(out
            .join(RAW_DIR)
            .join(format!("{}.txt", n.narrative_id))
            .exists());
    }
    let loaded = load_annotations(&out).unwrap();
    assert_eq!(loaded.sets.len(), 3);
    let t7 = loaded
        .sets
        .iter()
        .find(|a| a.narrative_id == "chi_dog_table7")
        .unwrap();
    assert_eq!(t7, &{
        let mut e = table7_set("deepseek-r1");
        e.rater_id = "deepseek-r1".into();
        e
    });
    let raw = std::fs::read_to_string(out.join(RAW_DIR).join("chi_dog_appendix.txt")).unwrap();
    assert!(raw.starts_with("思考过程略。"));
    let again = RunManifest::load(&out.join("run_manifest.json")).unwrap();
    assert_eq!(again, m);
}

#[tokio::test]
async fn unparseable_response_is_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let inner = fixture_responder((10, 10));
    let responder: Responder = Arc::new(move |body, n| {
        if user_content(body).contains("小猫吃了他里面的一条鱼") {
            (200, completion_body("抱歉，我无法完成这个任务。", 10, 10))
        } else {
            inner(body, n)
        }
    });
    let mock = start_mock(responder, Duration::ZERO).await;
    let out = tmp.path().join("llm");
    let m = annotate(&corpus_dir(), &out, &mock, false).await;
    let cat = m
        .narratives
        .iter()
        .find(|n| n.narrative_id == "eld_cat_appendix")
        .unwrap();
    assert_eq!(cat.status, NarrativeStatus::ParseFailed);
    assert!(cat.usage.is_some());
    assert!(!out.join("eld_cat_appendix.json").exists());
    assert!(out.join(RAW_DIR).join("eld_cat_appendix.txt").exists());
    assert_eq!(m.count(NarrativeStatus::Ok), 2);
}

#[tokio::test]
async fn broken_transcript_does_not_stop_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    copy_corpus(&corpus);
    std::fs::write(corpus.join("broken.cha"), "@Begin\n*CHI: no tab\n").unwrap();
    let mock = start_mock(fixture_responder((10, 10)), Duration::ZERO).await;
    let out = tmp.path().join("llm");
    let m = annotate(&corpus, &out, &mock, false).await;
    let broken = m
        .narratives
        .iter()
        .find(|n| n.narrative_id == "broken")
        .unwrap();
    assert_eq!(broken.status, NarrativeStatus::InputFailed);
    assert_eq!(m.count(NarrativeStatus::Ok), 3);
}

#[tokio::test]
async fn resume_matches_a_fresh_run() {
    let tmp = tempfile::tempdir().unwrap();
    let good = fixture_responder((100, 20));
    let flaky = {
        let good = good.clone();
        let r: Responder = Arc::new(move |body, n| {
            if user_content(body).contains("小狗也很开心") {
                (400, serde_json::json!({"error": "bad request"}))
            } else {
                good(body, n)
            }
        });
        r
    };

    let resumed = tmp.path().join("resumed");
    let first = start_mock(flaky, Duration::ZERO).await;
    let m1 = annotate(&corpus_dir(), &resumed, &first, false).await;
    assert_eq!(m1.count(NarrativeStatus::LlmFailed), 1);
    assert!(!resumed.join("chi_dog_table7.json").exists());

    let second = start_mock(good.clone(), Duration::ZERO).await;
    let m2 = annotate(&corpus_dir(), &resumed, &second, true).await;
    assert_eq!(
        second.stats.calls.load(std::sync::atomic::Ordering::SeqCst),
        1
    );
    assert_eq!(m2.count(NarrativeStatus::Ok), 3);
    assert_eq!(m2.narratives.iter().filter(|n| n.resumed).count(), 2);
    // resumed narratives keep their usage, so the ledger covers the whole corpus
    assert_eq!(m2.ledger.requests, 3);
    assert_eq!(m2.ledger.total_tokens, 3 * 120);

    let fresh = tmp.path().join("fresh");
    let third = start_mock(good, Duration::ZERO).await;
    let m3 = annotate(&corpus_dir(), &fresh, &third, false).await;
    assert_eq!(read_dir_sorted(&resumed), read_dir_sorted(&fresh));
    assert_eq!(
        read_dir_sorted(&resumed.join(RAW_DIR)),
        read_dir_sorted(&fresh.join(RAW_DIR))
    );
    assert_eq!(m2.run_id, m3.run_id);
    assert_eq!(m2.ledger.total_tokens, m3.ledger.total_tokens);
    assert_eq!(m2.ledger.cost, m3.ledger.cost);
}

#[tokio::test]
async fn ledger_over_sixty_four_narratives() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for i in 0..64 {
        std::fs::write(
            corpus.join(format!("n{i:02}.cha")),
            format!("@Story:\tcat\n*CHI:\t第{i}只小猫。\n"),
        )
        .unwrap();
    }
    let mock = start_mock(
        Arc::new(|_, _| (200, completion_body(&full_dict(), 4000, 1000))),
        Duration::ZERO,
    )
    .await;
    let mut cfg = mock_config(&mock.base_url);
    cfg.price_per_1k_prompt_tokens = 0.004;
    cfg.price_per_1k_completion_tokens = 0.016;
    let client = LlmClient::with_api_key(cfg, None).unwrap();
    let out = tmp.path().join("llm");
    let m = annotate_corpus(
        &load_corpus(&corpus).unwrap(),
        "cheap",
        &client,
        &out,
        &AnnotateOptions::default(),
    )
    .await
    .unwrap();
    assert_eq!(m.count(NarrativeStatus::Ok), 64, "{:#?}", m.narratives[0]);
    assert_eq!(m.ledger.requests, 64);
    assert_eq!(m.ledger.total_tokens, 320_000);
    assert!((m.ledger.cost - 2.048).abs() < 1e-9, "{}", m.ledger.cost);
    let summed: u64 = m
        .narratives
        .iter()
        .map(|n| {
            n.usage.as_ref().unwrap().prompt_tokens + n.usage.as_ref().unwrap().completion_tokens
        })
        .sum();
    assert_eq!(summed, m.ledger.total_tokens);
}

/// Two raters over 20 narratives whose kappa is exactly 0.80.
fn kappa_080_store() -> AnnotationStore {
    let mut store = AnnotationStore::new();
    for rater in ["human1", "human2"] {
        for n in 0..20 {
            let mut a = AnnotationSet::new(format!("n{n:02}"), rater, Story::Dog);
            for k in 0..17 {
                let e = ElementId::new(k as u8).unwrap();
                let i = n * 17 + k;
                let present = match rater {
                    "human1" => i < 170,
                    _ => i < 153 || (170..187).contains(&i),
                };
                if present {
                    a.positions.insert(e, 1);
                }
            }
            store.insert(a);
        }
    }
    store
}

#[test]
fn boundary_kappa_reads_as_substantial() {
    let store = kappa_080_store();
    let spec = ReportSpec {
        humans: vec!["human1".into(), "human2".into()],
        models: vec![],
    };
    let r = build_report(&store, &spec, &[], None).unwrap();
    let row = &r.overall[0];
    assert_eq!(row.items, 340);
    assert!((row.kappa.unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(row.interpretation, "substantial");
    let md = r.render(ReportFormat::Markdown);
    assert!(
        md.contains("| inter-human-annotator | 0.800 | substantial |"),
        "{md}"
    );
}

#[test]
fn report_is_byte_deterministic() {
    let spec = ReportSpec {
        humans: vec!["human1".into(), "human2".into()],
        models: vec![],
    };
    let a = build_report(&kappa_080_store(), &spec, &[], None).unwrap();
    let b = build_report(&kappa_080_store(), &spec, &[], None).unwrap();
    for f in [ReportFormat::Csv, ReportFormat::Markdown] {
        assert_eq!(a.render(f), b.render(f));
    }
}

fn full_dict() -> String {
    let mut a = AnnotationSet::new("x", "x", Story::Cat);
    a.positions.insert(ElementId::new(0).unwrap(), 1);
    a.positions.to_dict_string()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> (bool, String, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .env_remove("MAIN_ANNOTATE_CONFIG")
        .env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let o = cmd.output().unwrap();
    (
        o.status.success(),
        String::from_utf8(o.stdout).unwrap(),
        String::from_utf8(o.stderr).unwrap(),
    )
}

#[tokio::test(flavor = "multi_thread")]
async fn cli_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let mock = start_mock(fixture_responder((2000, 150)), Duration::ZERO).await;
    let cfg = tmp.path().join("models.toml");
    std::fs::write(
        &cfg,
        format!(
            "[profiles.r1]\nmodel_name = \"deepseek-r1\"\nbase_url = \"{}\"\napi_key_env = \"MAIN_TEST_KEY\"\nretry_base_delay_ms = 5\nprice_per_1k_prompt_tokens = 0.002\n",
            mock.base_url
        ),
    )
    .unwrap();
    let llm = tmp.path().join("llm");
    let humans = tmp.path().join("humans");
    write_set(&humans.join("h1"), &table7_set("human1"));
    write_set(&humans.join("h2"), &table7_set("human2"));

    let corpus = corpus_dir();
    let t = tmp.path().to_path_buf();
    let cfg_s = cfg.display().to_string();
    let corpus_s = corpus.display().to_string();
    let llm_s = llm.display().to_string();
    let h1_s = humans.join("h1").display().to_string();
    let h2_s = humans.join("h2").display().to_string();
    let report_path = t.join("report.csv").display().to_string();

    let (ok, out, err) = tokio::task::spawn_blocking({
        let (cfg_s, corpus_s, llm_s) = (cfg_s.clone(), corpus_s.clone(), llm_s.clone());
        move || {
            run_cli(
                &[
                    "--config", &cfg_s, "annotate", "--model", "r1", "--in", &corpus_s, "--out",
                    &llm_s,
                ],
                &[("MAIN_TEST_KEY", "sk-local")],
            )
        }
    })
    .await
    .unwrap();
    assert!(ok, "{err}");
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["ok"], 3);
    assert_eq!(
        mock.stats.auth.lock().unwrap()[0].as_deref(),
        Some("Bearer sk-local")
    );

    let manifest_s = t.join("llm/run_manifest.json").display().to_string();
    let args_report = vec![
        "report".to_string(),
        "--annotations".into(),
        h1_s,
        "--annotations".into(),
        h2_s,
        "--annotations".into(),
        llm_s.clone(),
        "--corpus".into(),
        corpus_s.clone(),
        "--manifest".into(),
        manifest_s,
        "--format".into(),
        "csv".into(),
        "--out".into(),
        report_path.clone(),
    ];
    let args_self = vec![
        "agree".to_string(),
        "--annotations".into(),
        llm_s.clone(),
        "--raters".into(),
        "deepseek-r1,deepseek-r1".into(),
    ];
    let args_score = vec!["score".to_string(), llm_s.clone()];
    let (first, second, self_cmp, score, missing_key) = tokio::task::spawn_blocking(move || {
        let r1 = run_cli(&strs(&args_report), &[]);
        assert!(r1.0, "{}", r1.2);
        let first = std::fs::read(&report_path).unwrap();
        let r2 = run_cli(&strs(&args_report), &[]);
        assert!(r2.0, "{}", r2.2);
        let second = std::fs::read(&report_path).unwrap();
        let self_cmp = run_cli(&strs(&args_self), &[]);
        let score = run_cli(&strs(&args_score), &[]);
        let missing_key = run_cli(
            &[
                "--config", &cfg_s, "annotate", "--model", "r1", "--in", &corpus_s, "--out", &llm_s,
            ],
            &[],
        );
        (first, second, self_cmp, score, missing_key)
    })
    .await
    .unwrap();

    assert_eq!(first, second);
    let csv = String::from_utf8(first).unwrap();
    assert!(csv.starts_with("section,row,column,value\n"), "{csv}");
    assert!(
        csv.contains("overall,inter-human-annotator,kappa,"),
        "{csv}"
    );
    assert!(csv.contains("cost,deepseek-r1,"), "{csv}");

    assert!(self_cmp.0, "{}", self_cmp.2);
    assert!(
        self_cmp.1.contains("\t1.000\talmost perfect"),
        "{}",
        self_cmp.1
    );

    assert!(score.0);
    let lines: Vec<&str> = score.1.lines().collect();
    assert_eq!(lines[0], "narrative_id,rater_id,story,score,present");
    assert_eq!(lines.len(), 4);
    assert!(lines
        .iter()
        .any(|l| l.starts_with("chi_dog_appendix,deepseek-r1,dog,8,")));

    assert!(!missing_key.0);
    assert!(missing_key.2.contains("MAIN_TEST_KEY"), "{}", missing_key.2);
}

#[test]
fn example_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models.example.toml");
    let cfg = main_annotate::config::Config::load(&path).unwrap();
    assert_eq!(cfg.profiles.len(), 4);
    assert_eq!(cfg.workflow.baseline_minutes_per_story, 10.0);
    let r1 = cfg.profile("r1").unwrap();
    assert_eq!(r1.request_timeout_secs, 600);
    let cost = main_annotate::llm::request_cost(320_393, 0, r1);
    assert!((cost - 0.66).abs() < 0.01);
}
