mod common;

use main_annotate::chat::{
    clean_text, clean_text_checked, parse_transcript, render_numbered_block, ChatError, Overrides,
    Story, TextMode,
};

use common::{fixture, fixtures};

/// Speaker tiers of a CHAT file with their continuation lines, read
/// directly from the text.
fn speaker_lines(text: &str) -> String {
    let mut out = String::new();
    let mut in_speaker = false;
    for line in text.lines() {
        if line.starts_with('*') {
            in_speaker = true;
        } else if !line.starts_with('\t') {
            in_speaker = false;
        }
        if in_speaker {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn all_fixture_files() -> Vec<std::path::PathBuf> {
    let mut files = vec![fixtures().join("markers.cha")];
    for e in std::fs::read_dir(common::corpus_dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "cha") {
            files.push(p);
        }
    }
    files.sort();
    files
}

#[test]
fn speaker_tiers_round_trip_byte_exact() {
    for path in all_fixture_files() {
        let text = std::fs::read_to_string(&path).unwrap();
        let t =
            parse_transcript(&text, &path.display().to_string(), &Overrides::default()).unwrap();
        assert_eq!(
            t.speaker_tier_lines(),
            speaker_lines(&text),
            "{}",
            path.display()
        );
    }
}

#[test]
fn numbering_is_contiguous() {
    for path in all_fixture_files() {
        let t = main_annotate::chat::parse_file(&path, &Overrides::default()).unwrap();
        let idx: Vec<u32> = t.utterances.iter().map(|u| u.index).collect();
        let expected: Vec<u32> = (1..=t.utterances.len() as u32).collect();
        assert_eq!(idx, expected);
        for mode in [TextMode::Raw, TextMode::Clean] {
            let block = render_numbered_block(&t, mode);
            assert_eq!(block.lines().count(), t.line_count());
            for (i, line) in block.lines().enumerate() {
                assert!(line.starts_with(&format!("{} ", i + 1)), "{line}");
            }
        }
    }
}

#[test]
fn appendix_a_fixture() {
    let t = fixture("chi_dog_appendix.cha");
    assert_eq!(t.line_count(), 13);
    assert_eq!(t.story, Story::Dog);
    assert!(t.utterances[2].raw_text.contains("在这里抓这个小老鼠"));
    let block = render_numbered_block(&t, TextMode::Raw);
    assert_eq!(block.lines().next(), Some("1 有一天有一个小老鼠"));
}

#[test]
fn table7_examples_clean() {
    let t = fixture("chi_dog_table7.cha");
    assert_eq!(t.line_count(), 15);
    assert_eq!(t.participant.participant_id, "c017");
    assert_eq!(t.utterances[11].clean_text, "后来小朋友够到气球了。");
    assert_eq!(t.utterances[13].clean_text, "最后 小朋友 很开心。");
    assert_eq!(t.utterances[5].clean_text, "只好用头伸进 去看。");
    assert_eq!(t.utterances[3].clean_text, "可是老鼠跑进了 树洞里。");
    // the dependent tier is attached, not numbered
    assert_eq!(t.utterances[6].dependents.len(), 1);
    assert_eq!(t.utterances[7].raw_text, "发现了一个气球。");
}

#[test]
fn marker_fixture() {
    let t = fixture("markers.cha");
    let clean: Vec<&str> = t.utterances.iter().map(|u| u.clean_text.as_str()).collect();
    assert_eq!(
        clean,
        [
            "有一天 一只猫在草地上。",
            "它 想抓蝴蝶。",
            "猫就扑了过去 可是没抓到。",
            "男孩的球 掉进水里了 。",
            "男孩用鱼竿 把球拿了上来。",
        ]
    );
    assert_eq!(
        t.utterances[2].raw_text,
        "<它跳> [///] 猫就扑了过去 可是没抓到。"
    );
}

#[test]
fn cleaning_is_idempotent_and_adds_nothing() {
    for path in all_fixture_files() {
        let t = main_annotate::chat::parse_file(&path, &Overrides::default()).unwrap();
        for u in &t.utterances {
            let once = clean_text(&u.raw_text);
            assert_eq!(clean_text(&once), once);
            for ch in once.chars().filter(|c| !c.is_whitespace()) {
                assert!(u.raw_text.contains(ch), "{ch:?} not in {:?}", u.raw_text);
            }
        }
    }
}

#[test]
fn unbalanced_scope_passes_through() {
    let c = clean_text_checked("它 <想 [/] 想抓");
    assert_eq!(c.text, "它 <想 [/] 想抓");
    assert!(!c.warnings.is_empty());
}

#[test]
fn parse_errors() {
    let none = Overrides::default();
    assert!(matches!(
        parse_transcript("@Story:\tdog\n@End\n", "x.cha", &none),
        Err(ChatError::EmptyTranscript)
    ));
    assert!(matches!(
        parse_transcript("@Story:\tdog\n*CHI: no tab\n", "x.cha", &none),
        Err(ChatError::MalformedTier { .. })
    ));
    assert!(matches!(
        parse_transcript("*CHI:\t有一天小狗出来玩。\n", "x.cha", &none),
        Err(ChatError::UnknownStory)
    ));
    let dog = Overrides {
        story: Some(Story::Dog),
        ..Default::default()
    };
    let t = parse_transcript("*CHI:\t有一天小狗出来玩。\n", "x.cha", &dog).unwrap();
    assert_eq!(t.utterances.len(), 1);
    assert_eq!(t.utterances[0].index, 1);
    assert_eq!(t.utterances[0].raw_text, "有一天小狗出来玩。");
}
