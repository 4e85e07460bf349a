use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use agora_core::bundle::{audit_tree, load_bundle, CompetitionBundle, SplitOptions};
use agora_core::community::{ArtifactId, AuthorTier, CommunityLog, Comment, CommunitySnapshot, Discussion, Kernel};
use agora_core::fixtures::toy_regression;
use agora_core::llm::{Gateway, PriceTable, Role, Script, ScriptEntry, ScriptedBackend};
use agora_core::roles::{
    analyze, brainstorm, compile_report, extract_discussion_ideas, merge_memory, refine_ideas, run_coding_agent,
    synthesize_drafts, synthesize_eval_scripts, AgentContext, AgentRun, EvaluatorSetup, Idea, IdeaOrigin, IdeaPool,
    IterationState, Notes, SolutionDraft, StopReason,
};
use agora_core::sandbox::{open_session, Budget, Dialect, GuestSpec, Mount, Session, SessionConfig};
use agora_core::text::normalize;

const POLL: Duration = Duration::from_secs(1);

fn entry(role: Role, channel: &str, responses: &[&str]) -> ScriptEntry {
    ScriptEntry {
        role: Some(role),
        contains: String::new(),
        channel: Some(channel.to_string()),
        responses: responses.iter().map(|s| s.to_string()).collect(),
    }
}

fn gateway(entries: Vec<ScriptEntry>) -> Gateway {
    Gateway::new(Box::new(ScriptedBackend::new(Script { entries })), PriceTable::default())
}

fn kernel(key: &str, body: &str) -> Kernel {
    Kernel {
        id: ArtifactId::kernel(key),
        author_tier: AuthorTier::Expert,
        votes: 3,
        public_score: None,
        published_at: 100,
        body: body.into(),
        produced_files: Vec::new(),
    }
}

fn discussion(key: &str, body: &str) -> Discussion {
    Discussion {
        id: ArtifactId::discussion(key),
        votes: 4,
        published_at: 90,
        body: body.into(),
        comments: vec![Comment {
            author_tier: AuthorTier::Master,
            text: "Worked for me as well.".into(),
        }],
    }
}

fn report_reply(component: &str, scores: [&str; 5]) -> String {
    format!(
        "Pipeline: denoise scans with a small convolutional net\nCode abstract: load -> patches -> train -> predict\nSummary:\n- {component}:\n  Novelty: {}\n  Rationale: common choice.\n  Feasibility: {}\n  Rationale: few lines of code.\n  Effectiveness: {}\n  Efficiency: {}\n  Confidence: {}\nWeaknesses: no augmentation\n",
        scores[0], scores[1], scores[2], scores[3], scores[4]
    )
}

#[test]
fn analyzer_parses_and_clamps_scores() {
    let gw = gateway(vec![
        entry(Role::Analyzer, "/analyze/kernel:pixel-net", &[&report_reply("Pixel MLP", ["7", "8", "5", "6", "7"])]),
        entry(Role::Analyzer, "/analyze/kernel:wide-net", &[&report_reply("Wide filters", ["15", "9", "5", "6", "7"])]),
    ]);
    let kernels = [kernel("pixel-net", "print(1)"), kernel("wide-net", "print(2)")];
    let mut notes = Notes::default();
    let reports = analyze(&kernels, "clean scanned pages", &gw, 1, &mut notes).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].components[0].novelty, 7.0);
    assert_eq!(reports[1].components[0].novelty, 10.0);
    assert_eq!(notes.len(), 1);
    assert!(notes.iter().next().unwrap().message.contains("clamped to 10"));
    for r in &reports {
        for c in &r.components {
            for s in [c.novelty, c.feasibility, c.effectiveness, c.efficiency, c.confidence] {
                assert!((0.0..=10.0).contains(&s));
            }
        }
    }
}

#[test]
fn unparseable_kernel_is_skipped_after_reasks() {
    let gw = gateway(vec![entry(Role::Analyzer, "/analyze/", &["I liked it."])]);
    let mut notes = Notes::default();
    let reports = analyze(&[kernel("vague", "x = 1")], "task", &gw, 1, &mut notes).unwrap();
    assert!(reports.is_empty());
    assert_eq!(gw.records().len(), 3);
    assert_eq!(notes.len(), 1);
}

/// Seven distilled ideas, written for this fixture.
const SEVEN: &str = "['group networks by where they fail and blend each group', \
'predict a block of output pixels from each input window', \
'stack convolutions with widening channel counts and leaky activations', \
'scale initial conv weights by fan-in', \
'feed several preprocessed views of a page to separate models', \
'warp clean pages with synthetic folds and shading', \
'treat halo pixels in the clean targets as noise']";

#[test]
fn discussions_yield_the_case_study_idea_count() {
    let gw = gateway(vec![entry(Role::Analyzer, "/discussions", &[SEVEN])]);
    let ds = [discussion("tips", "Shadows hurt the most."), discussion("halo", "Targets have halos.")];
    let mut notes = Notes::default();
    let ideas = extract_discussion_ideas(&ds, "clean scanned pages", &gw, 1, &mut notes).unwrap();
    assert_eq!(ideas.len(), 7);
    assert!(ideas.iter().all(|i| i.origin == IdeaOrigin::DiscussionExtract));

    let none = extract_discussion_ideas(&[], "task", &gw, 1, &mut notes).unwrap();
    assert!(none.is_empty());
    assert_eq!(gw.records().len(), 1);
}

fn paths_reply(n: usize) -> String {
    (0..n)
        .map(|p| format!("===SOLUTION_PATH_{}===\nRoute {p}\n- try route {p} step a\n- try route {p} step b\n", p + 1))
        .collect()
}

#[test]
fn brainstorm_excludes_pool_duplicates() {
    let gw = gateway(vec![entry(Role::Proposer, "/brainstorm", &[&paths_reply(4)])]);
    let pool = merge_memory(
        &IdeaPool::new(),
        &[Idea::new("p0", "Try route 2 step A", IdeaOrigin::Brainstorm, 0)],
    );
    let mut notes = Notes::default();
    let (paths, ideas) = brainstorm("task", &[], &pool, "", &gw, 1, &mut notes).unwrap();
    assert_eq!(paths.len(), 4);
    assert!(paths.iter().all(|p| !p.ideas.is_empty()));
    // oracle: normalized set difference against the pool
    let all: Vec<String> = paths.iter().flat_map(|p| p.ideas.clone()).collect();
    let expected: BTreeSet<String> = all.iter().map(|s| normalize(s)).filter(|k| !pool.keys().contains(k)).collect();
    let got: BTreeSet<String> = ideas.iter().map(Idea::key).collect();
    assert_eq!(got, expected);
    assert_eq!(ideas.len(), 7);
    assert!(notes.is_empty());
}

#[test]
fn short_brainstorm_is_reasked_once() {
    let gw = gateway(vec![entry(Role::Proposer, "/brainstorm", &[&paths_reply(2), &paths_reply(3)])]);
    let mut notes = Notes::default();
    let (paths, _) = brainstorm("task", &[], &IdeaPool::new(), "", &gw, 1, &mut notes).unwrap();
    assert_eq!(paths.len(), 3);
    assert_eq!(gw.records().len(), 2);
    assert_eq!(notes.len(), 1);
}

fn ideas(texts: &[&str], origin: IdeaOrigin) -> Vec<Idea> {
    texts.iter().enumerate().map(|(i, t)| Idea::new(format!("c{i}"), *t, origin, 1)).collect()
}

#[test]
fn refinement_merges_and_falls_back() {
    let gw = gateway(vec![entry(Role::Proposer, "t001/refine", &["['median filter', 'median filter ', 'gbm']"])]);
    let mut notes = Notes::default();
    let cands = ideas(&["median filter", "Median  Filter", "gbm"], IdeaOrigin::Brainstorm);
    let out = refine_ideas(&cands, &[], "", &gw, 1, &mut notes).unwrap();
    assert_eq!(out.len(), 2);

    assert!(refine_ideas(&[], &[], "", &gw, 1, &mut notes).unwrap().is_empty());

    let broken = gateway(vec![entry(Role::Proposer, "/refine", &["no list here"])]);
    let out = refine_ideas(&cands, &[], "", &broken, 2, &mut notes).unwrap();
    assert_eq!(out.len(), 2);
    assert!(notes.iter().any(|n| n.message.contains("de-duplicated")));
}

#[test]
fn second_iteration_memory_keeps_old_and_adds_new() {
    let first: Vec<&str> = SEVEN.trim_matches(|c| c == '[' || c == ']').split("', '").map(|s| s.trim_matches('\'')).collect();
    assert_eq!(first.len(), 7);
    let pool = merge_memory(&IdeaPool::new(), &ideas(&first, IdeaOrigin::DiscussionExtract));
    // ten entries; positions 3, 4, 5 and 7 are new, the rest carry over
    let carried = [first[0], first[1], first[2], first[4], first[5], first[6]];
    let fresh = ["masked token pretraining", "diffusion restoration", "frequency band gating", "per-page test-time tuning"];
    let listing = [carried[0], carried[1], carried[2], fresh[0], fresh[1], fresh[2], carried[3], fresh[3], carried[4], carried[5]];
    let reply = format!("[{}]", listing.iter().map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", "));
    let gw = gateway(vec![entry(Role::Proposer, "t002/refine", &[&reply])]);
    let mut notes = Notes::default();
    let cands = ideas(&fresh, IdeaOrigin::Brainstorm);
    let refined = refine_ideas(&cands, &[], "", &gw, 2, &mut notes).unwrap();
    assert_eq!(refined.len(), 10);
    let new_at: Vec<usize> = refined.iter().enumerate().filter(|(_, i)| !pool.contains_text(&i.text)).map(|(n, _)| n).collect();
    assert_eq!(new_at, vec![3, 4, 5, 7]);
    let next = merge_memory(&pool, &refined);
    assert_eq!(next.len(), pool.len() + 4);
    assert!(pool.keys().is_subset(&next.keys()));
}

fn snapshot_with(keys: &[&str]) -> CommunitySnapshot {
    let mut snap = CommunitySnapshot::empty();
    for k in keys {
        snap = agora_core::community::publish(
            &snap,
            agora_core::community::Publishable::Kernel(kernel(k, "x")),
            &BTreeSet::new(),
            None,
        )
        .unwrap();
    }
    snap
}

#[test]
fn drafts_follow_the_requested_count() {
    let reply = "Baseline: median filter then threshold, as in kernel:median-clean.\n```\nmedian(img)\n```\n\
===SEPARATOR===\nWavelet U-Net building on kernel:median-clean and kernel:not-there.\n```\nunet(dwt(img))\n```";
    let gw = gateway(vec![entry(Role::Coordinator, "/drafts", &[reply])]);
    let snap = snapshot_with(&["median-clean"]);
    let mut notes = Notes::default();
    let drafts = synthesize_drafts("task", &[], &[], "", 2, &snap, &gw, 1, &mut notes).unwrap();
    assert_eq!(drafts.len(), 2);
    assert_eq!(drafts.iter().filter(|d| d.is_baseline).count(), 1);
    assert!(drafts[0].is_baseline);
    assert_eq!(drafts[1].code_abstract, "unet(dwt(img))");
    for d in &drafts {
        assert!(d.referenced_artifacts.iter().all(|id| snap.contains(id)));
    }
    assert!(notes.is_empty());

    let one = synthesize_drafts("task", &[], &[], "", 1, &snap, &gw, 2, &mut notes);
    assert!(one.is_err() || one.as_ref().unwrap()[0].is_baseline);
    let single = gateway(vec![entry(Role::Coordinator, "/drafts", &["Plain wavelet model"])]);
    let d = synthesize_drafts("task", &[], &[], "", 1, &snap, &single, 1, &mut notes).unwrap();
    assert!(d[0].is_baseline);
}

struct Split {
    _dir: tempfile::TempDir,
    bundle: CompetitionBundle,
    public: PathBuf,
    truth: PathBuf,
    root: PathBuf,
}

fn split_toy() -> Split {
    let dir = tempfile::tempdir().unwrap();
    toy_regression(&dir.path().join("bundle"), 80, 3);
    let bundle = load_bundle(&dir.path().join("bundle")).unwrap().with_split_root(dir.path().join("split"));
    bundle.split(&SplitOptions::default()).unwrap();
    Split {
        public: bundle.public_dir(),
        truth: bundle.private_dir().join("validate.csv"),
        root: dir.path().to_path_buf(),
        bundle,
        _dir: dir,
    }
}

fn fake_guest() -> GuestSpec {
    GuestSpec::new(env!("CARGO_BIN_EXE_agora-fake-guest"), &[], Dialect::Fake)
}

fn session(root: &Path, mounts: Vec<Mount>, max_steps: u32) -> Session {
    let mut sc = SessionConfig::new("agent", fake_guest(), root);
    sc.mounts = mounts;
    sc.budget = Budget {
        run_wall: Duration::from_secs(600),
        session_wall: Duration::from_secs(120),
        cell_wall: Duration::from_secs(30),
        max_steps,
    };
    open_session(sc).unwrap()
}

fn cell(goal: &str, code: &str, files: Option<(&str, &str)>) -> String {
    let (v, s) = files.unwrap_or(("None", "None"));
    format!("<goal>{goal}</goal>\n<code>\n{code}\n</code>\n<validation_submission>{v}</validation_submission>\n<submission>{s}</submission>\n")
}

fn draft(id: &str) -> SolutionDraft {
    SolutionDraft {
        id: id.into(),
        description: "Least squares on both features".into(),
        code_abstract: String::new(),
        is_baseline: false,
        referenced_artifacts: BTreeSet::new(),
    }
}

fn run_agent(s: &Split, gw: &Gateway, max_steps: u32) -> AgentRun {
    let agent_dir = s.root.join("agent");
    fs::create_dir_all(&agent_dir).unwrap();
    let mut sess = session(&agent_dir.join("session"), vec![Mount { source: s.public.clone(), at: String::new() }], max_steps);
    let grader = s.bundle.grader();
    let ctx = AgentContext {
        task_description: "predict target",
        data_overview: "train.csv, validate.csv, test.csv",
        grader: &grader,
        validation_truth: &s.truth,
        direction: s.bundle.direction(),
        gateway: gw,
        channel: "t001/agent0".into(),
        iteration: 1,
        run_id: "t001-agent0".into(),
        agent_dir: &agent_dir,
        submission_record_path: agent_dir.join("best_submission.csv"),
        monitor: None,
        poll_interval: POLL,
    };
    let run = run_coding_agent(&draft("d0"), &mut sess, &ctx).unwrap();
    sess.close();
    run
}

#[test]
fn three_cells_then_report() {
    let s = split_toy();
    let cells = [
        cell("Look around", "print inputs are in ../input", None),
        cell("Remember the columns", "set cols x1,x2", None),
        cell(
            "Fit and predict",
            "predict_linear ../input/train.csv target ../input/validate.csv id val.csv\n\
             predict_linear ../input/train.csv target ../input/test.csv id sub.csv",
            Some(("val.csv", "sub.csv")),
        ),
        cell("Done", "", None),
    ];
    let cells: Vec<&str> = cells.iter().map(String::as_str).collect();
    let reply = report_reply("Haar DWT", ["2", "10", "6", "9", "8"]);
    let gw = gateway(vec![
        entry(Role::Coder, "/agent0/coder", &cells),
        entry(Role::Coder, "/agent0/report", &[&reply]),
    ]);
    let run = run_agent(&s, &gw, 30);
    assert_eq!(run.steps, 3);
    assert_eq!(run.stop, StopReason::Finished);
    assert!(run.record.is_graded(), "{:?}", run.cells);
    assert!(run.cells[2].validation.as_ref().unwrap().success);
    assert!(s.root.join("agent/best_submission.csv").is_file());

    let mut notes = Notes::default();
    let report = compile_report(&run, &draft("d0"), &gw, "t001/agent0", &mut notes).unwrap();
    assert!(!report.mechanical);
    let haar = report.components.iter().find(|c| c.name == "Haar DWT").unwrap();
    assert_eq!(haar.feasibility, 10.0);
}

#[test]
fn step_limit_stops_before_the_next_cell() {
    let s = split_toy();
    let busy = cell("Keep poking", "print still going", None);
    let gw = gateway(vec![entry(Role::Coder, "/agent0/coder", &[&busy])]);
    let run = run_agent(&s, &gw, 3);
    assert_eq!(run.steps, 3);
    assert_eq!(run.stop, StopReason::StepLimit);
    let coder_calls = gw.records().iter().filter(|r| r.channel.ends_with("/coder")).count();
    assert_eq!(coder_calls, 3);
}

#[test]
fn no_clean_cell_gets_a_mechanical_report() {
    let s = split_toy();
    let bad = cell("Load a missing file", "fail no such file", None);
    let gw = gateway(vec![entry(Role::Coder, "/agent0/coder", &[&bad, &cell("Give up", "", None)])]);
    let run = run_agent(&s, &gw, 5);
    assert_eq!(run.steps, 1);
    assert!(!run.any_ok_cell());
    let mut notes = Notes::default();
    let report = compile_report(&run, &draft("d0"), &gw, "t001/agent0", &mut notes).unwrap();
    assert!(report.mechanical);
    assert!(report.components.is_empty());
    assert_eq!(report.pipeline, "Load a missing file");
    assert!(!gw.records().iter().any(|r| r.channel.ends_with("/report")));
}

fn script_reply(file: &str, code: &str) -> String {
    format!("```current_file\n{file}\n```\n```explanation\nfixture step\n```\n```python\n{code}\n```\n")
}

const SPLIT_OK: &str = "split ${input_dir} . id target";
const EVAL_OK: &str = "evaluate ${private_dir}/validate.csv ${pred} rmse id target ${private_dir}/eval_report.json";

fn evaluator_session(s: &Split) -> Session {
    let mounts = vec![
        Mount { source: s.bundle.data_dir(), at: String::new() },
        Mount { source: s.bundle.sample_submission(), at: String::new() },
    ];
    session(&s.root.join("evaluator"), mounts, 30)
}

fn run_evaluator(s: &Split, replies: &[String], max_rounds: u32) -> (Result<agora_core::roles::EvalScripts, agora_core::roles::ScriptFailure>, Gateway) {
    let replies: Vec<&str> = replies.iter().map(String::as_str).collect();
    let gw = gateway(vec![entry(Role::Evaluator, "t000/evaluator", &replies)]);
    let mut sess = evaluator_session(s);
    let grader = s.bundle.grader();
    let setup = EvaluatorSetup {
        task_description: "predict target",
        data_preview: "train.csv, test.csv",
        input_dir: "../input",
        grader: &grader,
        gateway: &gw,
        channel: "t000/evaluator".into(),
        max_rounds,
        poll_interval: POLL,
    };
    let mut notes = Notes::default();
    let out = synthesize_eval_scripts(&mut sess, &setup, &mut notes).unwrap();
    sess.close();
    (out, gw)
}

#[test]
fn evaluator_correct_first_try() {
    let s = split_toy();
    let (out, gw) = run_evaluator(&s, &[script_reply("split_dataset.py", SPLIT_OK), script_reply("evaluate.py", EVAL_OK)], 5);
    let scripts = out.unwrap();
    assert_eq!(scripts.rounds, 1);
    assert_eq!(gw.records().len(), 2);
    assert!(scripts.probe_score.unwrap().is_finite());
    assert!(audit_tree(scripts.public_dir.parent().unwrap(), "id").is_empty());
}

#[test]
fn evaluator_fixes_a_buggy_split() {
    let s = split_toy();
    let replies = [
        script_reply("split_dataset.py", "split ${input_dir} . id no_such_column"),
        script_reply("split_dataset.py", SPLIT_OK),
        script_reply("evaluate.py", EVAL_OK),
    ];
    let (out, _) = run_evaluator(&s, &replies, 5);
    assert_eq!(out.unwrap().rounds, 2);
}

#[test]
fn evaluator_rejects_a_leaky_split() {
    let s = split_toy();
    let replies = [
        script_reply("split_dataset.py", "split ${input_dir} . id target --leak"),
        script_reply("split_dataset.py", SPLIT_OK),
        script_reply("evaluate.py", EVAL_OK),
    ];
    let (out, gw) = run_evaluator(&s, &replies, 5);
    assert_eq!(out.unwrap().rounds, 2);
    // the second prompt carries the leak verdict
    assert!(gw.records()[1].prompt_sha256 != gw.records()[0].prompt_sha256);

    let (failed, _) = run_evaluator(&s, &[script_reply("split_dataset.py", "split ${input_dir} . id target --leak")], 2);
    let f = failed.unwrap_err();
    assert_eq!(f.rounds, 2);
    assert!(f.last_verdict.contains("leak"), "{}", f.last_verdict);
}

#[test]
fn evaluator_catches_a_wrong_score() {
    let s = split_toy();
    let wrong = "evaluate ${private_dir}/validate.csv ${pred} mae id target ${private_dir}/eval_report.json";
    let replies = [
        script_reply("split_dataset.py", SPLIT_OK),
        script_reply("evaluate.py", wrong),
        script_reply("evaluate.py", EVAL_OK),
    ];
    let (out, _) = run_evaluator(&s, &replies, 5);
    assert_eq!(out.unwrap().rounds, 2);
}

fn read_iteration(dir: &Path, t: u32) -> IterationState {
    IterationState::read(&dir.join(format!("iterations/{t:03}.json"))).unwrap()
}

#[test]
fn snapshot_chain_is_append_only() {
    use agora_core::fixtures::toy_script;
    use agora_core::run::{execute_run, BackendConfig, RunConfig};

    let tmp = tempfile::tempdir().unwrap();
    toy_regression(&tmp.path().join("bundle"), 100, 11);
    let script = tmp.path().join("script.json");
    fs::write(&script, serde_json::to_string(&toy_script(3, 2)).unwrap()).unwrap();
    let mut cfg = RunConfig::new(tmp.path().join("bundle"), BackendConfig::Scripted { script });
    cfg.guest = fake_guest();
    cfg.n_parallel = 2;
    cfg.max_iterations = Some(3);
    cfg.poll_interval = POLL;
    let out = tmp.path().join("run");
    let outcome = execute_run(&cfg, &out).unwrap();
    assert_eq!(outcome.iterations_completed, 3);

    let first = read_iteration(&out, 1);
    assert_eq!(first.publishes.len(), 2);

    let root = out.join("community");
    let mut prev = CommunityLog::replay_to(&root, 0).unwrap();
    for t in 1..=3 {
        let it = read_iteration(&out, t);
        let snap = CommunityLog::replay_to(&root, it.snapshot_version).unwrap();
        assert!(prev.is_prefix_of(&snap), "iteration {t}");
        prev = snap;
    }
    let last = CommunityLog::replay_latest(&root).unwrap();
    assert!(prev.is_prefix_of(&last));
    assert_eq!(last.version, prev.version + read_iteration(&out, 3).publishes.len() as u64);
}

#[test]
fn edited_log_entry_is_reported_at_its_index() {
    use agora_core::fixtures::toy_script;
    use agora_core::run::{execute_run, replay_run, BackendConfig, RunConfig};

    let tmp = tempfile::tempdir().unwrap();
    toy_regression(&tmp.path().join("bundle"), 60, 5);
    let script = tmp.path().join("script.json");
    fs::write(&script, serde_json::to_string(&toy_script(1, 2)).unwrap()).unwrap();
    let mut cfg = RunConfig::new(tmp.path().join("bundle"), BackendConfig::Scripted { script });
    cfg.guest = fake_guest();
    cfg.max_iterations = Some(1);
    cfg.poll_interval = POLL;
    let out = tmp.path().join("run");
    execute_run(&cfg, &out).unwrap();

    let log = out.join("llm_log.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let target = 3;
    lines[target]["response"] = serde_json::Value::String("edited by hand".into());
    let edited: String = lines.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&log, edited).unwrap();

    let report = replay_run(&out, &tmp.path().join("replay")).unwrap();
    assert!(!report.identical);
    assert_eq!(report.divergence.unwrap().index, target);
}
