use std::collections::HashSet;
use std::path::Path;

use mobitok::decoder::BOUNDARY;
use mobitok::ingest::Trajectory;
use mobitok::io::read_jsonl;
use mobitok::pipeline::{write_synthetic_city, EvalSummary, Pipeline, PipelineConfig, TokensFile};
use mobitok::sft::{SftExample, Task};
use mobitok::synth::CityConfig;

fn run(dir: &Path) -> Pipeline {
    let cfg_path = write_synthetic_city(dir, &CityConfig::default()).unwrap();
    let cfg = PipelineConfig::load(&cfg_path, &[]).unwrap();
    let p = Pipeline::new(cfg).unwrap();
    p.run_all().unwrap();
    p
}

#[test]
fn synthetic_city_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = run(dir.path());
    let layout = p.layout();

    let summary: EvalSummary = mobitok::io::read_json(&layout.report()).unwrap();
    let next = &summary.reports[0];
    assert_eq!(next.task, "next_location");
    let hit10 = next.metric("Hit@10").unwrap();
    println!("next-location: {:?}", next.metrics);
    assert!(hit10 > 0.05, "Hit@10 {hit10}");
    assert_eq!(summary.reports.len(), 1 + p.config.eval.ratios.len());

    let tokens: TokensFile = mobitok::io::read_json(&layout.tokens()).unwrap();
    assert_eq!(tokens.tokens.len(), 200);
    assert!(!tokens.tokens.vocabulary().contains(&BOUNDARY.to_string()));

    let test: Vec<Trajectory> = read_jsonl(&layout.split("test")).unwrap();
    let test_keys: HashSet<_> = test.iter().map(Trajectory::key).collect();
    let examples: Vec<SftExample> = read_jsonl(&layout.sft_dataset()).unwrap();
    for e in examples
        .iter()
        .filter(|e| matches!(e.task, Task::NextPrediction | Task::Recovery))
    {
        let key = (
            e.meta.user_id.clone().unwrap(),
            e.meta.trajectory_start.unwrap(),
            e.meta.trajectory_end.unwrap(),
        );
        assert!(!test_keys.contains(&key));
    }
}
