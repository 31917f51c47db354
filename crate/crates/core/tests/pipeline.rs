use std::collections::BTreeSet;

use ramia_core::dataset::{load_candidate_manifest, load_dataset_manifest, Dataset};
use ramia_core::eval;
use ramia_core::files;
use ramia_core::game_sim::{self, RangeSetup, SimConfig, SimSampling, SimWorld};
use ramia_core::model::{DataRecord, Payload, RangeQuery, Schema, Split, TrimConfig};
use ramia_core::pipeline::{self, ScorerConfig, ScorerKind};
use ramia_core::range_engine::{in_range, label_range};
use ramia_core::samplers::{self, SamplerKind, SamplerSpec, SamplingContext, VocabularyFill};
use ramia_core::signals::{load_signals, write_signals, SignalSidecar};

#[test]
fn simulated_manifest_round_trips_through_ingestion() {
    let cfg = SimConfig { n_records: 100, n_features: 12, z_size: 20, n_games: 10, ..SimConfig::default() };
    let world = SimWorld::build(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    world.records.save(&path).unwrap();
    let loaded = load_dataset_manifest(&path).unwrap();
    assert_eq!(loaded, world.records);
    assert_eq!(loaded.members().count(), 50);
    assert!(loaded.records().iter().all(|r| r.split == Split::Member || r.split == Split::Nonmember));

    let candidates = load_candidate_manifest(&path).unwrap();
    assert!(candidates.records().iter().any(|r| r.split == Split::Unknown));
}

/// Signals as an extractor would emit them for a three-class model with
/// uniform outputs: every probability is 1/3.
#[test]
fn uniform_extractor_signals_give_chance_auc() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("id,target,ref_0,ref_1,ref_2\n");
    for id in 0..6 {
        csv.push_str(&format!("{id},{0},{0},{0},{0}\n", 1.0 / 3.0));
    }
    std::fs::write(dir.path().join("signals.csv"), csv).unwrap();
    std::fs::write(
        dir.path().join("signals.json"),
        r#"{"n_refs": 3, "signal_kind": "prob", "model_outputs": "softmax", "deterministic": true}"#,
    )
    .unwrap();
    let (signals, sidecar) = load_signals(&dir.path().join("signals.csv"), &dir.path().join("signals.json")).unwrap();
    assert_eq!(sidecar.n_refs, 3);
    assert!(sidecar.extra.contains_key("model_outputs"));
    for id in 0..6 {
        assert_eq!(signals.target(id).unwrap(), 1.0 / 3.0);
    }

    let bits = |i: u64| (0..3).map(|b| ((i >> b) & 1) as u8).collect();
    let records: Vec<DataRecord> = (0..6).map(|i| DataRecord::new(i, Payload::Binary(bits(i)))).collect();
    let dataset = Dataset::new(Schema::Binary, records.clone(), [0, 1, 2], Split::Nonmember).unwrap();
    let ranges: Vec<RangeQuery> =
        records.iter().map(|r| RangeQuery::masked_columns(r.id, r.clone(), vec![]).unwrap()).collect();
    let members: Vec<&DataRecord> = dataset.members().collect();
    let labels = pipeline::label_ranges(&ranges, &members, None).unwrap();
    let sets = ranges.iter().map(|r| (r.id, vec![r.center.id])).collect();
    for kind in [ScorerKind::Loss, ScorerKind::Rmia] {
        let scorer = pipeline::build_scorer(
            &ScorerConfig { kind, ..Default::default() },
            &signals,
            &[3, 4, 5],
            dataset.member_ids(),
        )
        .unwrap();
        let jobs = pipeline::score_ranges(&ranges, &sets, &signals, scorer.as_ref(), &TrimConfig::none()).unwrap();
        let result = eval::evaluate(&pipeline::job_scores(&jobs), &labels, &[0.01]).unwrap();
        assert_eq!(result.auc, 0.5);
    }
}

#[test]
fn written_signals_reload_identically() {
    let g = game_sim::generate_dataset(30, 8, 1).unwrap();
    let model = SimConfig::default().model(1);
    let signals = game_sim::synthesize_signals(&g.dataset, &model, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, side) = (dir.path().join("s.csv"), dir.path().join("s.json"));
    write_signals(&signals, &SignalSidecar::prob(2), &csv, &side).unwrap();
    let (loaded, _) = load_signals(&csv, &side).unwrap();
    assert_eq!(loaded, signals);
}

#[test]
fn hamming_text_ranges_end_to_end() {
    let sentence = |id, text: &str| DataRecord::new(id, Payload::from_text(text));
    let dataset = Dataset::new(
        Schema::Tokens,
        vec![sentence(0, "the cat sat on the mat"), sentence(1, "a dog ran in the park")],
        [0],
        Split::Nonmember,
    )
    .unwrap();
    let ranges = vec![
        RangeQuery::hamming(0, sentence(10, "the cat sat on a mat"), 1).unwrap(),
        RangeQuery::hamming(1, sentence(11, "one dog ran in the yard"), 1).unwrap(),
    ];
    let members: Vec<&DataRecord> = dataset.members().collect();
    let labels = pipeline::label_ranges(&ranges, &members, None).unwrap();
    assert_eq!(labels.iter().map(|l| l.bit).collect::<Vec<_>>(), vec![1, 0]);

    let vocab = VocabularyFill::new(["a", "the", "cat", "dog", "mat"].map(String::from).to_vec()).unwrap();
    let ctx = SamplingContext { fill: Some(&vocab), ..Default::default() };
    let spec = SamplerSpec { kind: SamplerKind::HammingSubstitution, n_samples: 12, include_mode_imputed: false, seed: 3 };
    let (sets, fresh) = pipeline::sample_attack_sets(&ranges, &ctx, &spec, 100).unwrap();
    assert_eq!(fresh.len(), 24);
    assert_eq!(sets[&1], (112..124).collect::<Vec<_>>());
    for (range, chunk) in ranges.iter().zip(fresh.chunks(12)) {
        for candidate in chunk {
            assert!(in_range(range, candidate, None).unwrap());
        }
    }
    let candidates = Dataset::new(Schema::Tokens, fresh, [], Split::Unknown).unwrap();
    let dir = tempfile::tempdir().unwrap();
    candidates.save(&dir.path().join("candidates.json")).unwrap();
    assert_eq!(load_candidate_manifest(&dir.path().join("candidates.json")).unwrap(), candidates);
}

#[test]
fn exhaustive_out_range_check_for_small_masks() {
    let cfg = SimConfig {
        n_records: 200,
        n_features: 16,
        population_size: Some(200),
        z_size: 50,
        n_games: 60,
        ranges: RangeSetup::MaskedColumns { k: 6 },
        ..SimConfig::default()
    };
    let world = SimWorld::build(&cfg, 9).unwrap();
    let game = game_sim::play_range_game(&world, cfg.n_games, 2, None).unwrap();
    let members: BTreeSet<&[u8]> = world.records.members().map(|r| r.payload.as_bits().unwrap()).collect();
    let mut out_ranges = 0;
    for (range, label) in game.ranges.iter().zip(&game.labels) {
        let mask = range.mask();
        assert!(1usize << mask.len() <= 4096);
        let mut hits = 0;
        for fill in 0..1u32 << mask.len() {
            let mut bits = range.center.payload.as_bits().unwrap().to_vec();
            for (k, &j) in mask.iter().enumerate() {
                bits[j] = ((fill >> k) & 1) as u8;
            }
            if members.contains(bits.as_slice()) {
                hits += 1;
            }
        }
        assert_eq!(hits > 0, label.is_in(), "range {}", range.id);
        if !label.is_in() {
            out_ranges += 1;
        }
    }
    assert!(out_ranges > 0);
}

#[test]
fn coin_is_fair() {
    let cfg = SimConfig {
        n_records: 200,
        n_features: 16,
        population_size: Some(200),
        z_size: 50,
        ranges: RangeSetup::MaskedColumns { k: 2 },
        ..SimConfig::default()
    };
    let world = SimWorld::build(&cfg, 1).unwrap();
    let n = 10_000;
    let game = game_sim::play_range_game(&world, n, 5, None).unwrap();
    let sd = (0.25 / n as f64).sqrt();
    assert!((game.in_fraction() - 0.5).abs() <= 3.0 * sd, "{}", game.in_fraction());
}

#[test]
fn pool_run_labels_follow_identity() {
    let cfg = SimConfig {
        n_features: 16,
        population_size: Some(200),
        z_size: 50,
        n_games: 30,
        ranges: RangeSetup::IdentityPool { group_size: 6, jitter: 1 },
        ..SimConfig::default()
    };
    let sampling = SimSampling { n_samples: 4, include_mode_imputed: false, member_density: Some(0.5), seed: 2 };
    let run = game_sim::simulate(&cfg, 3, &sampling, false).unwrap();
    let pools = run.world.pools.as_ref().unwrap();
    for (range, label) in run.game.ranges.iter().zip(run.labels()) {
        let set = &run.attack_sets[&range.id];
        let in_set = set.iter().filter(|id| run.world.records.get(**id).unwrap().is_member()).count();
        if label.is_in() {
            assert_eq!(in_set, 2);
        } else {
            assert_eq!(in_set, 0);
        }
        let members: Vec<&DataRecord> = run.world.records.members().collect();
        assert_eq!(label_range(range, members, Some(pools)).unwrap(), *label);
    }

    let dir = tempfile::tempdir().unwrap();
    pools.save(&dir.path().join("pools.json")).unwrap();
    assert_eq!(&samplers::CandidatePools::load(&dir.path().join("pools.json")).unwrap(), pools);
    files::write_labels(run.labels(), &dir.path().join("labels.csv")).unwrap();
    assert_eq!(files::load_labels(&dir.path().join("labels.csv")).unwrap(), run.labels());
}
