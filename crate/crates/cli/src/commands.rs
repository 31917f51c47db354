use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;
use ramia_core::dataset::{load_candidate_manifest, load_dataset_manifest, Dataset};
use ramia_core::eval::{self, EvalReport};
use ramia_core::files::{self, AttackSets};
use ramia_core::game_sim::{self, RangeSetup, SimConfig, SimSampling, SimWorld};
use ramia_core::model::{RangeFn, RangeLabel, RangeQuery, RecordId, Schema, Split, TrimConfig};
use ramia_core::pipeline::{self, Calibration, TrimPolicy};
use ramia_core::range_engine::SweepOutcome;
use ramia_core::samplers::{self, CandidatePools, FillProvider, PositionalFill, SamplerKind, SamplerSpec, SamplingContext, VocabularyFill};
use ramia_core::signals::{load_signals, write_signals, SignalMatrix, SignalSidecar};
use ramia_core::{Error, Result};
use serde::Serialize;

use crate::config::Config;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Build a synthetic world and write manifest, signals, ranges and attack sets.
    Simulate,
    /// Sample attack sets for the configured ranges.
    Sample,
    /// Point attack on range centers; simulator runs also measure degradation.
    Mia,
    /// Range attack: score attack sets and aggregate with the trimmed mean.
    Ramia,
    /// Calibrate the trim window on reference models.
    Sweep,
    /// ROC, AUC, TPR at fixed FPR and percentile correlation.
    Eval,
    /// Re-run sampling and both attacks under several sampler seeds.
    Repeat,
}

const SIM_OUTPUTS: &[&str] = &[
    "signals.csv",
    "signals.json",
    "ranges.json",
    "attack_sets.json",
    "labels.csv",
    "population.txt",
    "manifest.json",
];

pub struct Run {
    pub cfg: Config,
    pub dir: PathBuf,
    pub force: bool,
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn write_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io(path, e))
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&self, configured: &Option<PathBuf>, name: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.path(name))
    }

    fn done(&self, outputs: &[&str]) -> bool {
        let present = outputs.iter().all(|o| self.path(o).exists());
        if present && !self.force {
            info!("outputs {outputs:?} already present in {}", self.dir.display());
        }
        present && !self.force
    }

    fn simulator(&self) -> Option<&SimConfig> {
        self.cfg.simulator.as_ref()
    }

    fn sim_sampling(&self) -> SimSampling {
        SimSampling {
            n_samples: self.cfg.sampler.n_samples,
            include_mode_imputed: self.cfg.sampler.include_mode_imputed,
            member_density: self.cfg.sampler.member_density,
            seed: self.cfg.sampler_seed(),
        }
    }

    fn calibrates(&self, sim: &SimConfig) -> bool {
        matches!(self.cfg.trim, TrimPolicy::Sweep { .. }) && matches!(sim.ranges, RangeSetup::MaskedColumns { .. })
    }

    fn signals(&self) -> Result<SignalMatrix> {
        let data = &self.cfg.data;
        let (matrix, _) = load_signals(
            &self.input(&data.signals, "signals.csv"),
            &self.input(&data.sidecar, "signals.json"),
        )?;
        Ok(matrix)
    }

    fn ranges(&self) -> Result<Vec<RangeQuery>> {
        files::load_ranges(&self.input(&self.cfg.data.ranges, "ranges.json"))
    }

    fn population(&self) -> Result<Vec<RecordId>> {
        files::load_id_list(&self.input(&self.cfg.data.population, "population.txt"))
    }

    fn manifest(&self) -> Result<Option<Dataset>> {
        let path = self.input(&self.cfg.data.manifest, "manifest.json");
        if path.exists() { load_dataset_manifest(&path).map(Some) } else { Ok(None) }
    }

    fn pools(&self) -> Result<Option<CandidatePools>> {
        let path = self.input(&self.cfg.data.pools, "pools.json");
        if path.exists() { CandidatePools::load(&path).map(Some) } else { Ok(None) }
    }

    fn members(&self) -> Result<BTreeSet<RecordId>> {
        Ok(self.manifest()?.map(|m| m.member_ids().clone()).unwrap_or_default())
    }

    fn attack_sets(&self) -> Result<AttackSets> {
        files::read_json(&self.input(&self.cfg.data.attack_sets, "attack_sets.json"))
    }

    fn ensure_simulated(&self) -> Result<()> {
        if self.simulator().is_some() {
            simulate(self, false)?;
        }
        Ok(())
    }
}

pub fn execute(run: &Run, command: Command) -> Result<()> {
    match command {
        Command::Simulate => simulate(run, run.force),
        Command::Sample => sample(run),
        Command::Mia => mia(run),
        Command::Ramia => ramia(run),
        Command::Sweep => sweep(run).map(|_| ()),
        Command::Eval => evaluate(run),
        Command::Repeat => repeat(run),
    }
}

fn simulate(run: &Run, force: bool) -> Result<()> {
    let sim = run
        .simulator()
        .ok_or_else(|| Error::Config("simulate needs a \"simulator\" section".into()))?;
    if !force && SIM_OUTPUTS.iter().all(|o| run.path(o).exists()) {
        info!("simulation outputs already present in {}", run.dir.display());
        return Ok(());
    }
    let out = game_sim::simulate(sim, run.cfg.seed, &run.sim_sampling(), run.calibrates(sim))?;
    info!(
        "simulated {} ranges ({:.3} in-range), {} signal rows",
        out.game.ranges.len(),
        out.game.in_fraction(),
        out.signals.len()
    );
    write_signals(
        &out.signals,
        &SignalSidecar::prob(out.signals.n_refs()),
        &run.path("signals.csv"),
        &run.path("signals.json"),
    )?;
    files::save_ranges(&out.game.ranges, &run.path("ranges.json"))?;
    files::write_json(&out.attack_sets, &run.path("attack_sets.json"))?;
    files::write_labels(&out.game.labels, &run.path("labels.csv"))?;
    files::write_id_list(&out.world.population_ids, &run.path("population.txt"))?;
    samplers::write_column_means(&out.world.column_means, &run.path("column_means.csv"))?;
    out.world.population.save(&run.path("population.json"))?;
    let fresh: Vec<_> = out.game.centers.iter().chain(&out.candidates).cloned().collect();
    Dataset::new(Schema::Binary, fresh, [], Split::Unknown)?.save(&run.path("candidates.json"))?;
    if let Some(pools) = &out.world.pools {
        pools.save(&run.path("pools.json"))?;
    }
    if let Some(cal) = &out.calibration {
        files::save_ranges(&cal.ranges, &run.path("calibration_ranges.json"))?;
        files::write_json(&cal.attack_sets, &run.path("calibration_attack_sets.json"))?;
        files::write_json(&out.calibration_labels()?, &run.path("calibration_labels.json"))?;
        files::write_json(&cal.ref_members, &run.path("ref_members.json"))?;
    }
    out.world.records.save(&run.path("manifest.json"))
}

fn sample(run: &Run) -> Result<()> {
    if run.simulator().is_some() {
        return run.ensure_simulated();
    }
    if run.done(&["attack_sets.json", "candidates.json"]) {
        return Ok(());
    }
    let data = &run.cfg.data;
    let ranges = run.ranges()?;
    let manifest = run.manifest()?;
    let candidates = match &data.candidates {
        Some(p) => Some(load_candidate_manifest(p)?),
        None => None,
    };
    let records = match (&manifest, &candidates) {
        (Some(m), Some(c)) => Some(m.merged(c)?),
        (Some(m), None) => Some(m.clone()),
        (None, Some(c)) => Some(c.clone()),
        (None, None) => None,
    };
    let means_path = run.input(&data.column_means, "column_means.csv");
    let means = if means_path.exists() { Some(samplers::load_column_means(&means_path)?) } else { None };
    let fill: Option<Box<dyn FillProvider>> = match (&data.positional_fill, &data.vocabulary) {
        (Some(p), _) => Some(Box::new(PositionalFill::load(p)?)),
        (None, Some(v)) => Some(Box::new(VocabularyFill::load(v)?)),
        (None, None) => None,
    };
    let pools = run.pools()?;
    let ctx = SamplingContext {
        column_means: means.as_deref(),
        fill: fill.as_deref(),
        pools: pools.as_ref(),
        records: records.as_ref(),
        member_density: run.cfg.sampler.member_density,
    };
    let kind = match ranges.first().map(|r| r.range_fn) {
        Some(RangeFn::Hamming) => SamplerKind::HammingSubstitution,
        Some(RangeFn::CandidatePool) => SamplerKind::CandidatePool,
        _ => SamplerKind::BernoulliTabular,
    };
    let spec = SamplerSpec {
        kind,
        n_samples: run.cfg.sampler.n_samples,
        include_mode_imputed: run.cfg.sampler.include_mode_imputed,
        seed: run.cfg.sampler_seed(),
    };
    spec.validate()?;
    let id_base = run.cfg.sampler.id_base.unwrap_or_else(|| {
        let known = records.as_ref().and_then(Dataset::max_id);
        let centers = ranges.iter().map(|r| r.center.id).max();
        known.max(centers).map_or(0, |m| m + 1)
    });
    let (sets, fresh) = pipeline::sample_attack_sets(&ranges, &ctx, &spec, id_base)?;
    let schema = ranges.first().map_or(Schema::Binary, |r| r.center.payload.schema());
    files::write_json(&sets, &run.path("attack_sets.json"))?;
    Dataset::new(schema, fresh, [], Split::Unknown)?.save(&run.path("candidates.json"))
}

#[derive(Serialize)]
struct DegradationPoint {
    distance: usize,
    auc: f64,
    fpr_targets: Vec<f64>,
    tpr: Vec<f64>,
}

fn mia(run: &Run) -> Result<()> {
    run.ensure_simulated()?;
    let mut outputs = vec!["scores_mia.csv"];
    if run.simulator().is_some() {
        outputs.push("degradation.json");
    }
    if run.done(&outputs) {
        return Ok(());
    }
    let signals = run.signals()?;
    let ranges = run.ranges()?;
    let scorer = pipeline::build_scorer(&run.cfg.scorer, &signals, &run.population()?, &run.members()?)?;
    let scores = pipeline::score_centers(&ranges, &signals, scorer.as_ref())?;
    files::write_scores(&scores, &run.path("scores_mia.csv"))?;
    if let Some(sim) = run.simulator() {
        let world = SimWorld::build(sim, run.cfg.seed)?;
        let points = run
            .cfg
            .mia
            .distances
            .iter()
            .map(|&d| {
                let e = game_sim::point_attack(&world, d, &run.cfg.scorer, run.cfg.seed, &run.cfg.eval.fpr_targets)?;
                info!("point attack at distance {d}: AUC {:.4}", e.auc);
                Ok(DegradationPoint { distance: d, auc: e.auc, fpr_targets: e.fpr_targets, tpr: e.tpr })
            })
            .collect::<Result<Vec<_>>>()?;
        write_pretty(&points, &run.path("degradation.json"))?;
    }
    Ok(())
}

fn sweep(run: &Run) -> Result<SweepOutcome> {
    let TrimPolicy::Sweep { branch, step } = run.cfg.trim else {
        return Err(Error::Config("sweep needs trim.mode = \"sweep\"".into()));
    };
    run.ensure_simulated()?;
    let out = run.path("trim.json");
    if run.done(&["trim.json"]) {
        return files::read_json(&out);
    }
    let data = &run.cfg.data;
    let signals = run.signals()?;
    let labels: Vec<Vec<RangeLabel>> =
        files::read_json(&run.input(&data.calibration_labels, "calibration_labels.json"))?;
    let members_path = run.input(&data.ref_members, "ref_members.json");
    let ref_members: Vec<BTreeSet<RecordId>> = if members_path.exists() {
        files::read_json(&members_path)?
    } else {
        vec![BTreeSet::new(); signals.n_refs()]
    };
    let calibration = Calibration {
        ranges: files::load_ranges(&run.input(&data.calibration_ranges, "calibration_ranges.json"))?,
        attack_sets: files::read_json(&run.input(&data.calibration_attack_sets, "calibration_attack_sets.json"))?,
        ref_members,
    };
    let outcome = pipeline::sweep(
        &signals,
        &calibration,
        &labels,
        &run.cfg.scorer,
        &run.population()?,
        branch,
        step,
        run.cfg.seed,
    )?;
    info!(
        "chose q_s={} q_e={} with reference {} as target",
        outcome.chosen.q_s, outcome.chosen.q_e, outcome.temporary_target
    );
    files::write_json(&outcome, &out)?;
    Ok(outcome)
}

fn chosen_trim(run: &Run) -> Result<TrimConfig> {
    match run.cfg.trim.fixed() {
        Some(trim) => Ok(trim),
        None => Ok(sweep(run)?.chosen),
    }
}

fn ramia(run: &Run) -> Result<()> {
    run.ensure_simulated()?;
    let trim = chosen_trim(run)?;
    if run.done(&["scores_ramia.csv"]) {
        return Ok(());
    }
    let signals = run.signals()?;
    let ranges = run.ranges()?;
    let sets = run.attack_sets()?;
    let scorer = pipeline::build_scorer(&run.cfg.scorer, &signals, &run.population()?, &run.members()?)?;
    let jobs = pipeline::score_ranges(&ranges, &sets, &signals, scorer.as_ref(), &trim)?;
    files::write_scores(&pipeline::job_scores(&jobs), &run.path("scores_ramia.csv"))
}

fn labels(run: &Run) -> Result<Vec<RangeLabel>> {
    let path = run.input(&run.cfg.data.labels, "labels.csv");
    if path.exists() {
        return files::load_labels(&path);
    }
    let manifest = run
        .manifest()?
        .ok_or_else(|| Error::Config("eval needs labels.csv or a manifest with members".into()))?;
    let members: Vec<_> = manifest.members().collect();
    let labels = pipeline::label_ranges(&run.ranges()?, &members, run.pools()?.as_ref())?;
    files::write_labels(&labels, &run.path("labels.csv"))?;
    Ok(labels)
}

fn evaluate(run: &Run) -> Result<()> {
    run.ensure_simulated()?;
    if run.done(&["summary.json", "roc.csv"]) {
        return Ok(());
    }
    mia(run)?;
    ramia(run)?;
    let labels = labels(run)?;
    let targets = &run.cfg.eval.fpr_targets;
    let mia_scores = files::load_scores(&run.path("scores_mia.csv"))?;
    let ramia_scores = files::load_scores(&run.path("scores_ramia.csv"))?;
    let (point_in, point_out) = eval::split_by_label(&pipeline::score_map(&mia_scores), &labels)?;
    let (range_in, range_out) = eval::split_by_label(&pipeline::score_map(&ramia_scores), &labels)?;
    let report = EvalReport {
        ramia: Some(eval::evaluate(&ramia_scores, &labels, targets)?),
        mia: Some(eval::evaluate(&mia_scores, &labels, targets)?),
        trim: Some(chosen_trim(run)?),
        seed: run.cfg.seed,
        percentile_correlation: eval::percentile_correlation(&point_in, &range_in, &point_out, &range_out).ok(),
    };
    info!(
        "RaMIA AUC {:.4}, MIA AUC {:.4}",
        report.ramia.as_ref().map_or(f64::NAN, |e| e.auc),
        report.mia.as_ref().map_or(f64::NAN, |e| e.auc)
    );
    eval::emit_report(&report, &run.dir)
}

#[derive(Serialize)]
struct RepeatSummary {
    seeds: Vec<u64>,
    ramia_auc: Vec<f64>,
    mia_auc: Vec<f64>,
    delta_auc: Vec<f64>,
    mean_delta_auc: f64,
    sd_delta_auc: f64,
}

fn repeat(run: &Run) -> Result<()> {
    let sim = run
        .simulator()
        .ok_or_else(|| Error::Config("repeat works on simulator runs only".into()))?;
    if run.cfg.repeat.seeds.is_empty() {
        return Err(Error::Config("repeat.seeds is empty".into()));
    }
    if run.done(&["repeat.json"]) {
        return Ok(());
    }
    let world = SimWorld::build(sim, run.cfg.seed)?;
    let mut summary = RepeatSummary {
        seeds: run.cfg.repeat.seeds.clone(),
        ramia_auc: Vec::new(),
        mia_auc: Vec::new(),
        delta_auc: Vec::new(),
        mean_delta_auc: 0.0,
        sd_delta_auc: 0.0,
    };
    for &seed in &run.cfg.repeat.seeds {
        let sampling = SimSampling { seed, ..run.sim_sampling() };
        let out = game_sim::simulate_in(world.clone(), &sampling, run.calibrates(sim))?;
        let attack = game_sim::attack_run(&out, &run.cfg.scorer, &run.cfg.trim, &run.cfg.eval.fpr_targets)?;
        let report = attack.report;
        let (r, m) = (report.ramia.as_ref(), report.mia.as_ref());
        summary.ramia_auc.push(r.map_or(f64::NAN, |e| e.auc));
        summary.mia_auc.push(m.map_or(f64::NAN, |e| e.auc));
        summary.delta_auc.push(report.delta_auc().unwrap_or(f64::NAN));
    }
    (summary.mean_delta_auc, summary.sd_delta_auc) = pipeline::mean_sd(&summary.delta_auc);
    info!("delta AUC {:.4} ± {:.4}", summary.mean_delta_auc, summary.sd_delta_auc);
    write_pretty(&summary, &run.path("repeat.json"))
}
