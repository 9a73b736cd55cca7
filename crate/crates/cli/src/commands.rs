//! `train`, `ablate` and `inspect-attention`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use attnmix_core::agent::{greedy_action, Heads};
use attnmix_core::env::FocusFire;
use attnmix_core::mixer::MixerKind;
use attnmix_core::trainer::{snapshot, stream_rng, streams, train, Ablation, Actor, MetricsRow, RunOutcome, TrainConfig};

use crate::checkpoint::Checkpoint;
use crate::config::{self, mixer_name, RunConfig};
use crate::output::{self, fmt_g9, MetricsWriter, SeedResult, TimingWriter, METRICS_HEADER};

/// Trains one seed into `dir`: `config.json`, `metrics.csv`, `timing.csv`
/// and `checkpoint.json`.
pub fn run_seed(run: &RunConfig, seed: u64, dir: &Path, quiet: bool) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let resolved = RunConfig { seeds: vec![seed], out_dir: dir.to_path_buf(), ..run.clone() };
    output::write_json(&dir.join("config.json"), &config::to_json(&resolved))?;
    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let mut timing = TimingWriter::create(&dir.join("timing.csv"))?;

    let start = Instant::now();
    let label = format!("{} seed {seed}", run.train.describe());
    let mut write_error = None;
    let outcome = train(&run.train, seed, &mut |row: &MetricsRow| {
        let wall_ms = start.elapsed().as_millis();
        if write_error.is_none() {
            if let Err(e) = metrics.write(row).and_then(|_| timing.write(row, wall_ms)) {
                write_error = Some(e);
            }
        }
        if !quiet {
            eprintln!(
                "[{label}] episode {:>6}  steps {:>7}  win {:.3}  return {:>7.3}  td {:>9}  sparse {:>6}/{:<6}  {:.0}s",
                row.episode,
                row.env_steps,
                row.test_win_rate,
                row.test_return_mean,
                fmt_g9(row.loss_td),
                fmt_g9(row.mean_sparse_support),
                fmt_g9(row.mean_dense_support),
                wall_ms as f64 / 1000.0,
            );
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let checkpoint = Checkpoint {
        run: resolved,
        seed,
        episodes: outcome.episodes,
        env_steps: outcome.env_steps,
        network: outcome.network.clone(),
    };
    checkpoint.save(&dir.join("checkpoint.json"))?;
    Ok(outcome)
}

/// Runs every seed of `run` in sequence under `run.out_dir/<seed>/` and
/// writes `summary.json` with the spread of final and best win rates.
pub fn cmd_train(run: &RunConfig, quiet: bool) -> Result<Vec<SeedResult>> {
    let out = &run.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output::write_json(&out.join("config.json"), &config::to_json(run))?;
    let mut results = Vec::new();
    for &seed in &run.seeds {
        let outcome = run_seed(run, seed, &out.join(seed.to_string()), quiet)?;
        results.push(SeedResult::from_rows(seed, &outcome.rows));
    }
    output::write_json(&out.join("summary.json"), &output::summary_json(&results))?;
    Ok(results)
}

/// The six ablation conditions, in output order.
pub fn ablation_grid() -> Vec<(MixerKind, Ablation)> {
    let mut grid = Vec::new();
    for mixer in [MixerKind::Additive, MixerKind::Monotonic] {
        for ablation in [Ablation::DenseOnly, Ablation::S2rl, Ablation::SparseOnly] {
            grid.push((mixer, ablation));
        }
    }
    grid
}

/// Column order of `ablation.csv`: the condition, then the final metrics row.
pub fn ablation_header() -> Vec<&'static str> {
    let mut h = vec!["mixer", "ablation", "seed"];
    h.extend(METRICS_HEADER);
    h
}

/// Runs {vdn, qmix} × {dense_only, s2rl, sparse_only} over the configured
/// seeds. Each run lands in `out_dir/<mixer>_<ablation>/<seed>/`; the final
/// evaluation row of every run goes to `out_dir/ablation.csv`.
pub fn cmd_ablate(run: &RunConfig, quiet: bool) -> Result<PathBuf> {
    let out = &run.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output::write_json(&out.join("config.json"), &config::to_json(run))?;
    let path = out.join("ablation.csv");
    let mut csv = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    csv.write_record(ablation_header())?;
    for (mixer, ablation) in ablation_grid() {
        let mut train = TrainConfig { mixer, ablation, ..run.train.clone() };
        if ablation == Ablation::DenseOnly {
            train.lambda = 0.0;
        }
        let condition = RunConfig { train, ..run.clone() };
        let group = format!("{}_{}", mixer_name(mixer), ablation.name());
        for &seed in &run.seeds {
            let outcome = run_seed(&condition, seed, &out.join(&group).join(seed.to_string()), quiet)?;
            let last = outcome.rows.last().context("training produced no evaluation row")?;
            let mut record = vec![mixer_name(mixer).to_string(), ablation.name().to_string(), seed.to_string()];
            record.extend(output::metrics_record(last));
            csv.write_record(&record)?;
            csv.flush()?;
        }
    }
    Ok(path)
}

/// Column order of `attention.csv`.
pub const ATTENTION_HEADER: [&str; 9] =
    ["t", "agent", "entity", "dense_weight", "sparse_weight", "entity_team", "entity_distance", "visible", "episode"];

/// Rolls greedy episodes from a checkpoint for `steps` environment steps and
/// dumps both heads' attention weights to `out/attention.csv`.
///
/// Each `(t, agent)` group is the agent's own query row: how much weight the
/// agent's self-entity places on every entity it could attend to. Entity 0
/// is the agent itself (team `self`); invisible entities have `visible = 0`.
pub fn cmd_inspect_attention(checkpoint: &Path, seed: u64, steps: usize, out: &Path) -> Result<PathBuf> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let train = &ckpt.run.train;
    let mut env = FocusFire::new(train.env.clone())?;
    let n = train.env.n_allies;
    let m = train.env.n_units();
    let u = train.env.n_actions();
    let mut actor = Actor::new(&ckpt.network.agent, n, Heads::Both, train.ablation.acting_head());
    let mut rng = stream_rng(seed, streams::EVAL);

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("attention.csv");
    let mut csv = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    csv.write_record(ATTENTION_HEADER)?;
    let mut episode = 0usize;
    env.reset(&mut rng);
    actor.reset();
    let mut actions = vec![0; n];
    for t in 0..steps {
        if env.is_terminal() {
            env.reset(&mut rng);
            actor.reset();
            episode += 1;
        }
        let snap = snapshot(&env);
        let outp = actor.forward(&snap.obs, &snap.keep)?;
        let dense = outp.dense_weights.as_ref().context("dense head not evaluated")?;
        let sparse = outp.sparse_weights.as_ref().context("sparse head not evaluated")?;
        let units = &env.state().units;
        for i in 0..n {
            let order = env.entity_order(i);
            for (j, &unit) in order.iter().enumerate() {
                let at = (i * m) * m + j;
                let team = if j == 0 { "self" } else { units[unit].team.name() };
                let visible = snap.keep[i * m + j];
                csv.write_record([
                    t.to_string(),
                    i.to_string(),
                    j.to_string(),
                    fmt_g9(dense[at]),
                    fmt_g9(sparse[at]),
                    team.to_string(),
                    fmt_g9(units[i].distance(&units[unit])),
                    u8::from(visible).to_string(),
                    episode.to_string(),
                ])?;
            }
            actions[i] = greedy_action(&outp.q[i * u..(i + 1) * u], &snap.avail[i * u..(i + 1) * u])?;
        }
        env.step(&actions)?;
    }
    csv.flush()?;
    Ok(path)
}
