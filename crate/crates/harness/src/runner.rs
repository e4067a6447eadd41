//! Runs one configuration over its seeds: reinitialize at each chunk
//! start, train, evaluate, log, checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fire_core::baselines::{reinitialize, RegularizerKind, ReinitMethod};
use fire_core::derive_seed;
use fire_core::metrics::{plasticity_report, sfe_network, ReportOptions};
use fire_core::nn::{
    empirical_activity_scores, evaluate, forward, hessian_sigma_max, init_network, select_rows, train_step, LossKind,
    Targets, TrainState,
};
use fire_core::params::NetworkParams;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{checkpoint_dir, load_checkpoint, save_checkpoint, Checkpoint, MANIFEST};
use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, Dataset};
use crate::error::{io_err, Result};
use crate::records::{read_records, MetricRecord, RecordWriter, Split};
use crate::stream::{build_chunks, indices_for_classes};

const STREAM_INIT: u64 = 30;
const STREAM_SHUFFLE: u64 = 31;
const STREAM_REINIT: u64 = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after training this chunk, leaving its boundary checkpoint behind.
    pub halt_after_chunk: Option<usize>,
    /// Continue from the latest boundary checkpoint of an earlier run.
    pub resume: bool,
}

pub fn csv_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.resolved_output_dir().join(format!("{}.csv", cfg.run_id(seed)))
}

/// All seeds of `cfg`, each as an independent worker writing its own CSV.
/// Records come back in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let cfg_path = out.join(format!("{}.config.toml", cfg.method_label()));
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(io_err(&cfg_path))?;
    let results: Vec<Result<Vec<MetricRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || run_seed(cfg, seed, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run worker panicked"))
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

struct Start {
    params: NetworkParams,
    step: u64,
    chunk: usize,
    prior: Vec<MetricRecord>,
}

fn find_resume_point(root: &Path, run_id: &str, chunks: usize, csv: &Path) -> Result<Option<Start>> {
    if checkpoint_dir(root, run_id, chunks - 1, "final")
        .join(MANIFEST)
        .exists()
    {
        let ckpt = load_checkpoint(&checkpoint_dir(root, run_id, chunks - 1, "final"))?;
        return Ok(Some(Start {
            params: ckpt.params,
            step: ckpt.step,
            chunk: chunks,
            prior: read_records(csv)?,
        }));
    }
    for k in (1..chunks).rev() {
        let dir = checkpoint_dir(root, run_id, k, "pre");
        if dir.join(MANIFEST).exists() {
            let ckpt = load_checkpoint(&dir)?;
            let prior = read_records(csv)?.into_iter().filter(|r| r.chunk < k).collect();
            return Ok(Some(Start {
                params: ckpt.params,
                step: ckpt.step,
                chunk: k,
                prior,
            }));
        }
    }
    Ok(None)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    run_id: String,
    method: String,
    seed: u64,
    clock: Instant,
    clock_offset: f64,
}

impl Context<'_> {
    fn record(&self, chunk: usize, epoch: usize, split: Split, step: u64, loss: f64, accuracy: f64) -> MetricRecord {
        MetricRecord {
            run_id: self.run_id.clone(),
            method: self.method.clone(),
            seed: self.seed,
            chunk,
            epoch,
            split,
            step,
            loss,
            accuracy,
            dfi: Vec::new(),
            sfe_reset: None,
            srank: Vec::new(),
            dormant: None,
            hessian_sigma_max: None,
            wall_seconds: self.clock_offset + self.clock.elapsed().as_secs_f64(),
        }
    }

    fn add_snapshot(&self, rec: &mut MetricRecord, params: &NetworkParams, probe: &Dataset) -> Result<()> {
        let m = &self.cfg.metrics;
        let report = plasticity_report(
            params,
            Some(&probe.x),
            None,
            ReportOptions {
                delta: m.delta,
                tau: m.tau,
            },
        )?;
        let hidden = params.num_layers() - 1;
        rec.dfi = report.dfi;
        rec.srank = report.srank;
        rec.dormant = Some(report.dormant[..hidden].iter().sum());
        Ok(())
    }

    fn add_hessian(&self, row: &mut MetricRecord, params: &NetworkParams, probe: &Dataset) -> Result<()> {
        if self.cfg.metrics.hessian {
            let est = hessian_sigma_max(
                params,
                &probe.x,
                &Targets::Classes(probe.labels.clone()),
                LossKind::CrossEntropy,
                self.cfg.metrics.hessian_tol,
                self.cfg.metrics.hessian_max_iter,
            )?;
            row.hessian_sigma_max = Some(est.value);
        }
        Ok(())
    }
}

fn eval_row(
    ctx: &Context,
    params: &NetworkParams,
    data: &Dataset,
    chunk: usize,
    epoch: usize,
    split: Split,
    step: u64,
) -> Result<MetricRecord> {
    let ev = evaluate(
        params,
        &data.x,
        &Targets::Classes(data.labels.clone()),
        LossKind::CrossEntropy,
    )?;
    Ok(ctx.record(chunk, epoch, split, step, ev.loss, ev.accuracy.unwrap_or(0.0)))
}

/// One seed of `cfg`. Writes `<output>/<run_id>.csv` and boundary checkpoints.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, opts: RunOptions) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    let root = cfg.resolved_output_dir();
    let run_id = cfg.run_id(seed);
    let csv = csv_path(cfg, seed);
    let splits = generate_dataset(&cfg.stream.dataset)?;
    let chunks = build_chunks(&cfg.stream, &splits.train)?;
    let arch = cfg.architecture();

    let mut reinit = cfg.reinit.clone();
    reinit.seed = derive_seed(seed, STREAM_REINIT, cfg.reinit.seed);
    let shuffle_seed = derive_seed(seed, STREAM_SHUFFLE, cfg.train.seed);
    let initial = init_network(&arch, derive_seed(seed, STREAM_INIT, 0))?;
    let anchor = (cfg.train.regularizer.kind == RegularizerKind::L2Init).then_some(&initial);

    let resumed = if opts.resume {
        find_resume_point(&root, &run_id, chunks.len(), &csv)?
    } else {
        None
    };
    let Start {
        mut params,
        mut step,
        chunk: first_chunk,
        prior,
    } = resumed.unwrap_or_else(|| Start {
        params: initial.clone(),
        step: 0,
        chunk: 0,
        prior: Vec::new(),
    });

    let ctx = Context {
        cfg,
        run_id: run_id.clone(),
        method: cfg.method_label(),
        seed,
        clock: Instant::now(),
        clock_offset: prior.last().map_or(0.0, |r| r.wall_seconds),
    };
    let mut writer = RecordWriter::create(&csv)?;
    let mut records = Vec::new();
    for r in prior {
        writer.write(&r)?;
        records.push(r);
    }
    let mut emit = |r: MetricRecord, records: &mut Vec<MetricRecord>| -> Result<()> {
        writer.write(&r)?;
        records.push(r);
        Ok(())
    };
    let checkpoint = |params: &NetworkParams, chunk: usize, phase: &str, step: u64| {
        save_checkpoint(
            &checkpoint_dir(&root, &run_id, chunk, phase),
            &Checkpoint {
                run_id: run_id.clone(),
                seed,
                chunk,
                phase: phase.to_string(),
                step,
                params: params.clone(),
            },
        )
    };

    let batch_size = cfg.train.batch_size;
    for (k, chunk) in chunks.iter().enumerate().skip(first_chunk) {
        let train = splits.train.subset(&chunk.train);
        let test = splits.test.subset(&indices_for_classes(&splits.test, &chunk.classes));
        let probe_idx: Vec<usize> = (0..cfg.metrics.probe_size.min(train.len())).collect();
        let probe = train.subset(&probe_idx);

        let mut sfe_reset = None;
        if k > 0 {
            let pre = params.clone();
            let activity = if reinit.method == ReinitMethod::Redo {
                let cache = forward(&pre, &probe.x)?;
                Some(empirical_activity_scores(&cache, &pre))
            } else {
                None
            };
            params = reinitialize(&pre, &reinit, k as u64, activity.as_deref())?;
            checkpoint(&params, k, "post", step)?;
            sfe_reset = Some(sfe_network(&pre, &params)?);
        }

        emit(eval_row(&ctx, &params, &train, k, 0, Split::Train, step)?, &mut records)?;
        let mut row = eval_row(&ctx, &params, &test, k, 0, Split::Test, step)?;
        ctx.add_snapshot(&mut row, &params, &probe)?;
        row.sfe_reset = sfe_reset;
        ctx.add_hessian(&mut row, &params, &probe)?;
        emit(row, &mut records)?;

        let epochs = cfg.stream.epochs_for(k, cfg.train.epochs_per_chunk);
        let steps_per_epoch = train.len().div_ceil(batch_size);
        let mut state = TrainState::new(&cfg.train, (epochs * steps_per_epoch) as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for e in 1..=epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, k as u64, e as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct) = (0.0, 0);
            for b in order.chunks(batch_size) {
                let xb = select_rows(&train.x, b);
                let tb = Targets::Classes(b.iter().map(|&i| train.labels[i]).collect());
                let st = train_step(
                    &mut params,
                    &mut state,
                    &xb,
                    &tb,
                    LossKind::CrossEntropy,
                    &cfg.train,
                    anchor,
                )?;
                loss_sum += st.loss * b.len() as f64;
                correct += st.correct;
                step += 1;
            }
            let n = train.len() as f64;
            emit(
                ctx.record(k, e, Split::Train, step, loss_sum / n, correct as f64 / n),
                &mut records,
            )?;
            let mut row = eval_row(&ctx, &params, &test, k, e, Split::Test, step)?;
            if e % cfg.metrics.cadence == 0 || e == epochs {
                ctx.add_snapshot(&mut row, &params, &probe)?;
            }
            if e == epochs {
                ctx.add_hessian(&mut row, &params, &probe)?;
            }
            emit(row, &mut records)?;
        }

        if k + 1 < chunks.len() {
            checkpoint(&params, k + 1, "pre", step)?;
            if opts.halt_after_chunk == Some(k) {
                break;
            }
        } else {
            checkpoint(&params, k, "final", step)?;
        }
    }
    Ok(records)
}

/// Finishes an interrupted run from its latest boundary checkpoint.
pub fn resume_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRecord>> {
    run_seed(
        cfg,
        seed,
        RunOptions {
            resume: true,
            halt_after_chunk: None,
        },
    )
}

/// Final weights of a finished run.
pub fn final_params(cfg: &ExperimentConfig, seed: u64) -> Result<NetworkParams> {
    let k = cfg.stream.chunks() - 1;
    Ok(load_checkpoint(&checkpoint_dir(
        &cfg.resolved_output_dir(),
        &cfg.run_id(seed),
        k,
        "final",
    ))?
    .params)
}

/// Weights just before the last reinitialization of a finished run, or the
/// final weights for single-chunk runs.
pub fn last_pre_reset_params(cfg: &ExperimentConfig, seed: u64) -> Result<NetworkParams> {
    let k = cfg.stream.chunks() - 1;
    if k == 0 {
        return final_params(cfg, seed);
    }
    let dir = checkpoint_dir(&cfg.resolved_output_dir(), &cfg.run_id(seed), k, "pre");
    Ok(load_checkpoint(&dir)?.params)
}
