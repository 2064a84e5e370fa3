use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dusev_core::cue::{CueKind, CueTokenSet, RawSceneObservation, NUM_CUES};
use dusev_core::discriminator::{CheckpointFile, Discriminator, RiskModel};
use dusev_core::explain::{
    background_medians, correlations, dependence_csv, dependence_grid, fit_surrogate,
    global_importance, mean_abs_interactions, surface_csv, surface_grid, ShapleyExplainer,
    SynergyGraph,
};
use dusev_core::numerics::Mode;
use dusev_core::rng::SeededRng;
use dusev_core::robustness::{ablate_all, jitter, noise_sweep};
use dusev_core::synthetic::{generate, split, Dataset, Splits};
use dusev_core::training::{band_report, compute_metrics, train_with_progress, LabeledSet};
use serde::Serialize;

use crate::config::{CorrelationTarget, RunConfig};
use crate::detections::SceneDetections;
use crate::output::{self, json_bytes, Meta};
use crate::{CliError, Command, DataArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

pub fn dispatch(mut config: RunConfig, command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { n, seed, out } => {
            if let Some(n) = n {
                config.generator.n_scenes = n;
            }
            if let Some(seed) = seed {
                config.generator.seed = seed;
            }
            let out = out.unwrap_or_else(|| config.paths.scenes.clone());
            cmd_generate(&config, &out)
        }
        Command::Train {
            data,
            model_out,
            history,
            epochs,
            seed,
        } => {
            if let Some(e) = epochs {
                config.train.epochs = e;
                config.train.patience = config.train.patience.min(e);
            }
            if let Some(seed) = seed {
                config.train.seed = seed;
            }
            let data = data.unwrap_or_else(|| config.paths.scenes.clone());
            let model_out = model_out.unwrap_or_else(|| config.paths.model.clone());
            let history = history.unwrap_or_else(|| config.paths.out_dir.join("history.csv"));
            cmd_train(&config, &data, &model_out, &history)
        }
        Command::Eval { io, split, out } => {
            let out = out.unwrap_or_else(|| config.paths.out_dir.join("metrics.json"));
            cmd_eval(&config, &io, split, &out)
        }
        Command::Score {
            detections,
            model,
            attention,
            out,
        } => {
            let model = model.unwrap_or_else(|| config.paths.model.clone());
            cmd_score(&config, &detections, &model, attention, out.as_deref())
        }
        Command::Explain {
            io,
            out_dir,
            background,
            instances,
            correlate,
        } => {
            if let Some(b) = background {
                config.explain.background_size = b;
            }
            if let Some(n) = instances {
                config.explain.explain_size = n;
            }
            if let Some(c) = correlate {
                config.explain.correlate = c;
            }
            let out_dir = out_dir.unwrap_or_else(|| config.paths.out_dir.join("explain"));
            cmd_explain(&config, &io, &out_dir)
        }
        Command::Surface { io, out_dir } => {
            let out_dir = out_dir.unwrap_or_else(|| config.paths.out_dir.join("surfaces"));
            cmd_surface(&config, &io, &out_dir)
        }
        Command::Perturb { io, out } => {
            let out = out.unwrap_or_else(|| config.paths.out_dir.join("robustness.json"));
            cmd_perturb(&config, &io, &out)
        }
        Command::Bench { model, runs, out } => {
            if let Some(r) = runs {
                config.bench.runs = r;
            }
            cmd_bench(&config, model.as_deref(), out.as_deref())
        }
    }
}

struct Loaded {
    splits: Splits,
    meta_inputs: Vec<(PathBuf, Vec<u8>)>,
}

impl Loaded {
    fn meta(&self, command: &'static str, seed: u64, config: &RunConfig) -> Meta {
        self.meta_inputs
            .iter()
            .fold(Meta::new(command, seed, config.hash()), |m, (p, b)| m.with_input(p, b))
    }

    fn part(&self, name: SplitName) -> &Dataset {
        match name {
            SplitName::Train => &self.splits.train,
            SplitName::Val => &self.splits.val,
            SplitName::Test => &self.splits.test,
        }
    }
}

fn load_data(config: &RunConfig, path: &Path) -> Result<Loaded, CliError> {
    let bytes = output::read(path)?;
    let data = Dataset::from_csv(bytes.as_slice())
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let splits = split(&data, config.split.fractions, config.split.seed)?;
    Ok(Loaded {
        splits,
        meta_inputs: vec![(path.to_path_buf(), bytes)],
    })
}

fn load_model(path: &Path) -> Result<(Discriminator, Vec<u8>), CliError> {
    let bytes = output::read(path)?;
    let model = CheckpointFile::parse(&bytes)
        .map_err(dusev_core::Error::from)
        .and_then(CheckpointFile::into_model)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((model, bytes))
}

fn load_both(config: &RunConfig, io: &DataArgs) -> Result<(Loaded, Discriminator), CliError> {
    let data_path = io.data.clone().unwrap_or_else(|| config.paths.scenes.clone());
    let model_path = io.model.clone().unwrap_or_else(|| config.paths.model.clone());
    let mut loaded = load_data(config, &data_path)?;
    let (model, bytes) = load_model(&model_path)?;
    loaded.meta_inputs.push((model_path, bytes));
    Ok((loaded, model))
}

fn tokens(config: &RunConfig, data: &Dataset) -> Result<Vec<CueTokenSet>, CliError> {
    Ok(data.tokens(&config.generator.caps)?)
}

/// The first `n` scenes of a seeded shuffle.
fn sample(scenes: &[CueTokenSet], ids: &[String], n: usize, rng: &mut SeededRng) -> (Vec<CueTokenSet>, Vec<String>) {
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    rng.shuffle(&mut order);
    order.truncate(n.min(scenes.len()));
    (
        order.iter().map(|&i| scenes[i]).collect(),
        order.iter().map(|&i| ids[i].clone()).collect(),
    )
}

fn ids(data: &Dataset) -> Vec<String> {
    data.records.iter().map(|r| r.scene_id.clone()).collect()
}

fn cmd_generate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    config.generator.validate()?;
    let data = generate(&config.generator)?;
    let meta = Meta::new("generate", config.generator.seed, config.hash());
    output::write(out, data.to_csv().as_bytes(), &meta)?;
    let s = data.summary();
    eprintln!(
        "wrote {} scenes to {} (label mean {:.3}, sd {:.3}; bands L/M/H {:.3}/{:.3}/{:.3})",
        s.n,
        out.display(),
        s.label_mean,
        s.label_std,
        s.band_frequencies[0],
        s.band_frequencies[1],
        s.band_frequencies[2]
    );
    Ok(())
}

fn cmd_train(config: &RunConfig, data: &Path, model_out: &Path, history_out: &Path) -> Result<(), CliError> {
    config.validate()?;
    let loaded = load_data(config, data)?;
    let tr = tokens(config, &loaded.splits.train)?;
    let va = tokens(config, &loaded.splits.val)?;
    let (trl, val) = (loaded.splits.train.labels(), loaded.splits.val.labels());
    let started = Instant::now();
    let (model, history) = train_with_progress(
        LabeledSet::new(&tr, &trl)?,
        LabeledSet::new(&va, &val)?,
        &config.model,
        &config.train,
        |e| {
            eprintln!(
                "epoch {:>3}  train_mse {:.5}  val_mae {:.4}  val_rmse {:.4}{}",
                e.epoch,
                e.train_mse,
                e.val_mae,
                e.val_rmse,
                if e.is_best { "  *" } else { "" }
            )
        },
    )?;
    let meta = loaded.meta("train", config.train.seed, config);
    output::write(model_out, &CheckpointFile::from_model(&model).to_bytes(), &meta)?;
    output::write(history_out, history.to_csv().as_bytes(), &meta)?;
    eprintln!(
        "best epoch {} of {} ({:?}) in {:.1}s; checkpoint {}",
        history.best_epoch,
        history.epochs.len(),
        history.stop_reason,
        started.elapsed().as_secs_f64(),
        model_out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: SplitName,
    metrics: dusev_core::training::Metrics,
    bands: dusev_core::training::BandReport,
}

fn cmd_eval(config: &RunConfig, io: &DataArgs, which: SplitName, out: &Path) -> Result<(), CliError> {
    let (loaded, model) = load_both(config, io)?;
    let part = loaded.part(which);
    let preds = model.scores(&tokens(config, part)?);
    let labels = part.labels();
    let report = EvalReport {
        split: which,
        metrics: compute_metrics(&preds, &labels)?,
        bands: band_report(&preds, &labels)?,
    };
    output::write(out, &json_bytes(&report), &loaded.meta("eval", config.split.seed, config))?;
    println!("{}", serde_json::to_string(&report.metrics).expect("metrics serialize"));
    Ok(())
}

fn cmd_score(
    config: &RunConfig,
    detections: &Path,
    model_path: &Path,
    attention: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bytes = output::read(detections)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", detections.display())))?;
    let raw: RawSceneObservation = SceneDetections::parse(&text)?.to_observation()?;
    let scene = dusev_core::cue::tokenize(&raw, &config.generator.caps)?;
    let (model, model_bytes) = load_model(model_path)?;
    let prediction = model.predict(&scene, Mode::Eval, attention)?;
    #[derive(Serialize)]
    struct Scored<'a> {
        scene_id: &'a str,
        counts: [u32; NUM_CUES],
        #[serde(flatten)]
        prediction: dusev_core::discriminator::RiskPrediction,
    }
    let body = json_bytes(&Scored {
        scene_id: &raw.scene_id,
        counts: raw.counts,
        prediction,
    });
    match out {
        Some(path) => {
            let meta = Meta::new("score", config.model.seed, config.hash())
                .with_input(detections, &bytes)
                .with_input(model_path, &model_bytes);
            output::write(path, &body, &meta)
        }
        None => {
            print!("{}", String::from_utf8_lossy(&body));
            Ok(())
        }
    }
}

fn cmd_explain(config: &RunConfig, io: &DataArgs, out_dir: &Path) -> Result<(), CliError> {
    config.validate()?;
    let (loaded, model) = load_both(config, io)?;
    let meta = loaded.meta("explain", config.explain.seed, config);
    let ex = &config.explain;
    let train = tokens(config, &loaded.splits.train)?;
    let test = tokens(config, &loaded.splits.test)?;
    let mut rng = SeededRng::new(ex.seed);
    let (background, _) = sample(&train, &ids(&loaded.splits.train), ex.background_size, &mut rng);
    let (instances, instance_ids) = sample(&test, &ids(&loaded.splits.test), ex.explain_size, &mut rng);
    let put = |name: &str, bytes: &[u8]| output::write(&out_dir.join(name), bytes, &meta);

    let test_preds = model.scores(&test);
    let risk = match ex.correlate {
        CorrelationTarget::Predictions => test_preds.clone(),
        CorrelationTarget::Labels => loaded.splits.test.labels(),
    };
    let corr = correlations(&test, &risk)?;
    put("correlations_pearson.csv", corr.pearson_csv().as_bytes())?;
    put("correlations_spearman.csv", corr.spearman_csv().as_bytes())?;

    let rows = |s: &[CueTokenSet]| s.iter().map(|t| t.values()).collect::<Vec<_>>();
    let tree = fit_surrogate(&rows(&train), &model.scores(&train), &ex.surrogate)?;
    let fidelity = tree.fidelity(&rows(&test), &test_preds)?;
    let mdi = tree.mdi();
    #[derive(Serialize)]
    struct SurrogateReport<'a> {
        fidelity_r2: Option<f64>,
        mdi: &'a dusev_core::explain::MdiImportance,
        depth: usize,
        tree: &'a dusev_core::explain::SurrogateTree,
    }
    put(
        "surrogate.json",
        &json_bytes(&SurrogateReport {
            fidelity_r2: fidelity,
            mdi: &mdi,
            depth: tree.depth(),
            tree: &tree,
        }),
    )?;

    eprintln!(
        "explaining {} scenes against {} background scenes",
        instances.len(),
        background.len()
    );
    let explainer = ShapleyExplainer::new(&model, &background)?;
    let reports = explainer.explain_many(&instances, &instance_ids);
    put("shapley.json", &json_bytes(&reports))?;
    let importance = global_importance(&reports)?;
    let inter = mean_abs_interactions(&reports);

    let mut csv = String::from("cue,mean_abs_phi,percent,mdi\n");
    for k in CueKind::ALL {
        let i = k.index();
        writeln!(
            csv,
            "{},{:.8},{:.4},{:.6}",
            k.label(),
            importance.mean_abs_phi[i],
            importance.percent[i],
            mdi.weights[i]
        )
        .unwrap();
    }
    put("importance.csv", csv.as_bytes())?;

    let mut csv = String::from("cue");
    for k in CueKind::ALL {
        write!(csv, ",{}", k.label()).unwrap();
    }
    csv.push('\n');
    for k in CueKind::ALL {
        csv.push_str(k.label());
        for x in inter[k.index()] {
            write!(csv, ",{x:.8}").unwrap();
        }
        csv.push('\n');
    }
    put("interactions.csv", csv.as_bytes())?;

    let graph = SynergyGraph::new(&importance, &inter)?;
    put("synergy.json", graph.to_json().as_bytes())?;
    put("synergy.dot", graph.to_dot().as_bytes())?;

    for feature in CueKind::ALL {
        let j = feature.index();
        let color = CueKind::ALL
            .into_iter()
            .filter(|k| *k != feature)
            .max_by(|a, b| inter[j][a.index()].total_cmp(&inter[j][b.index()]).then(b.index().cmp(&a.index())))
            .expect("four partners");
        let rows = dependence_grid(&instances, &reports, feature, color)?;
        put(
            &format!("dependence_{}.csv", feature.short_name()),
            dependence_csv(&rows, feature, color).as_bytes(),
        )?;
    }
    eprintln!("wrote explanations to {}", out_dir.display());
    Ok(())
}

fn cmd_surface(config: &RunConfig, io: &DataArgs, out_dir: &Path) -> Result<(), CliError> {
    config.validate()?;
    let (loaded, model) = load_both(config, io)?;
    let meta = loaded.meta("surface", config.explain.seed, config);
    let train = tokens(config, &loaded.splits.train)?;
    let mut rng = SeededRng::new(config.explain.seed);
    let (background, _) = sample(&train, &ids(&loaded.splits.train), config.explain.background_size, &mut rng);
    let base = background_medians(&background)?;
    for (ai, a) in CueKind::ALL.into_iter().enumerate() {
        for b in CueKind::ALL.into_iter().skip(ai + 1) {
            let points = surface_grid(&model, a, b, &base)?;
            let name = format!("surface_{}_{}.csv", a.short_name(), b.short_name());
            output::write(&out_dir.join(name), surface_csv(&points, a, b).as_bytes(), &meta)?;
        }
    }
    eprintln!("wrote 10 surfaces to {}", out_dir.display());
    Ok(())
}

fn cmd_perturb(config: &RunConfig, io: &DataArgs, out: &Path) -> Result<(), CliError> {
    config.validate()?;
    let (loaded, model) = load_both(config, io)?;
    let rc = &config.robustness;
    let test = tokens(config, &loaded.splits.test)?;
    let labels = loaded.splits.test.labels();
    let train = tokens(config, &loaded.splits.train)?;
    let mut rng = SeededRng::new(rc.seed);
    let (background, _) = sample(&train, &ids(&loaded.splits.train), rc.background_size, &mut rng);
    let mut reports = noise_sweep(&model, &test, &labels, &rc.sigmas, rc.seed)?;
    reports.extend(ablate_all(&model, &test, &labels, &background)?);
    let raw: Vec<RawSceneObservation> = loaded.splits.test.records.iter().map(|r| r.observation()).collect();
    reports.push(jitter(&model, &raw, &labels, &config.generator.caps, rc.jitter, rc.seed)?);
    output::write(out, &json_bytes(&reports), &loaded.meta("perturb", rc.seed, config))?;
    for r in &reports {
        eprintln!(
            "{:<40} dMAE {:+.4}  dRMSE {:+.4}  dR2 {}",
            serde_json::to_string(&r.condition).expect("condition serializes"),
            r.delta_mae,
            r.delta_rmse,
            r.delta_r2.map_or("undefined".to_string(), |d| format!("{d:+.4}"))
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub runs: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn cmd_bench(config: &RunConfig, model_path: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    config.validate()?;
    let model = match model_path {
        Some(p) => load_model(p)?.0,
        None => Discriminator::new(config.model.clone())?,
    };
    let mut gen = config.generator.clone();
    gen.n_scenes = 1;
    let scene = generate(&gen)?.tokens(&gen.caps)?[0];
    for _ in 0..config.bench.warmup {
        model.predict(&scene, Mode::Eval, false)?;
    }
    let mut times = Vec::with_capacity(config.bench.runs);
    for _ in 0..config.bench.runs {
        let t = Instant::now();
        std::hint::black_box(model.predict(std::hint::black_box(&scene), Mode::Eval, false)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let report = BenchReport {
        runs: config.bench.runs,
        warmup: config.bench.warmup,
        mean_ms: mean,
        p50_ms: percentile(&times, 0.50),
        p99_ms: percentile(&times, 0.99),
    };
    let body = json_bytes(&report);
    match out {
        Some(path) => output::write(path, &body, &Meta::new("bench", config.model.seed, config.hash()))?,
        None => print!("{}", String::from_utf8_lossy(&body)),
    }
    Ok(())
}
