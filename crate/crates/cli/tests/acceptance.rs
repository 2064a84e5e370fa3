//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dusev_core::cue::{CueKind, CueToken, CueTokenSet};
use dusev_core::discriminator::{Discriminator, FnModel, ModelConfig, RiskModel};
use dusev_core::explain::{
    background_medians, fit_surrogate, global_importance, surface_grid, ShapleyExplainer, SurrogateConfig,
    SURFACE_STEPS,
};
use dusev_core::numerics::{finite_diff_check, EntrySelection, Mode, ParamSet};
use dusev_core::rng::SeededRng;
use dusev_core::robustness::{ablate_modality, jitter, noise_sweep, Condition};
use dusev_core::synthetic::{generate, split, GeneratorConfig, Splits};
use dusev_core::training::{band_report, compute_metrics, train, LabeledSet, TrainConfig};

type Outcome = Result<(bool, String), String>;

fn random_scenes(n: usize, seed: u64) -> Vec<CueTokenSet> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| CueTokenSet::new([(); 5].map(|_| CueToken::new(rng.uniform(), rng.uniform()))))
        .collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("i{i}")).collect()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut model = Discriminator::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = SeededRng::new(21);
    for p in model.params_mut() {
        for x in p.value.as_mut_slice() {
            *x += rng.normal(0.0, 0.05);
        }
    }
    for s in &mut model.params.bn_stats {
        for m in &mut s.mean {
            *m = rng.normal(0.0, 0.2);
        }
        for v in &mut s.var {
            *v = rng.uniform_range(0.5, 1.5);
        }
    }
    let batch = random_scenes(4, 22);
    let targets: Vec<f64> = model
        .predict_normalized(&batch)
        .iter()
        .zip([0.02, -0.015, 0.01, -0.025])
        .map(|(y, o)| y + o)
        .collect();
    model.zero_grads();
    model
        .loss_and_grads(&batch, &targets, Mode::Eval)
        .map_err(|e| e.to_string())?;
    let report = finite_diff_check(&mut model, |m| m.eval_loss(&batch, &targets), EntrySelection::AtMost(64));
    let secs = start.elapsed().as_secs_f64();
    let worst = report.worst().map_or("-".into(), |t| t.name.clone());
    Ok((
        report.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{} tensors, max rel err {:.2e} in {worst} (< 1e-4); {secs:.1} s (< 60 s)",
            report.tensors.len(),
            report.max_rel_error
        ),
    ))
}

/// The network with the fire cue zeroed before every forward pass.
struct FireBlind<'a>(&'a Discriminator);

impl RiskModel for FireBlind<'_> {
    fn scores(&self, scenes: &[CueTokenSet]) -> Vec<f64> {
        let blind: Vec<CueTokenSet> = scenes
            .iter()
            .map(|s| {
                let mut h = *s;
                h.set(CueKind::Fire, CueToken::new(0.0, 0.0));
                h
            })
            .collect();
        self.0.scores(&blind)
    }
}

fn shapley_axioms() -> Outcome {
    let start = Instant::now();
    let net = Discriminator::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let dummy = FireBlind(&net);
    let bg = random_scenes(64, 23);
    let xs = random_scenes(100, 24);
    let reports = ShapleyExplainer::new(&dummy, &bg)
        .map_err(|e| e.to_string())?
        .explain_many(&xs, &ids(100));
    let (mut eff, mut dum, mut dec) = (0.0f64, 0.0f64, 0.0f64);
    let mut symmetric = true;
    for r in &reports {
        eff = eff.max((r.base_value + r.phi.iter().sum::<f64>() - r.prediction).abs());
        dum = dum.max(r.phi[CueKind::Fire.index()].abs());
        let total: f64 = r.interaction.iter().flatten().sum();
        dec = dec.max((total - (r.prediction - r.base_value)).abs());
        for i in 0..5 {
            dec = dec.max((r.interaction[i].iter().sum::<f64>() - r.phi[i]).abs());
            for j in 0..5 {
                symmetric &= r.interaction[i][j].to_bits() == r.interaction[j][i].to_bits();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        eff <= 1e-8 && dum < 1e-10 && symmetric && dec <= 1e-6 && secs < 60.0,
        format!(
            "efficiency {eff:.1e} (<= 1e-8), dummy {dum:.1e} (< 1e-10), symmetric {symmetric}, \
             decomposition {dec:.1e} (<= 1e-6); {secs:.1} s (< 60 s)"
        ),
    ))
}

fn linear_oracle() -> Outcome {
    let w = [1.5, -0.8, 3.0, 2.0, 0.6];
    let linear = FnModel(move |s: &CueTokenSet| s.values().iter().zip(w).map(|(v, w)| v * w).sum());
    let bg = random_scenes(64, 25);
    let xs = random_scenes(50, 26);
    let mean: Vec<f64> = (0..5)
        .map(|k| bg.iter().map(|s| s.tokens[k].v).sum::<f64>() / bg.len() as f64)
        .collect();
    let reports = ShapleyExplainer::new(&linear, &bg)
        .map_err(|e| e.to_string())?
        .explain_many(&xs, &ids(50));
    let mut err = 0.0f64;
    for (x, r) in xs.iter().zip(&reports) {
        for k in 0..5 {
            err = err.max((r.phi[k] - w[k] * (x.tokens[k].v - mean[k])).abs());
        }
    }
    Ok((err <= 1e-8, format!("max |phi - w(v - mean)| {err:.1e} over 50 instances (<= 1e-8)")))
}

struct Trained {
    model: Discriminator,
    splits: Splits,
    caps: dusev_core::cue::CueCaps,
    train_secs: f64,
}

impl Trained {
    fn tokens(&self, d: &dusev_core::synthetic::Dataset) -> Vec<CueTokenSet> {
        d.tokens(&self.caps).expect("generated scenes tokenize")
    }
}

fn train_default() -> Result<Trained, String> {
    let gen = GeneratorConfig::default();
    let data = generate(&gen).map_err(|e| e.to_string())?;
    let splits = split(&data, [0.70, 0.15, 0.15], 42).map_err(|e| e.to_string())?;
    let tr = splits.train.tokens(&gen.caps).map_err(|e| e.to_string())?;
    let va = splits.val.tokens(&gen.caps).map_err(|e| e.to_string())?;
    let (trl, val) = (splits.train.labels(), splits.val.labels());
    let start = Instant::now();
    let (model, _) = train(
        LabeledSet::new(&tr, &trl).map_err(|e| e.to_string())?,
        LabeledSet::new(&va, &val).map_err(|e| e.to_string())?,
        &ModelConfig::default(),
        &TrainConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok(Trained {
        model,
        splits,
        caps: gen.caps,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

fn training_target(t: &Trained) -> Outcome {
    let preds = t.model.scores(&t.tokens(&t.splits.val));
    let m = compute_metrics(&preds, &t.splits.val.labels()).map_err(|e| e.to_string())?;
    let r2 = m.r2().map_err(|e| e.to_string())?;
    Ok((
        r2 >= 0.90 && m.mae <= 0.55 && t.train_secs < 900.0,
        format!(
            "val R2 {r2:.4} (>= 0.90), MAE {:.4} (<= 0.55); trained in {:.0} s (< 900 s)",
            m.mae, t.train_secs
        ),
    ))
}

fn band_accuracy(t: &Trained) -> Outcome {
    let preds = t.model.scores(&t.tokens(&t.splits.test));
    let b = band_report(&preds, &t.splits.test.labels()).map_err(|e| e.to_string())?;
    Ok((b.accuracy >= 0.85, format!("test band accuracy {:.4} (>= 0.85)", b.accuracy)))
}

fn robustness(t: &Trained) -> Outcome {
    let test = t.tokens(&t.splits.test);
    let labels = t.splits.test.labels();
    let train = t.tokens(&t.splits.train);
    let bg = &train[..256];
    let err = |e: dusev_core::Error| e.to_string();
    let noise = noise_sweep(&t.model, &test, &labels, &[0.05], 42).map_err(err)?;
    let noise_drop = -noise[0].delta_r2.ok_or("R2 undefined")?;
    let drop = |kind| -> Result<f64, String> {
        let r = ablate_modality(&t.model, &test, &labels, kind, bg).map_err(err)?;
        assert!(matches!(r.condition, Condition::Ablation { .. }));
        Ok(-r.delta_r2.ok_or("R2 undefined")?)
    };
    let (wp, p) = (drop(CueKind::Weapon)?, drop(CueKind::Person)?);
    let raw: Vec<_> = t.splits.test.records.iter().map(|r| r.observation()).collect();
    let j = jitter(&t.model, &raw, &labels, &t.caps, 0.10, 42).map_err(err)?;
    let ratio = j.delta_mae / j.baseline.mae;
    Ok((
        noise_drop < 0.05 && wp > p && ratio < 0.25,
        format!(
            "sigma=0.05 R2 drop {noise_drop:.4} (< 0.05); ablation R2 drop weapon {wp:.4} > person {p:.4}; \
             jitter dMAE/MAE {ratio:.4} (< 0.25)"
        ),
    ))
}

fn surrogate_fidelity(t: &Trained) -> Outcome {
    let (train, test) = (t.tokens(&t.splits.train), t.tokens(&t.splits.test));
    let rows = |s: &[CueTokenSet]| s.iter().map(|x| x.values()).collect::<Vec<_>>();
    let tree = fit_surrogate(&rows(&train), &t.model.scores(&train), &SurrogateConfig::default())
        .map_err(|e| e.to_string())?;
    let fid = tree
        .fidelity(&rows(&test), &t.model.scores(&test))
        .map_err(|e| e.to_string())?
        .ok_or("fidelity undefined")?;
    let sum: f64 = tree.mdi().weights.iter().sum();
    Ok((
        tree.depth() <= 4 && fid >= 0.80 && (sum - 1.0).abs() <= 1e-12,
        format!(
            "depth {} tree, held-out R2 {fid:.4} (>= 0.80); MDI sum - 1 = {:.1e} (<= 1e-12)",
            tree.depth(),
            sum - 1.0
        ),
    ))
}

fn explainability_ordering(t: &Trained) -> Outcome {
    let (train, test) = (t.tokens(&t.splits.train), t.tokens(&t.splits.test));
    let bg = &train[..64];
    let reports = ShapleyExplainer::new(&t.model, bg)
        .map_err(|e| e.to_string())?
        .explain_many(&test[..200], &ids(200));
    let g = global_importance(&reports).map_err(|e| e.to_string())?;
    let (wp, p) = (g.percent[CueKind::Weapon.index()], g.percent[CueKind::Person.index()]);
    let base = background_medians(&train[..256]).map_err(|e| e.to_string())?;
    let grid = surface_grid(&t.model, CueKind::Weapon, CueKind::Emotion, &base).map_err(|e| e.to_string())?;
    let (c00, c11) = (grid[0].score, grid[SURFACE_STEPS * SURFACE_STEPS - 1].score);
    Ok((
        wp > p && c11 > c00,
        format!("mean |phi| weapon {wp:.2}% > person {p:.2}%; weapon-emotion surface (1,1) {c11:.3} > (0,0) {c00:.3}"),
    ))
}

const CLI_CONFIG: &str = r#"{
  "generator": {"n_scenes": 600},
  "model": {"d_model": 16, "n_layers": 2, "n_heads": 4, "ffn_dim": 32, "head_widths": [16, 8]},
  "train": {"epochs": 3, "patience": 3},
  "explain": {"background_size": 16, "explain_size": 24},
  "robustness": {"background_size": 16}
}"#;

const DETECTIONS: &str = r#"{"scene_id": "cam2-0042",
  "detections": [{"kind": "person", "confidence": 0.88}, {"kind": "weapon", "confidence": 0.74}],
  "faces": [{"emotion": "fear", "confidence": 0.61}],
  "body": [{"state": "abnormal", "confidence": 0.7}]}"#;

fn run_cli(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    fs::write(dir.join("cfg.json"), CLI_CONFIG).map_err(|e| e.to_string())?;
    fs::write(dir.join("scene.json"), DETECTIONS).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 7] = [
        &["generate"],
        &["train"],
        &["eval", "--split", "val"],
        &["score", "--detections", "scene.json", "--attention", "--out", "out/score.json"],
        &["explain"],
        &["surface"],
        &["perturb"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_dusev"))
            .args(["--config", "cfg.json"])
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (fa, fb) = (run_cli(a.path())?, run_cli(b.path())?);
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let same_set = fa.len() == fb.len();
    Ok((
        same_set && differing.is_empty(),
        format!(
            "{} files from generate/train/eval/score/explain/surface/perturb, {} differ{}",
            fa.len(),
            differing.len() + usize::from(!same_set),
            differing.first().map_or(String::new(), |k| format!(" (first: {k})"))
        ),
    ))
}

fn latency(t: &Trained) -> Outcome {
    let scene = t.tokens(&t.splits.test)[0];
    for _ in 0..100 {
        t.model.predict(&scene, Mode::Eval, false).map_err(|e| e.to_string())?;
    }
    let runs = 1000;
    let start = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(t.model.predict(std::hint::black_box(&scene), Mode::Eval, false).unwrap());
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / runs as f64;
    Ok((ms < 5.0, format!("mean {ms:.3} ms per scene over {runs} runs (< 5 ms)")))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!("[{}] {n:>2}. {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "Shapley axioms", shapley_axioms());
    report(3, "linear attribution oracle", linear_oracle());
    match train_default() {
        Ok(t) => {
            report(4, "synthetic training target", training_target(&t));
            report(5, "band classification", band_accuracy(&t));
            report(6, "robustness", robustness(&t));
            report(7, "surrogate fidelity", surrogate_fidelity(&t));
            report(8, "explainability ordering", explainability_ordering(&t));
            report(9, "determinism", determinism());
            report(10, "latency", latency(&t));
        }
        Err(e) => {
            for (n, name) in [
                (4, "synthetic training target"),
                (5, "band classification"),
                (6, "robustness"),
                (7, "surrogate fidelity"),
                (8, "explainability ordering"),
                (10, "latency"),
            ] {
                report(n, name, Err(format!("training failed: {e}")));
            }
            report(9, "determinism", determinism());
        }
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
