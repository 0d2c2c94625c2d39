use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ris_lab_core::codebook::{self, calibrate as run_calibration, CalibrationInfo, Localizer};
use ris_lab_core::dataset::{self, GenerateOptions};
use ris_lab_core::eval::{self, BaselineModel, ReportRow};
use ris_lab_core::neural::{parse_checkpoint, Architecture, Checkpoint, GridPoint, TrainConfig};
use ris_lab_core::pipeline;
use ris_lab_core::provenance::{manifest_path, sha256_hex, ManifestCore, RunManifest};
use ris_lab_core::scene::{default_template, desk_template, parse_scene, write_scene};

use crate::failure::Failure;
use crate::{
    CalibrateArgs, EvaluateArgs, GenerateArgs, Preset, ReportArgs, SceneInitArgs, TrainArgs,
};

/// An input file with its content hash.
struct Input {
    bytes: Vec<u8>,
    hash: String,
}

fn read_input(path: &Path, role: &str) -> Result<Input, Failure> {
    let bytes =
        fs::read(path).map_err(|e| Failure::Io(format!("{role} {}: {e}", path.display())))?;
    let hash = sha256_hex(&bytes);
    Ok(Input { bytes, hash })
}

fn text(input: &Input, role: &str) -> Result<String, Failure> {
    String::from_utf8(input.bytes.clone())
        .map_err(|_| Failure::Validation(format!("{role} is not UTF-8 text")))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<String, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(bytes))
}

/// Manifest bookkeeping for one command run.
struct Run {
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn new(core: ManifestCore) -> Self {
        Self {
            manifest: RunManifest::new(core),
            started: Instant::now(),
        }
    }

    fn producer(&self) -> Option<String> {
        Some(self.manifest.manifest_hash.clone())
    }

    fn path(&mut self, role: &str, p: &Path) {
        self.manifest
            .paths
            .insert(role.into(), p.display().to_string());
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        let h = write_output(path, bytes)?;
        self.manifest.outputs.insert(path.display().to_string(), h);
        Ok(())
    }

    fn finish(mut self, manifest_at: &Path) -> Result<(), Failure> {
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        write_output(manifest_at, self.manifest.to_json().as_bytes())?;
        Ok(())
    }
}

fn provenance(what: &str, expected: &str, found: &str) -> Result<(), Failure> {
    if expected == found {
        Ok(())
    } else {
        Err(Failure::Provenance(format!(
            "{what}: expected {expected}, found {found}"
        )))
    }
}

pub fn scene_init(a: &SceneInitArgs) -> Result<(), Failure> {
    if a.out.exists() && !a.force {
        return Err(Failure::Validation(format!(
            "{} exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    let mut tpl = match a.preset {
        Preset::Reference => default_template(),
        Preset::Desk => desk_template(a.n_ris),
    };
    if let Some(n) = a.objects {
        if n == 0 || n > tpl.n_objects() {
            return Err(Failure::Validation(format!(
                "--objects must be between 1 and {}",
                tpl.n_objects()
            )));
        }
        tpl.objects.truncate(n);
    }
    tpl.validate()?;
    let text = write_scene(&tpl);
    parse_scene(&text)?.validate()?;
    let preset = match a.preset {
        Preset::Reference => "reference",
        Preset::Desk => "desk",
    };
    let mut core = ManifestCore::new("scene-init").param("preset", preset);
    if matches!(a.preset, Preset::Desk) {
        core = core.param("n_ris", a.n_ris);
    }
    if let Some(n) = a.objects {
        core = core.param("objects", n);
    }
    let mut run = Run::new(core);
    run.path("out", &a.out);
    run.output(&a.out, text.as_bytes())?;
    run.finish(&manifest_path(&a.out))
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let scene = read_input(&a.scene, "scene")?;
    let tpl = parse_scene(&text(&scene, "scene")?)?;
    tpl.validate()?;
    let mut core = ManifestCore::new("generate")
        .param("configs", a.configs)
        .param("so_samples", a.so_samples)
        .input("scene", &scene.hash);
    if let Some(s) = a.snr_db {
        core = core.param("snr_db", s);
    }
    core.seed = Some(a.seed);
    let mut run = Run::new(core);
    run.path("scene", &a.scene);
    run.path("out", &a.out);
    let opts = GenerateOptions {
        snr_db: a.snr_db,
        scene_hash: scene.hash.clone(),
    };
    let mut ds = dataset::generate(&tpl, a.configs, a.so_samples, a.seed, &opts)?;
    ds.meta.producer = run.producer();
    run.output(&a.out, &dataset::dataset_bytes(&ds))?;
    eprintln!("generated {} records", ds.records.len());
    run.finish(&manifest_path(&a.out))
}

fn load_dataset(path: &Path) -> Result<(dataset::Dataset, String), Failure> {
    let input = read_input(path, "dataset")?;
    let ds = dataset::parse_dataset(&text(&input, "dataset")?)?;
    Ok((ds, input.hash))
}

fn load_checkpoint(path: &Path, role: &str) -> Result<(Checkpoint, String), Failure> {
    let input = read_input(path, role)?;
    Ok((parse_checkpoint(&input.bytes)?, input.hash))
}

fn history_path(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

pub fn train(a: &TrainArgs, baseline: bool) -> Result<(), Failure> {
    let (ds, ds_hash) = load_dataset(&a.dataset)?;
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        alpha: a.alpha,
        seed: a.seed,
        clip: if a.no_clip {
            None
        } else {
            TrainConfig::default().clip
        },
        parallel: true,
    };
    let command = if baseline { "train-baseline" } else { "train" };
    let mut core = ManifestCore::new(command)
        .param("epochs", a.epochs)
        .param("batch", a.batch)
        .param("lr", a.lr)
        .param("alpha", a.alpha)
        .param("clip", !a.no_clip)
        .input("dataset", &ds_hash);
    if !a.grid_lr.is_empty() || !a.grid_alpha.is_empty() {
        core = core
            .param("grid_lr", format!("{:?}", a.grid_lr))
            .param("grid_alpha", format!("{:?}", a.grid_alpha));
    }
    core.seed = Some(a.seed);
    let mut run = Run::new(core);
    run.path("dataset", &a.dataset);
    run.path("out", &a.out);

    if !a.grid_lr.is_empty() || !a.grid_alpha.is_empty() {
        let lrs = if a.grid_lr.is_empty() {
            vec![a.lr]
        } else {
            a.grid_lr.clone()
        };
        let alphas = if a.grid_alpha.is_empty() {
            vec![a.alpha]
        } else {
            a.grid_alpha.clone()
        };
        let grid: Vec<GridPoint> = lrs
            .iter()
            .flat_map(|&lr| alphas.iter().map(move |&alpha| GridPoint { lr, alpha }))
            .collect();
        let (best, rows) = pipeline::grid_search_on(&ds, baseline, &grid, &cfg)?;
        cfg.lr = grid[best].lr;
        cfg.alpha = grid[best].alpha;
        eprintln!("grid search: best lr {} alpha {}", cfg.lr, cfg.alpha);
        run.output(
            &history_path(&a.out, ".grid.csv"),
            pipeline::grid_csv(&rows).as_bytes(),
        )?;
    }

    let (mut ck, outcome) = if baseline {
        pipeline::train_baseline(&ds, &ds_hash, &cfg)?
    } else {
        pipeline::train_localizer(&ds, &ds_hash, &cfg)?
    };
    ck.header.producer = run.producer();
    run.output(&a.out, &ck.to_bytes())?;
    let hist = a
        .history
        .clone()
        .unwrap_or_else(|| history_path(&a.out, ".history.csv"));
    run.output(&hist, pipeline::history_csv(&outcome).as_bytes())?;
    eprintln!(
        "initial validation loss {:.6}; best {:.6} at epoch {}",
        outcome.initial_val, outcome.best_val, outcome.best_epoch
    );
    if !baseline {
        let sp = pipeline::dataset_split(&ds)?;
        let acc = pipeline::class_accuracy(&ds, &ck, &sp.val)?;
        eprintln!("validation configuration accuracy {:.1}%", 100.0 * acc);
    }
    run.finish(&manifest_path(&a.out))
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), Failure> {
    let scene = read_input(&a.scene, "scene")?;
    let scene_text = text(&scene, "scene")?;
    let tpl = parse_scene(&scene_text)?;
    tpl.validate()?;
    let (ds, ds_hash) = load_dataset(&a.dataset)?;
    let (ck, ck_hash) = load_checkpoint(&a.checkpoint, "checkpoint")?;
    provenance("dataset scene hash", &scene.hash, &ds.meta.scene_hash)?;
    provenance("checkpoint dataset hash", &ds_hash, &ck.header.dataset_hash)?;
    if !matches!(ck.header.architecture, Architecture::Bilstm { .. }) {
        return Err(Failure::Validation(
            "calibration needs a BiLSTM checkpoint".into(),
        ));
    }
    let sites: Vec<usize> = if a.sites.is_empty() {
        (0..tpl.ue_sites().len()).collect()
    } else {
        a.sites.clone()
    };
    let mut core = ManifestCore::new("calibrate")
        .param("resolution", a.resolution)
        .param("sites", format!("{sites:?}"))
        .input("scene", &scene.hash)
        .input("dataset", &ds_hash)
        .input("checkpoint", &ck_hash);
    core.seed = Some(ds.meta.seed);
    let mut run = Run::new(core);
    run.path("scene", &a.scene);
    run.path("dataset", &a.dataset);
    run.path("checkpoint", &a.checkpoint);
    run.path("out", &a.out);

    let model = Localizer::from_checkpoint(&ck)?;
    let info = CalibrationInfo {
        scene_text,
        scene_hash: scene.hash,
        checkpoint_hash: ck_hash,
        seed: ds.meta.seed,
    };
    let mut cb = run_calibration(&model, &tpl, &ds.configs(), a.resolution, &sites, &info)?;
    cb.producer = run.producer();
    run.output(&a.out, &codebook::codebook_bytes(&cb))?;
    eprintln!(
        "calibrated {} buckets over {} candidates",
        cb.entries.len(),
        cb.configs.len()
    );
    run.finish(&manifest_path(&a.out))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let (ds, ds_hash) = load_dataset(&a.dataset)?;
    let (ck, ck_hash) = load_checkpoint(&a.checkpoint, "checkpoint")?;
    let (bk, bk_hash) = load_checkpoint(&a.baseline, "baseline")?;
    let cb_in = read_input(&a.codebook, "codebook")?;
    let cb = codebook::parse_codebook(&cb_in.bytes)?;
    provenance("checkpoint dataset hash", &ds_hash, &ck.header.dataset_hash)?;
    provenance("baseline dataset hash", &ds_hash, &bk.header.dataset_hash)?;
    provenance("codebook checkpoint hash", &ck_hash, &cb.checkpoint_hash)?;
    provenance("codebook scene hash", &ds.meta.scene_hash, &cb.scene_hash)?;
    provenance(
        "embedded scene hash",
        &cb.scene_hash,
        &sha256_hex(cb.scene.as_bytes()),
    )?;
    if cb.configs != ds.meta.configs {
        return Err(Failure::Provenance(
            "codebook candidates differ from the dataset configurations".into(),
        ));
    }
    let tpl = parse_scene(&cb.scene)?;
    let seed = a.seed.unwrap_or(ds.meta.seed);
    let mut core = ManifestCore::new("evaluate")
        .param("instances", a.instances)
        .input("dataset", &ds_hash)
        .input("checkpoint", &ck_hash)
        .input("baseline", &bk_hash)
        .input("codebook", &cb_in.hash);
    core.seed = Some(seed);
    let mut run = Run::new(core);
    run.path("dataset", &a.dataset);
    run.path("checkpoint", &a.checkpoint);
    run.path("baseline", &a.baseline);
    run.path("codebook", &a.codebook);
    run.path("out", &a.out);

    let sp = pipeline::dataset_split(&ds)?;
    let instances = eval::select_instances(&sp.test, a.instances, seed);
    let model = Localizer::from_checkpoint(&ck)?;
    let base = BaselineModel::from_checkpoint(&bk)?;
    let (series, row, _) = eval::evaluate(&tpl, &ds, &instances, &model, &cb, &base)?;
    run.output(
        &a.out.join("series.csv"),
        eval::series_csv(&series).as_bytes(),
    )?;
    run.output(
        &a.out.join("summary.csv"),
        eval::summary_csv(std::slice::from_ref(&row)).as_bytes(),
    )?;
    let table = eval::table_text(std::slice::from_ref(&row));
    run.output(&a.out.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    run.finish(&a.out.join("manifest.json"))
}

/// `summary.csv` in `dir` and its immediate subdirectories, sorted by path.
fn summaries(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    let own = dir.join("summary.csv");
    if own.is_file() {
        out.push(own);
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.csv").is_file())
        .collect();
    subs.sort();
    out.extend(subs.into_iter().map(|p| p.join("summary.csv")));
    Ok(out)
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    let files = summaries(&a.eval_dir)?;
    if files.is_empty() {
        return Err(Failure::Validation(format!(
            "no summary.csv under {}",
            a.eval_dir.display()
        )));
    }
    let mut core = ManifestCore::new("report");
    let mut rows: Vec<ReportRow> = Vec::new();
    for (i, f) in files.iter().enumerate() {
        let input = read_input(f, "summary")?;
        core = core.input(&format!("summary_{i}"), &input.hash);
        rows.extend(eval::parse_summary_csv(&text(&input, "summary")?)?);
    }
    rows.sort_by_key(|r| (r.n_ris, r.k));
    let mut run = Run::new(core);
    run.path("eval_dir", &a.eval_dir);
    run.path("out", &a.out);
    run.output(
        &a.out.join("table.csv"),
        eval::summary_csv(&rows).as_bytes(),
    )?;
    let table = eval::table_text(&rows);
    run.output(&a.out.join("table.txt"), table.as_bytes())?;
    print!("{table}");
    run.finish(&a.out.join("manifest.json"))
}
