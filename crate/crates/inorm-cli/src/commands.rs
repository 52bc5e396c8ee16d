//! Subcommand implementations. Every output is a pure function of the config
//! bytes and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use inorm_core::bayes::{self, Corruption};
use inorm_core::error::{Error, Result};
use inorm_core::exec::ExecMode;
use inorm_core::faults::{sweep, EvalProtocol, McConfig, Metric};
use inorm_core::gradcheck;
use inorm_core::model::Model;
use inorm_core::numfmt::sig9;
use inorm_core::rng::derive_key;
use inorm_core::train::train;

use crate::config::{ExperimentConfig, TaskKind};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const OOD_REPORT_FILE: &str = "ood_report.csv";

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Atomic text-file write: temp file in place, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents.as_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    ensure_out_dir(out_dir)?;
    let (train_ds, _) = cfg.datasets()?;
    let mut model = Model::new(cfg.layers()?, cfg.seed)?;
    let report = train(&mut model, &train_ds, &cfg.train_config(cfg.seed))?;

    let mut history = String::from("epoch,loss,metric\n");
    for e in &report.history {
        history.push_str(&format!("{},{},{}\n", e.epoch, sig9(e.loss), sig9(e.metric)));
    }
    write_atomic(&out_dir.join(HISTORY_FILE), &history)?;
    model.save(&out_dir.join(CHECKPOINT_FILE))?;
    if let Some(last) = report.history.last() {
        log::info!(
            "trained {} epochs, final loss {:.6}, final metric {:.4}",
            report.history.len(),
            last.loss,
            last.metric
        );
    }
    println!("checkpoint written to {}", out_dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn load_model_for(cfg: &ExperimentConfig, path: &Path) -> Result<Model> {
    let model = Model::load(path)?;
    let expected = cfg.layers()?;
    if model.layers != expected {
        return Err(Error::Checkpoint(format!(
            "{} does not match the configured model (layers differ)",
            path.display()
        )));
    }
    Ok(model)
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    checkpoint: &Path,
    baseline: Option<&PathBuf>,
    exec: ExecMode,
) -> Result<()> {
    if cfg.sweep.is_empty() {
        return Err(Error::Config("config has no [[sweep]] sections".into()));
    }
    ensure_out_dir(out_dir)?;
    let (_, test_ds) = cfg.datasets()?;
    let model = load_model_for(cfg, checkpoint)?;
    let baseline_model = baseline.map(|p| Model::load(p)).transpose()?;
    let metric = match cfg.model.task {
        TaskKind::Classification => Metric::Accuracy,
        TaskKind::Regression => Metric::Rmse,
    };

    for section in &cfg.sweep {
        let family = section.fault.family();
        let site = section.site.site();
        let mc = McConfig {
            runs: section.runs,
            seed: cfg.seed,
            metric,
        };
        let eval = EvalProtocol {
            passes: section.passes,
            deterministic: section.deterministic_eval,
        };
        let name = |suffix: &str| {
            out_dir.join(format!(
                "sweep_{}_{}{suffix}.csv",
                family.name(),
                site.name()
            ))
        };
        let curve = sweep(&model, &test_ds, family, site, &section.levels, &mc, &eval, exec)?;
        write_atomic(&name(""), &curve.to_csv_string())?;
        println!("wrote {}", name("").display());
        if let Some(base) = &baseline_model {
            let curve = sweep(base, &test_ds, family, site, &section.levels, &mc, &eval, exec)?;
            write_atomic(&name("_baseline"), &curve.to_csv_string())?;
            println!("wrote {}", name("_baseline").display());
        }
    }
    Ok(())
}

pub fn cmd_ood(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    checkpoint: &Path,
    dump_nll: bool,
    exec: ExecMode,
) -> Result<()> {
    let ood = cfg
        .ood
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [ood] section".into()))?;
    if cfg.model.task != TaskKind::Classification {
        return Err(Error::Config("the detector needs a classification task".into()));
    }
    ensure_out_dir(out_dir)?;
    let (_, test_ds) = cfg.datasets()?;
    let model = load_model_for(cfg, checkpoint)?;

    let corruption_seed = derive_key(&[cfg.seed, 0x00d]);
    let mut sets = Vec::new();
    for stage in 1..=ood.rotation_stages {
        let ds = bayes::corrupt(&test_ds, &Corruption::Rotation { stage: stage as i32 }, corruption_seed)?;
        sets.push(("rotation".to_string(), stage as f64, ds));
    }
    for level in 1..=ood.noise_levels {
        let ds = bayes::corrupt(&test_ds, &Corruption::UniformNoise { level }, corruption_seed)?;
        sets.push(("uniform".to_string(), level as f64, ds));
    }

    let rows = bayes::ood_evaluate(&model, &test_ds, &sets, ood.passes, cfg.seed, exec)?;
    let mut buf = Vec::new();
    bayes::write_ood_csv(&rows, &mut buf)?;
    let report = String::from_utf8(buf).expect("csv is utf-8");
    write_atomic(&out_dir.join(OOD_REPORT_FILE), &report)?;
    println!("wrote {}", out_dir.join(OOD_REPORT_FILE).display());

    if dump_nll {
        for (i, row) in rows.iter().enumerate() {
            let mut dump = String::from("sample,nll\n");
            for (s, nll) in row.result.per_sample_nll.iter().enumerate() {
                dump.push_str(&format!("{s},{}\n", sig9(*nll)));
            }
            let path = out_dir.join(format!("ood_nll_{i:02}_{}_{}.csv", row.corruption, row.param as i64));
            write_atomic(&path, &dump)?;
        }
        println!("wrote per-sample NLL dumps to {}", out_dir.display());
    }
    Ok(())
}

pub fn cmd_gradcheck(seed: u64) -> Result<bool> {
    let report = gradcheck::standard_suite(seed, gradcheck::DEFAULT_TOLERANCE)?;
    print!("{}", report.render());
    Ok(report.passed())
}
