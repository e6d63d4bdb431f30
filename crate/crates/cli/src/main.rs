//! Single-entry pipeline driver.
//!
//! Subcommands: collect, decompose, genseq, train, eval, ablate, perturb,
//! gradcheck, diagnose, report. Every command accepts --seed and --config;
//! flag values win over config-file values. Exit codes: 0 success, 1 usage
//! error, 2 data/format error, 3 numeric failure. On success each command
//! prints one machine-readable `RESULT key=value ...` line.

use lvla_core::config::Config;
use lvla_core::dataset;
use lvla_core::error::Error;
use lvla_core::eval::{
    ablation_csv, evaluate, make_chains, manifest_from_string, manifest_to_string,
    perturbation_csv, run_ablation, run_modality_grid, skill_chain_diagnostic, Actor, Mode,
    PerturbKind, PolicyBundle, RolloutConfig,
};
use lvla_core::model::load_checkpoint;
use lvla_core::trainer;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "usage: lvla <command> [flags]

commands:
  collect    generate expert demonstrations          (--n per task, --out dataset.bin)
  decompose  re-derive cutting points on a dataset   (--manifest in, --out out)
  genseq     generate an evaluation chain manifest   (--len, --n, --out chains.txt)
  train      train a policy on a dataset             (--manifest dataset, --out dir, --epochs)
  eval       roll out a checkpoint on a manifest     (--checkpoint, --manifest, --mode, --perturb, --out dir)
  ablate     evaluate the ablation grid              (--checkpoint dir, --manifest, --out dir, --ablation components|modality)
  perturb    perturbation robustness study           (--checkpoint dir, --manifest, --out dir)
  gradcheck  finite-difference gradient check        (--seed)
  diagnose   independent-vs-continuous diagnostic    (--checkpoint, --manifest, --out dir)
  report     summarize artifacts in a directory      (--out dir)

flags: --seed N --config FILE --out PATH --checkpoint PATH --manifest PATH
       --mode continuous|independent --perturb KIND --ablation GRID --len N --n N --epochs N
env:   LVLA_THREADS caps rollout parallelism (0 = serial deterministic mode)";

#[derive(Debug, Default, Clone)]
struct Flags {
    seed: u64,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    mode: Option<String>,
    perturb: Option<String>,
    ablation: Option<String>,
    len: Option<usize>,
    n: Option<usize>,
    epochs: Option<usize>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut f = Flags::default();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut need = |name: &str| -> Result<String, String> {
            it.next().map(|s| s.to_string()).ok_or_else(|| format!("flag {name} needs a value"))
        };
        match arg.as_str() {
            "--seed" => f.seed = need("--seed")?.parse().map_err(|_| "bad --seed".to_string())?,
            "--config" => f.config = Some(PathBuf::from(need("--config")?)),
            "--out" => f.out = Some(PathBuf::from(need("--out")?)),
            "--checkpoint" => f.checkpoint = Some(PathBuf::from(need("--checkpoint")?)),
            "--manifest" => f.manifest = Some(PathBuf::from(need("--manifest")?)),
            "--mode" => f.mode = Some(need("--mode")?),
            "--perturb" => f.perturb = Some(need("--perturb")?),
            "--ablation" => f.ablation = Some(need("--ablation")?),
            "--len" => f.len = Some(need("--len")?.parse().map_err(|_| "bad --len".to_string())?),
            "--n" => f.n = Some(need("--n")?.parse().map_err(|_| "bad --n".to_string())?),
            "--epochs" => {
                f.epochs = Some(need("--epochs")?.parse().map_err(|_| "bad --epochs".to_string())?)
            }
            unknown => return Err(format!("unknown flag '{unknown}'")),
        }
    }
    Ok(f)
}

fn load_config(f: &Flags) -> Result<Config, Error> {
    let mut cfg = match &f.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(e) = f.epochs {
        cfg.train.epochs = e;
    }
    if let Some(m) = &f.mode {
        cfg.eval.mode = m.clone();
    }
    if let Some(l) = f.len {
        cfg.eval.chain_len = l;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Divergence(_) | Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn require(opt: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    opt.clone().ok_or_else(|| Error::Config(format!("missing required flag {what}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn cmd_collect(f: &Flags) -> Result<String, Error> {
    let mut cfg = load_config(f)?;
    if let Some(n) = f.n {
        cfg.data.n_per_task = n;
    }
    let out = require(&f.out, "--out")?;
    let ds = dataset::collect(cfg.data.n_per_task, f.seed, &cfg.sim, &cfg.data)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    dataset::save(&ds, &out)?;
    Ok(format!(
        "RESULT trajectories={} labeled={} play={} path={}",
        ds.trajectories.len(),
        ds.labeled_count(),
        ds.play_count(),
        out.display()
    ))
}

fn cmd_decompose(f: &Flags) -> Result<String, Error> {
    let input = require(&f.manifest, "--manifest")?;
    let out = require(&f.out, "--out")?;
    let mut ds = dataset::load(&input)?;
    dataset::redecompose(&mut ds, f.seed)?;
    let n = ds.trajectories.len();
    let mean_d: f64 =
        ds.trajectories.iter().map(|t| t.cutting_point as f64).sum::<f64>() / n.max(1) as f64;
    dataset::save(&ds, &out)?;
    Ok(format!("RESULT trajectories={n} mean_cut={mean_d:.2} path={}", out.display()))
}

fn cmd_genseq(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let out = require(&f.out, "--out")?;
    let n = f.n.unwrap_or(cfg.eval.n_chains);
    let len = cfg.eval.chain_len;
    let chains = make_chains(f.seed, n, len)?;
    write_file(&out, manifest_to_string(&chains).as_bytes())?;
    Ok(format!("RESULT chains={n} len={len} path={}", out.display()))
}

fn cmd_train(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let data_path = require(&f.manifest, "--manifest")?;
    let out_dir = require(&f.out, "--out")?;
    std::fs::create_dir_all(&out_dir)?;
    let ds = dataset::load(&data_path)?;
    let outcome = trainer::train(&ds, &cfg, f.seed, Some(&out_dir))?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    lvla_core::model::save_checkpoint(&ckpt_path, &outcome.checkpoint)?;
    write_file(&out_dir.join("loss.csv"), trainer::loss_curve_csv(&outcome.curve).as_bytes())?;
    let last = outcome.curve.last().copied().unwrap_or(trainer::LossRow {
        epoch: 0,
        l_diff: f64::NAN,
        l_goal: f64::NAN,
        total: f64::NAN,
    });
    Ok(format!(
        "RESULT epochs={} final_total={:.6} final_diff={:.6} checkpoint={}",
        cfg.train.epochs,
        last.total,
        last.l_diff,
        ckpt_path.display()
    ))
}

fn rollout_config(f: &Flags, cfg: &Config, chains_len: usize, max_len: usize) -> Result<RolloutConfig, Error> {
    let mut rcfg = RolloutConfig::from_config(cfg);
    if let Some(m) = &f.mode {
        rcfg.mode = Mode::parse(m).ok_or_else(|| Error::Config(format!("unknown mode '{m}'")))?;
    }
    if let Some(p) = &f.perturb {
        rcfg.perturb = PerturbKind::parse(p)
            .ok_or_else(|| Error::Config(format!("unknown perturbation '{p}'")))?;
    }
    rcfg.n_chains = chains_len;
    rcfg.chain_len = max_len;
    Ok(rcfg)
}

fn load_chains(path: &Path) -> Result<Vec<lvla_core::taskchain::TaskChain>, Error> {
    manifest_from_string(&std::fs::read_to_string(path)?)
}

fn cmd_eval(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let ckpt_path = require(&f.checkpoint, "--checkpoint")?;
    let manifest = require(&f.manifest, "--manifest")?;
    let out_dir = require(&f.out, "--out")?;
    if !ckpt_path.exists() {
        return Err(Error::MissingCheckpoint(ckpt_path.display().to_string()));
    }
    let ckpt = load_checkpoint(&ckpt_path)?;
    let bundle = PolicyBundle::from_checkpoint(&ckpt)?;
    let chains = load_chains(&manifest)?;
    let max_len = chains.iter().map(|c| c.len()).max().unwrap_or(cfg.eval.chain_len);
    let rcfg = rollout_config(f, &cfg, chains.len(), max_len)?;
    let report = evaluate(&Actor::Model(&bundle), &chains, &rcfg, &cfg, f.seed)?;
    std::fs::create_dir_all(&out_dir)?;
    write_file(&out_dir.join("report.json"), report.to_json().as_bytes())?;
    write_file(&out_dir.join("curve.csv"), report.curve_csv().as_bytes())?;
    Ok(format!(
        "RESULT avg_len={:.3} chains={} mode={} perturb={} out={}",
        report.avg_len,
        report.n_chains,
        report.mode,
        report.perturb,
        out_dir.display()
    ))
}

fn seed_checkpoints(dir: &Path, row: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().to_string();
            if (name == format!("{row}.bin") || name.starts_with(&format!("{row}_seed")))
                && name.ends_with(".bin")
            {
                found.push(e.path());
            }
        }
    }
    found.sort();
    found
}

fn cmd_ablate(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let dir = require(&f.checkpoint, "--checkpoint")?;
    let manifest = require(&f.manifest, "--manifest")?;
    let out_dir = require(&f.out, "--out")?;
    let chains = load_chains(&manifest)?;
    let max_len = chains.iter().map(|c| c.len()).max().unwrap_or(cfg.eval.chain_len);
    let rcfg = rollout_config(f, &cfg, chains.len(), max_len)?;
    std::fs::create_dir_all(&out_dir)?;
    match f.ablation.as_deref().unwrap_or("components") {
        "components" => {
            let rows: Vec<(String, Vec<PathBuf>)> = ["base", "dec", "two_policy", "full"]
                .iter()
                .map(|r| (r.to_string(), seed_checkpoints(&dir, r)))
                .collect();
            let table = run_ablation(&rows, &chains, &rcfg, &cfg, f.seed)?;
            write_file(&out_dir.join("ablation.csv"), ablation_csv(&table).as_bytes())?;
            let full = table.iter().find(|r| r.name == "full").unwrap().avg_len;
            let base = table.iter().find(|r| r.name == "base").unwrap().avg_len;
            Ok(format!(
                "RESULT rows={} base_avg_len={:.3} full_avg_len={:.3} out={}",
                table.len(),
                base,
                full,
                out_dir.display()
            ))
        }
        "modality" => {
            let full = seed_checkpoints(&dir, "full");
            let first = full
                .first()
                .ok_or_else(|| Error::MissingCheckpoint(format!("full under {}", dir.display())))?;
            let rows = run_modality_grid(first, &chains, &rcfg, &cfg, f.seed)?;
            let mut csv = String::from("setting,avg_len\n");
            for (name, v) in &rows {
                csv.push_str(&format!("{name},{v:.3}\n"));
            }
            write_file(&out_dir.join("modality.csv"), csv.as_bytes())?;
            Ok(format!("RESULT rows={} out={}", rows.len(), out_dir.display()))
        }
        other => Err(Error::Config(format!("unknown ablation grid '{other}'"))),
    }
}

fn cmd_perturb(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let dir = require(&f.checkpoint, "--checkpoint")?;
    let manifest = require(&f.manifest, "--manifest")?;
    let out_dir = require(&f.out, "--out")?;
    let chains = load_chains(&manifest)?;
    let max_len = chains.iter().map(|c| c.len()).max().unwrap_or(cfg.eval.chain_len);
    let rcfg = rollout_config(f, &cfg, chains.len(), max_len)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut reports = Vec::new();
    for row in ["base", "full"] {
        for path in seed_checkpoints(&dir, row) {
            let ckpt = load_checkpoint(&path)?;
            let bundle = PolicyBundle::from_checkpoint(&ckpt)?;
            let rep = lvla_core::eval::perturbation_suite(
                &Actor::Model(&bundle),
                &chains,
                &rcfg,
                &cfg,
                f.seed,
            )?;
            let label = path.file_stem().unwrap().to_string_lossy().to_string();
            reports.push((label, rep));
        }
    }
    if reports.is_empty() {
        return Err(Error::MissingCheckpoint(format!(
            "no base*/full* checkpoints under {}",
            dir.display()
        )));
    }
    write_file(&out_dir.join("perturbation.csv"), perturbation_csv(&reports).as_bytes())?;
    Ok(format!("RESULT policies={} kinds=3 out={}", reports.len(), out_dir.display()))
}

fn cmd_gradcheck(f: &Flags) -> Result<String, Error> {
    let mut cfg = load_config(f)?;
    cfg.model = lvla_core::config::ModelConfig::tiny();
    let err_full = trainer::grad_check(&cfg, cfg.model.alpha, f.seed)?;
    let err_diff = trainer::grad_check(&cfg, 0.0, f.seed)?;
    let worst = err_full.max(err_diff);
    if worst < 1e-4 {
        Ok(format!(
            "RESULT max_rel_err={worst:.3e} with_goal={err_full:.3e} diff_only={err_diff:.3e}"
        ))
    } else {
        Err(Error::Numeric(format!("gradient check failed: max rel err {worst:.3e} >= 1e-4")))
    }
}

fn cmd_diagnose(f: &Flags) -> Result<String, Error> {
    let cfg = load_config(f)?;
    let ckpt_path = require(&f.checkpoint, "--checkpoint")?;
    let manifest = require(&f.manifest, "--manifest")?;
    let out_dir = require(&f.out, "--out")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let bundle = PolicyBundle::from_checkpoint(&ckpt)?;
    let chains = load_chains(&manifest)?;
    let max_len = chains.iter().map(|c| c.len()).max().unwrap_or(cfg.eval.chain_len);
    let rcfg = rollout_config(f, &cfg, chains.len(), max_len)?;
    let d = skill_chain_diagnostic(&Actor::Model(&bundle), &chains, &rcfg, &cfg, f.seed)?;
    std::fs::create_dir_all(&out_dir)?;
    let json = serde_json::to_string_pretty(&d).map_err(|e| Error::Format(format!("json: {e}")))?;
    write_file(&out_dir.join("diagnostic.json"), json.as_bytes())?;
    Ok(format!(
        "RESULT independent={:.3} continuous={:.3} gap={:.3} out={}",
        d.mean_independent,
        d.mean_continuous,
        d.gap,
        out_dir.display()
    ))
}

fn cmd_report(f: &Flags) -> Result<String, Error> {
    let dir = require(&f.out, "--out")?;
    let mut files = 0usize;
    let mut summary = String::new();
    let artifacts = [
        "report.json",
        "diagnostic.json",
        "ablation.csv",
        "modality.csv",
        "perturbation.csv",
        "loss.csv",
        "curve.csv",
    ];
    for name in artifacts {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        files += 1;
        summary.push_str(&format!("== {name}\n"));
        let text = std::fs::read_to_string(&path)?;
        if name.ends_with(".json") {
            for key in ["avg_len", "mean_independent", "mean_continuous", "gap"] {
                for line in text.lines() {
                    if line.trim_start().starts_with(&format!("\"{key}\"")) {
                        summary.push_str(&format!("  {}\n", line.trim()));
                    }
                }
            }
        } else {
            for line in text.lines().take(12) {
                summary.push_str(&format!("  {line}\n"));
            }
        }
    }
    if files == 0 {
        return Err(Error::Format(format!("no artifacts found under {}", dir.display())));
    }
    print!("{summary}");
    Ok(format!("RESULT files={files} dir={}", dir.display()))
}

fn run() -> Result<String, (u8, String)> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        return Err((1, USAGE.to_string()));
    };
    let flags = parse_flags(&args[1..]).map_err(|e| (1, format!("{e}\n\n{USAGE}")))?;
    let result = match command.as_str() {
        "collect" => cmd_collect(&flags),
        "decompose" => cmd_decompose(&flags),
        "genseq" => cmd_genseq(&flags),
        "train" => cmd_train(&flags),
        "eval" => cmd_eval(&flags),
        "ablate" => cmd_ablate(&flags),
        "perturb" => cmd_perturb(&flags),
        "gradcheck" => cmd_gradcheck(&flags),
        "diagnose" => cmd_diagnose(&flags),
        "report" => cmd_report(&flags),
        "help" | "--help" | "-h" => return Err((0, USAGE.to_string())),
        unknown => return Err((1, format!("unknown command '{unknown}'\n\n{USAGE}"))),
    };
    result.map_err(|e| (exit_code_for(&e), format!("error: {e}")))
}

fn main() -> ExitCode {
    match run() {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err((code, msg)) => {
            if code == 0 {
                println!("{msg}");
                ExitCode::SUCCESS
            } else {
                eprintln!("{msg}");
                ExitCode::from(code)
            }
        }
    }
}
