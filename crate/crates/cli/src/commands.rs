use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use defa_core::augment::{factor_weights, DebiasConfig, DebiasWeights};
use defa_core::config::RunConfig;
use defa_core::domain::count_sample_frequencies;
use defa_core::encoders::TokenInit;
use defa_core::eval::{closed_world_eval, open_world_eval, select_threshold, EvalReport};
use defa_core::io::{generate_synthetic, read_feasibility, Dataset, FeasibilityMask, Manifest, Split, SyntheticSpec};
use defa_core::pipeline::{logs_to_csv, read_checkpoint, train, write_checkpoint, DefaModel};

use crate::args::{DataArgs, EvalArgs, InspectArgs, SplitArg, SynthArgs, TrainArgs, World};

pub const MANIFEST: &str = "manifest.tsv";
pub const EMBEDDINGS: &str = "embeddings.defa";
pub const CHECKPOINT: &str = "checkpoint.defc";
pub const LOG: &str = "log.csv";
pub const CONFIG: &str = "config.toml";

impl DataArgs {
    fn pick(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        match (explicit, &self.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => bail!("pass --data DIR or both --manifest and --embeddings"),
        }
    }

    fn paths(&self) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.pick(&self.manifest, MANIFEST)?,
            self.pick(&self.embeddings, EMBEDDINGS)?,
        ))
    }

    fn load(&self) -> Result<Dataset> {
        let (m, e) = self.paths()?;
        Dataset::load(&m, &e).with_context(|| format!("loading {} with {}", m.display(), e.display()))
    }

    fn manifest(&self) -> Result<Manifest> {
        let m = self.pick(&self.manifest, MANIFEST)?;
        Manifest::read(&m).with_context(|| format!("reading {}", m.display()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_attrs: a.n_attrs,
        n_objs: a.n_objs,
        d_backbone: a.dim,
        seen_frac: a.seen_frac,
        samples_per_pair: a.samples_per_pair,
        tail: a.tail,
        eval_per_pair: a.eval_per_pair,
        sigma: a.sigma,
        gamma: a.gamma,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec).context("invalid synthetic spec")?;
    create_dir(&a.out)?;
    let emb = a.out.join(EMBEDDINGS);
    let man = a.out.join(MANIFEST);
    data.embeddings.write(&emb)?;
    data.manifest.write(&man)?;

    let counts: Vec<usize> = data.train_counts.iter().map(|(_, c)| *c).collect();
    let (min, max) = (
        counts.iter().copied().min().unwrap_or(0),
        counts.iter().copied().max().unwrap_or(0),
    );
    let space = data.manifest.space(Split::Test)?;
    println!("embeddings\t{}", emb.display());
    println!("manifest\t{}", man.display());
    println!(
        "pairs\tseen {}\tunseen {}\tall {}",
        space.seen().len(),
        space.unseen().len(),
        space.n_comps()
    );
    for split in [Split::Train, Split::Val, Split::Test] {
        println!(
            "samples\t{}\t{}",
            split.as_str(),
            data.manifest.samples_in(split).count()
        );
    }
    println!(
        "train counts per seen pair\tmin {min}\tmax {max}\tratio {:.2}",
        max as f64 / min.max(1) as f64
    );
    Ok(())
}

/// Preset, then `--config`, then flags, then `--ablate`.
pub fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = RunConfig::preset(a.preset);
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c = merge_toml(c, &text).with_context(|| format!("parsing {}", path.display()))?;
    }
    a.hyper.apply(&mut c);
    if let Some(ab) = a.ablate {
        c.ablate(ab);
    }
    c.validate()?;
    Ok(c)
}

fn merge_toml(base: RunConfig, text: &str) -> Result<RunConfig> {
    let overrides: toml::Table = text.parse()?;
    let mut table = toml::Table::try_from(&base)?;
    for (k, v) in overrides {
        table.insert(k, v);
    }
    Ok(table.try_into()?)
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let data = a.data.load()?;
    let mut model = DefaModel::new(
        data.manifest.vocab.clone(),
        cfg.model_config(data.dim),
        cfg.weights(),
        cfg.seed,
        TokenInit::Uniform,
    )?;
    let outcome = train(&mut model, &data, &cfg.train_config())?;

    create_dir(&a.out)?;
    let extra = [
        ("train.seed", cfg.seed.to_string()),
        ("train.epochs", cfg.epochs.to_string()),
        ("train.lr", cfg.lr.to_string()),
        ("train.batch_size", cfg.batch_size.to_string()),
        ("train.best_epoch", outcome.best_epoch.to_string()),
    ];
    let ckpt = a.out.join(CHECKPOINT);
    write_checkpoint(&ckpt, &model, &extra)?;
    write_file(&a.out.join(LOG), &logs_to_csv(&outcome.logs))?;
    write_file(&a.out.join(CONFIG), &toml::to_string(&cfg)?)?;

    if let Some(last) = outcome.logs.last() {
        println!("final epoch {}: loss {:.6}", last.epoch, last.loss_total);
    }
    match outcome.best_val_auc {
        Some(auc) => println!("kept epoch {} (val AUC {:.1})", outcome.best_epoch, 100.0 * auc),
        None => println!("kept epoch {}", outcome.best_epoch),
    }
    println!("checkpoint\t{}", ckpt.display());
    println!("log\t{}", a.out.join(LOG).display());
    Ok(())
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let open = a.open_all || a.feasibility.is_some();
    if a.world == World::Open && !open {
        bail!("--world open needs --feasibility FILE or --open-all");
    }
    let data = a.data.load()?;
    let ckpt = read_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let model = ckpt.model;
    ensure!(
        model.vocab == data.manifest.vocab,
        "checkpoint vocabulary differs from the dataset's"
    );
    let (samples, space) = match a.split {
        SplitArg::Val => (&data.val, &data.val_space),
        SplitArg::Test => (&data.test, &data.test_space),
    };

    let mut reports: Vec<(&str, EvalReport)> = vec![("closed", closed_world_eval(&model, samples, space)?)];
    if open {
        let n = space.n_comps();
        let mask = match &a.feasibility {
            None => FeasibilityMask::all_pass(n),
            Some(path) => {
                let mask = read_feasibility(path, &model.vocab)?;
                match a.threshold {
                    Some(t) => mask.with_threshold(t),
                    None => {
                        let (t, _) = select_threshold(&model, &data.val, &data.val_space, &mask)?;
                        println!("feasibility threshold {t} (chosen on val)");
                        mask.with_threshold(t)
                    }
                }
            }
        };
        reports.push(("open", open_world_eval(&model, samples, space, &mask)?));
    }

    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    for (name, r) in &reports {
        println!("{name}\t{}", r.summary_line());
        if let Some(dir) = &a.out {
            write_file(&dir.join(format!("{name}.csv")), &r.to_csv())?;
            write_file(&dir.join(format!("{name}.txt")), &r.to_text())?;
        }
    }
    Ok(())
}

fn weight_table(out: &mut String, title: &str, rows: Vec<(String, u64, Vec<f64>)>, cols: &[&str]) {
    let mut rows = rows;
    rows.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "name\tcount\t{}", cols.join("\t"));
    for (name, count, ws) in &rows {
        let ws: Vec<String> = ws.iter().map(|w| format!("{w:.4}")).collect();
        let _ = writeln!(out, "{name}\t{count}\t{}", ws.join("\t"));
    }
    let n = rows.len().max(1) as f64;
    let means: Vec<String> = (0..cols.len())
        .map(|k| format!("{:.4}", rows.iter().map(|r| r.2[k]).sum::<f64>() / n))
        .collect();
    let _ = writeln!(out, "mean\t\t{}", means.join("\t"));
}

pub fn inspect_weights(a: &InspectArgs) -> Result<()> {
    print!("{}", inspect_text(a)?);
    Ok(())
}

pub fn inspect_text(a: &InspectArgs) -> Result<String> {
    let base = RunConfig::preset(a.preset);
    let rho = a.rho.unwrap_or(base.rho);
    let mu = a.mu.unwrap_or(base.mu);
    let cfg = DebiasConfig::new(rho, mu)?;
    let manifest = a.data.manifest()?;
    let space = manifest.space(Split::Train)?;
    let vocab = space.vocab().clone();
    let samples: Vec<_> = manifest
        .samples_in(Split::Train)
        .map(|s| defa_core::domain::Sample {
            image_id: s.image_id.clone(),
            feature: Vec::new(),
            pair: s.pair,
        })
        .collect();
    let freq = count_sample_frequencies(&samples, &space)?;
    let w = DebiasWeights::from_counts(&freq, cfg);

    let mut out = String::new();
    let _ = writeln!(out, "rho {rho}\tmu {mu}");
    let attrs = factor_weights(&freq.attr_counts, rho);
    weight_table(
        &mut out,
        "attributes",
        (0..vocab.n_attrs())
            .map(|i| (vocab.attributes()[i].clone(), freq.attr_counts[i], vec![attrs[i]]))
            .collect(),
        &["w_a"],
    );
    let objs = factor_weights(&freq.obj_counts, rho);
    weight_table(
        &mut out,
        "objects",
        (0..vocab.n_objs())
            .map(|i| (vocab.objects()[i].clone(), freq.obj_counts[i], vec![objs[i]]))
            .collect(),
        &["w_o"],
    );
    weight_table(
        &mut out,
        "compositions",
        (0..vocab.n_comps())
            .map(|c| {
                let p = vocab.pair_of(c);
                let (an, on) = vocab.pair_names(p);
                (
                    format!("{an} {on}"),
                    freq.comp_counts[c],
                    vec![w.comp[c], w.pair_weight(p)],
                )
            })
            .collect(),
        &["w_c", "w_de"],
    );
    Ok(out)
}
