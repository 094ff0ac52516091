use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use shapediff::chem::{parse_sdf, write_sdf, Molecule};
use shapediff::diffusion::{make_schedule, ScheduleKind};
use shapediff::metrics::NoveltyIndex;
use shapediff::pipeline::{
    configure_threads, evaluate, generate_for, ingest, train_diff, train_shape, Checkpoint, DiffusionBundle,
    GenerateRequest, Manifest, PipelineError, RunConfig, ShapeBundle, Split, TrainState, KIND_SHAPE,
};
use shapediff::sampler::{parse_pdb_lite, RhoTable, TraceEvent};

#[derive(Parser)]
#[command(name = "shapediff", version, about = "Shape-conditioned 3D molecule generation by diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hash and split a directory of SDF files into a manifest.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the small desk-scale preset as the base configuration.
        #[arg(long)]
        toy: bool,
    },
    /// Pre-train the shape encoder.
    TrainShape {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diffusion model on top of a frozen shape encoder.
    TrainDiff {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Shape-encoder checkpoint; its configuration is the default for this run.
        #[arg(long)]
        shape: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Sample molecules for every record of a condition SDF.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        condition: PathBuf,
        #[arg(long)]
        pocket: Option<PathBuf>,
        /// Pocket clash thresholds; defaults to the bundled table.
        #[arg(long)]
        rho: Option<PathBuf>,
        #[arg(long)]
        shape_guidance: bool,
        #[arg(long)]
        pocket_guidance: bool,
        /// Samples per condition; defaults to `generate.n_samples`.
        #[arg(long)]
        n: Option<usize>,
        /// Defaults to `generate.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-sample guidance trace, one JSON object per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score generated molecules against their conditions.
    Evaluate {
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// SDF file or directory of SDF files used for novelty and geometry statistics.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Pre-built novelty index (`SDNX`).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Write the novelty index built from `--reference`.
        #[arg(long)]
        write_index: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        delta_g: f64,
        /// Write the JSON report here; the table goes to stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print a noise schedule as CSV.
    InspectSchedule {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sigmoid,
    Cosine,
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn read_sdf(path: &Path) -> Result<Vec<Molecule>, PipelineError> {
    let mols = parse_sdf(&read_text(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    if mols.is_empty() {
        return Err(PipelineError::Data(format!("{}: no molecules", path.display())));
    }
    Ok(mols)
}

/// An SDF file, or every `*.sdf` in a directory in name order.
fn read_sdf_tree(path: &Path) -> Result<Vec<Molecule>, PipelineError> {
    if !path.is_dir() {
        return read_sdf(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| PipelineError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sdf"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        match read_sdf(&f) {
            Ok(m) => out.extend(m),
            Err(e) => warn!("skipping {e}"),
        }
    }
    if out.is_empty() {
        return Err(PipelineError::Data(format!("{}: no readable SDF files", path.display())));
    }
    Ok(out)
}

fn load_config(path: Option<&Path>, toy: bool) -> Result<RunConfig, PipelineError> {
    match path {
        Some(p) => RunConfig::parse(&read_text(p)?),
        None if toy => Ok(RunConfig::toy()),
        None => Ok(RunConfig::default()),
    }
}

fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    Manifest::from_json(&read_text(path)?)
}

fn condition_name(m: &Molecule, k: usize) -> String {
    let name = m.name.trim();
    if name.is_empty() {
        format!("condition{k}")
    } else {
        name.replace(':', "_")
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    condition: &'a str,
    sample: usize,
    atoms: usize,
    events: &'a [TraceEvent],
}

#[allow(clippy::too_many_arguments)]
fn run_generate(
    model: &Path,
    condition: &Path,
    pocket: Option<&Path>,
    rho: Option<&Path>,
    shape_guidance: bool,
    pocket_guidance: bool,
    n: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    trace: Option<&Path>,
) -> Result<(), PipelineError> {
    if pocket_guidance && pocket.is_none() {
        return Err(PipelineError::Config("--pocket-guidance needs --pocket".into()));
    }
    if pocket.is_some() && !pocket_guidance {
        warn!("--pocket given without --pocket-guidance; the pocket is ignored");
    }
    let conds = read_sdf(condition)?;
    let pocket_atoms = match pocket.filter(|_| pocket_guidance) {
        Some(p) => Some(parse_pdb_lite(&read_text(p)?).map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let rho = match rho {
        Some(p) => RhoTable::parse(&read_text(p)?).map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))?,
        None => RhoTable::default(),
    };
    let bundle = DiffusionBundle::load_for_sampling(model)?;
    let n = n.unwrap_or(bundle.config.generate.n_samples);
    if n == 0 {
        return Err(PipelineError::Config("--n must be positive".into()));
    }
    let seed = seed.unwrap_or(bundle.config.generate.seed);
    let mut mols = Vec::new();
    let mut lines = String::new();
    let mut failed = 0;
    for (k, cond) in conds.iter().enumerate() {
        let name = condition_name(cond, k);
        let req = GenerateRequest {
            condition: cond,
            n,
            shape_guidance,
            pocket: pocket_atoms.as_deref(),
            rho: Some(&rho),
            seed: seed.wrapping_add(k as u64),
        };
        let res = generate_for(&bundle, &req)?;
        for (i, r) in res.results.into_iter().enumerate() {
            match r {
                Ok(g) => {
                    if trace.is_some() {
                        let line = TraceLine {
                            condition: &name,
                            sample: i,
                            atoms: g.molecule.atoms.len(),
                            events: &g.trace,
                        };
                        lines.push_str(&serde_json::to_string(&line).expect("trace serialises"));
                        lines.push('\n');
                    }
                    let mut m = g.molecule;
                    m.name = format!("{name}:{i}");
                    mols.push(m);
                }
                Err(e) => {
                    warn!("{name} sample {i}: {e}");
                    failed += 1;
                }
            }
        }
        info!("{name}: {n} samples");
    }
    if mols.is_empty() {
        return Err(PipelineError::NonFinite {
            step: 0,
            detail: format!("all {failed} samples failed"),
        });
    }
    write_text(out, &write_sdf(&mols))?;
    if let Some(t) = trace {
        write_text(t, &lines)?;
    }
    info!("wrote {} molecules to {} ({failed} failed)", mols.len(), out.display());
    Ok(())
}

/// Groups generated records by the `condition:index` names `generate` writes.
/// With a single condition every record belongs to it.
fn pair_sets(conds: Vec<Molecule>, generated: Vec<Molecule>) -> Result<Vec<(Molecule, Vec<Molecule>)>, PipelineError> {
    if conds.len() == 1 {
        return Ok(vec![(conds.into_iter().next().expect("one condition"), generated)]);
    }
    let names: Vec<String> = conds.iter().enumerate().map(|(k, c)| condition_name(c, k)).collect();
    let mut sets: Vec<(Molecule, Vec<Molecule>)> = conds.into_iter().map(|c| (c, Vec::new())).collect();
    for m in generated {
        let prefix = m.name.rsplit_once(':').map(|(p, _)| p).unwrap_or("");
        let k = names
            .iter()
            .position(|n| n == prefix)
            .ok_or_else(|| PipelineError::Data(format!("generated record {:?} matches no condition", m.name)))?;
        sets[k].1.push(m);
    }
    Ok(sets)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let threads = configure_threads()?;
    info!("{threads} worker threads");
    match cli.command {
        Command::Ingest { dir, out, config, toy } => {
            let cfg = load_config(config.as_deref(), toy)?;
            let m = ingest(&dir, cfg.data.train_fraction, cfg.shape.n_points, cfg.data.seed)?;
            for s in &m.skipped {
                warn!("skipped {}: {}", s.file, s.reason);
            }
            write_text(&out, &m.to_json())?;
            info!("{} files in manifest, {} skipped", m.entries.len(), m.skipped.len());
        }
        Command::TrainShape {
            data,
            manifest,
            config,
            toy,
            out,
        } => {
            let cfg = load_config(config.as_deref(), toy)?;
            let m = load_manifest(&manifest)?;
            let train = m.load_split(&data, Split::Train)?;
            let val = m.load_split(&data, Split::Val)?;
            let (bundle, report) = train_shape(&cfg, &train, &val)?;
            info!("shape encoder best validation {:.5} at step {}", report.best_val, report.best_step);
            bundle.to_checkpoint(&cfg).save(&out)?;
        }
        Command::TrainDiff {
            data,
            manifest,
            shape,
            config,
            out,
            resume,
        } => {
            let m = load_manifest(&manifest)?;
            let train = m.load_split(&data, Split::Train)?;
            let val = m.load_split(&data, Split::Val)?;
            let (bundle, state) = if resume {
                let ck = Checkpoint::load(&out)?;
                DiffusionBundle::from_checkpoint(&ck)?
            } else {
                let ck = Checkpoint::load(&shape)?;
                if ck.meta("kind")? != KIND_SHAPE {
                    return Err(PipelineError::Data(format!("{} is not a shape checkpoint", shape.display())));
                }
                let (se, se_cfg) = ShapeBundle::from_checkpoint(&ck)?;
                let cfg = match config {
                    Some(p) => {
                        let c = RunConfig::parse(&read_text(&p)?)?;
                        if c.shape != se_cfg.shape {
                            return Err(PipelineError::Config(format!(
                                "[shape] in {} differs from the shape checkpoint",
                                p.display()
                            )));
                        }
                        c
                    }
                    None => se_cfg,
                };
                let b = DiffusionBundle::init(&cfg, se, m.histogram.clone())?;
                let state = TrainState::fresh(&cfg.train_diff, &b.store);
                (b, state)
            };
            train_diff(bundle, state, &train, &val, Some(&out))?;
        }
        Command::Generate {
            model,
            condition,
            pocket,
            rho,
            shape_guidance,
            pocket_guidance,
            n,
            seed,
            out,
            trace,
        } => run_generate(
            &model,
            &condition,
            pocket.as_deref(),
            rho.as_deref(),
            shape_guidance,
            pocket_guidance,
            n,
            seed,
            &out,
            trace.as_deref(),
        )?,
        Command::Evaluate {
            conditions,
            generated,
            reference,
            index,
            write_index,
            delta_g,
            json,
        } => {
            if !(0.0..=1.0).contains(&delta_g) {
                return Err(PipelineError::Config(format!("--delta-g must lie in [0, 1], got {delta_g}")));
            }
            let sets = pair_sets(read_sdf(&conditions)?, read_sdf(&generated)?)?;
            let reference = reference.as_deref().map(read_sdf_tree).transpose()?;
            let index = match index {
                Some(p) => {
                    let mut f = fs::File::open(&p).map_err(|e| PipelineError::io(&p, e))?;
                    Some(NoveltyIndex::read(&mut f).map_err(|e| PipelineError::Data(format!("{}: {e}", p.display())))?)
                }
                None => None,
            };
            if let Some(p) = write_index {
                let r = reference
                    .as_deref()
                    .ok_or_else(|| PipelineError::Config("--write-index needs --reference".into()))?;
                let mut buf = Vec::new();
                NoveltyIndex::build(r).write(&mut buf).map_err(|e| PipelineError::io(&p, e))?;
                fs::write(&p, buf).map_err(|e| PipelineError::io(&p, e))?;
            }
            let report = evaluate(&sets, reference.as_deref(), index.as_ref(), delta_g)?;
            print!("{}", report.to_table());
            if let Some(p) = json {
                write_text(&p, &report.to_json())?;
            }
        }
        Command::InspectSchedule { kind, steps } => {
            let kind = match kind {
                Kind::Sigmoid => ScheduleKind::SIGMOID_DEFAULT,
                Kind::Cosine => ScheduleKind::COSINE_DEFAULT,
            };
            let table = make_schedule(kind, steps).map_err(|e| PipelineError::Config(e.to_string()))?;
            let mut s = String::from("t,beta,alpha_bar,posterior_variance\n");
            for t in 0..=steps {
                let pv = if t == 0 { 0.0 } else { table.posterior_variance(t) };
                s.push_str(&format!("{t},{},{},{}\n", table.beta[t], table.alpha_bar[t], pv));
            }
            std::io::stdout()
                .write_all(s.as_bytes())
                .map_err(|e| PipelineError::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
