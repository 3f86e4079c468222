//! Command implementations. Every command records a stage in the output
//! directory's manifest listing the files it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use lcg_core::classifiers::{
    pairwise_correlation, train_classifier, ClassifierCheckpoint, ClassifierSet, ClassifierTrainingMeta,
    LatentClassifier,
};
use lcg_core::diffusion::{
    elbo_conditional, elbo_unconditional, sample, train_denoiser, Denoiser, DenoiserCheckpoint, NoiseSchedule, Sampler,
    TrainingMeta,
};
use lcg_core::eval::{
    acc, disentanglement_report, identity_distance, latent_fid, matrix_csv, AttributeAcc, EvalReport,
};
use lcg_core::guidance::{
    guided_sample, linear_solution, manipulate_batch, sequential_edit, sequential_linear_edit, DiffusionEditor, Editor,
    GuidanceFile, GuidanceSpec, GuidanceTerm, LinearEditor, SourceRef, SourceTerm,
};
use lcg_core::numkernel::Rng;
use lcg_core::world::{
    oracle_conditional_moments, oracle_label, read_dataset, sample_dataset, write_dataset, AttributedDataset,
    ConditionalMoments, DatasetSidecar, WorldSpec,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::manifest::{config_hash, unix_now, RunManifest, StageRecord};
use crate::plot::scatter_svg;

pub const DATASET_FILE: &str = "dataset.csv";
pub const DENOISER_FILE: &str = "denoiser.json";

pub fn classifier_file(attribute: &str) -> String {
    format!("classifier_{attribute}.json")
}

/// Resolved config plus the values every command needs.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldSpec,
    hash: String,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        let out = cfg.out_dir();
        let world = cfg.world.resolve()?;
        fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        let hash = config_hash(&cfg);
        Ok(Self {
            cfg,
            seed,
            out,
            world,
            hash,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn stage(&self, command: &str) -> Stage<'_> {
        Stage {
            ctx: self,
            command: command.into(),
            files: Vec::new(),
            streams: Vec::new(),
            metrics: BTreeMap::new(),
            start: Instant::now(),
            started_unix: unix_now(),
        }
    }

    fn dataset(&self) -> Result<AttributedDataset> {
        let path = self.path(DATASET_FILE);
        if !path.exists() {
            bail!("missing dataset {}; run `lcg genworld` first", path.display());
        }
        let ds = read_dataset(&path)?;
        if let Some(p) = &ds.provenance {
            if p.world != self.world {
                bail!(
                    "{} was generated for a different world; rerun `lcg genworld`",
                    path.display()
                );
            }
        }
        Ok(ds)
    }

    fn denoiser(&self) -> Result<(Denoiser, NoiseSchedule)> {
        let path = self.path(DENOISER_FILE);
        if !path.exists() {
            bail!("missing denoiser {}; run `lcg train diffusion` first", path.display());
        }
        let ck = DenoiserCheckpoint::load(&path)?;
        if ck.latent_dim != self.world.dim {
            bail!(
                "denoiser latent dimension {} does not match the world ({})",
                ck.latent_dim,
                self.world.dim
            );
        }
        Ok((ck.denoiser()?, NoiseSchedule::new(ck.schedule)?))
    }

    fn classifiers<'a>(&self, attributes: impl IntoIterator<Item = &'a str>) -> Result<ClassifierSet> {
        let mut set = ClassifierSet::new();
        for a in attributes {
            let path = self.path(&classifier_file(a));
            if !path.exists() {
                bail!(
                    "missing classifier {}; run `lcg train classifier:{a}` first",
                    path.display()
                );
            }
            set.insert(ClassifierCheckpoint::load(&path)?.classifier);
        }
        Ok(set)
    }

    fn moments(&self, targets: &[(String, bool)]) -> Result<ConditionalMoments> {
        Ok(oracle_conditional_moments(&self.world, targets)?)
    }
}

struct Stage<'a> {
    ctx: &'a Ctx,
    command: String,
    files: Vec<String>,
    streams: Vec<String>,
    metrics: BTreeMap<String, f64>,
    start: Instant,
    started_unix: u64,
}

impl Stage<'_> {
    fn rng(&mut self, stream: &str) -> Rng {
        self.streams.push(stream.into());
        Rng::substream(self.ctx.seed, stream)
    }

    fn note(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.ctx.out).unwrap_or(path);
        let rel = rel.to_string_lossy().into_owned();
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
    }

    fn write(&mut self, file: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.ctx.path(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.note(&path);
        Ok(path)
    }

    /// Latents with their oracle labels, in dataset format.
    fn write_latents(&mut self, file: &str, latents: &[Vec<f64>]) -> Result<()> {
        let world = &self.ctx.world;
        let labels = latents
            .iter()
            .map(|z| oracle_label(world, z))
            .collect::<lcg_core::Result<Vec<_>>>()?;
        let ds = AttributedDataset {
            attributes: world.attribute_names(),
            latents: latents.to_vec(),
            labels,
            provenance: Some(DatasetSidecar {
                world: world.clone(),
                seed: self.ctx.seed,
                n: latents.len(),
            }),
        };
        let path = self.ctx.path(file);
        let side = write_dataset(&path, &ds)?;
        self.note(&path);
        self.note(&side);
        Ok(())
    }

    fn write_report(&mut self, stem: &str, report: &EvalReport) -> Result<()> {
        for p in report.write(&self.ctx.out, stem)? {
            self.note(&p);
        }
        Ok(())
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn finish(self, name: &str) -> Result<()> {
        let rec = StageRecord {
            command: self.command,
            config_hash: self.ctx.hash.clone(),
            seed: self.ctx.seed,
            streams: self.streams,
            files: self.files,
            metrics: self.metrics,
            started_unix: self.started_unix,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
        };
        RunManifest::record(&self.ctx.out, &self.ctx.cfg, name, rec)
    }
}

fn report(
    ctx: &Ctx,
    label: &str,
    samples: &[Vec<f64>],
    targets: &[(String, bool)],
    baseline: Option<&[Vec<f64>]>,
    sources: Option<&[Vec<f64>]>,
) -> Result<EvalReport> {
    let reference = ctx.moments(targets)?;
    let fid = |xs: &[Vec<f64>]| -> Result<Option<f64>> {
        if xs.len() > ctx.world.dim {
            Ok(Some(latent_fid(xs, &reference.mean, &reference.covariance)?))
        } else {
            Ok(None)
        }
    };
    let accs = acc(&ctx.world, samples, targets)?;
    Ok(EvalReport {
        label: label.into(),
        n: samples.len(),
        seed: ctx.seed,
        unconditional_baseline: false,
        acc: accs
            .into_iter()
            .zip(targets)
            .map(|((attribute, acc), (_, target))| AttributeAcc {
                attribute,
                target: *target,
                acc,
            })
            .collect(),
        latent_fid: fid(samples)?,
        baseline_fid: baseline.map(fid).transpose()?.flatten(),
        identity: sources.map(|s| identity_distance(s, samples)).transpose()?,
    })
}

fn print_report(r: &EvalReport) {
    let accs: Vec<String> = r
        .acc
        .iter()
        .map(|a| format!("{}={}: {:.3}", a.attribute, u8::from(a.target), a.acc))
        .collect();
    let mut line = format!("{} (n = {}): ACC [{}]", r.label, r.n, accs.join(", "));
    if let Some(f) = r.latent_fid {
        let _ = write!(line, ", latent FID {f:.4}");
    }
    if let Some(f) = r.baseline_fid {
        let _ = write!(line, " (baseline {f:.4})");
    }
    if let Some(id) = &r.identity {
        let _ = write!(line, ", identity mean {:.4}", id.mean);
    }
    println!("{line}");
}

pub fn genworld(ctx: &Ctx) -> Result<()> {
    let mut st = ctx.stage("genworld");
    let mut rng = st.rng("world");
    let ds = sample_dataset(&ctx.world, ctx.cfg.dataset_size, ctx.seed, &mut rng);
    let path = ctx.path(DATASET_FILE);
    let side = write_dataset(&path, &ds).with_context(|| format!("writing {}", path.display()))?;
    st.note(&path);
    st.note(&side);
    st.metric("n", ds.len() as f64);
    println!("wrote {} latents to {}", ds.len(), path.display());
    st.finish("genworld")
}

pub enum TrainTarget {
    Diffusion,
    Classifier(String),
    Classifiers,
}

impl std::str::FromStr for TrainTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "diffusion" => Ok(TrainTarget::Diffusion),
            "classifiers" => Ok(TrainTarget::Classifiers),
            _ => match s.strip_prefix("classifier:") {
                Some(a) if !a.is_empty() && !a.contains(['/', '\\']) => Ok(TrainTarget::Classifier(a.into())),
                _ => Err(format!(
                    "unknown training target `{s}` (expected diffusion, classifier:<attr> or classifiers)"
                )),
            },
        }
    }
}

pub fn train(ctx: &Ctx, target: &TrainTarget) -> Result<()> {
    match target {
        TrainTarget::Diffusion => train_diffusion(ctx),
        TrainTarget::Classifier(a) => train_one_classifier(ctx, a),
        TrainTarget::Classifiers => {
            for c in ctx.cfg.classifier_configs(&ctx.world) {
                train_one_classifier(ctx, &c.attribute)?;
            }
            Ok(())
        }
    }
}

fn train_diffusion(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let mut st = ctx.stage("train diffusion");
    let dc = &ctx.cfg.denoiser;
    let schedule = NoiseSchedule::new(ctx.cfg.schedule)?;
    let mut rng = st.rng("train/diffusion");
    let net = Denoiser::new(ctx.world.dim, &dc.hidden, dc.activation, &mut rng)?;
    let (net, trace) = train_denoiser(&schedule, &ds, net, &dc.training, &mut rng)?;

    let mut csv = String::from("step,loss,smoothed\n");
    for (i, (r, s)) in trace.raw.iter().zip(&trace.smoothed).enumerate() {
        let _ = writeln!(csv, "{},{r},{s}", i + 1);
    }
    st.write("denoiser_loss.csv", csv)?;
    let meta = TrainingMeta {
        seed: ctx.seed,
        steps: dc.training.steps,
        batch: dc.training.batch,
        lr: dc.training.lr,
        final_loss: trace.smoothed.last().copied(),
    };
    let path = ctx.path(DENOISER_FILE);
    DenoiserCheckpoint::new(ctx.cfg.schedule, &net, meta).save(&path)?;
    st.note(&path);
    let (head, tail) = trace.head_tail_means(0.1);
    st.metric("loss_first_decile", head);
    st.metric("loss_last_decile", tail);
    println!("trained denoiser: loss {head:.4} (first decile) -> {tail:.4} (last decile)");
    st.finish("train:diffusion")
}

fn train_one_classifier(ctx: &Ctx, attribute: &str) -> Result<()> {
    let ds = ctx.dataset()?;
    let cc = ctx
        .cfg
        .classifier_configs(&ctx.world)
        .into_iter()
        .find(|c| c.attribute == attribute);
    let cc = match cc {
        Some(c) => c,
        None => {
            ctx.world.attribute_index(attribute)?;
            crate::config::ClassifierConfig {
                attribute: attribute.into(),
                kind: lcg_core::classifiers::ClassifierKind::Linear,
                training: Default::default(),
            }
        }
    };
    let mut st = ctx.stage(&format!("train classifier:{attribute}"));
    let mut rng = st.rng(&format!("train/classifier/{attribute}"));
    let (c, rep) = train_classifier(&cc.kind, &ds, attribute, &cc.training, &mut rng)?;

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in rep.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    st.write(&format!("classifier_{attribute}_loss.csv"), csv)?;
    st.metric("train_accuracy", rep.train_accuracy);
    st.metric("validation_accuracy", rep.validation_accuracy);
    println!(
        "trained classifier `{attribute}`: train accuracy {:.4}, validation accuracy {:.4}",
        rep.train_accuracy, rep.validation_accuracy
    );
    let meta = ClassifierTrainingMeta {
        seed: ctx.seed,
        settings: cc.training,
        report: rep,
    };
    let path = ctx.path(&classifier_file(attribute));
    ClassifierCheckpoint::new(c, Some(meta)).save(&path)?;
    st.note(&path);
    st.finish(&format!("train:classifier:{attribute}"))
}

fn optional_dataset(ctx: &Ctx, g: &GuidanceFile) -> Result<Option<AttributedDataset>> {
    match g.source {
        Some(SourceRef::Dataset { .. }) => ctx.dataset().map(Some),
        _ => Ok(None),
    }
}

fn term_attributes(terms: &[GuidanceTerm]) -> Vec<&str> {
    terms.iter().map(|t| t.attribute.as_str()).collect()
}

pub fn compose(ctx: &Ctx) -> Result<()> {
    let g = &ctx.cfg.guidance;
    let data = optional_dataset(ctx, g)?;
    let spec = g.to_spec(data.as_ref())?;
    let (net, schedule) = ctx.denoiser()?;
    let cs = ctx.classifiers(term_attributes(&spec.terms))?;
    let sampler = ctx.cfg.effective_sampler();
    let n = ctx.cfg.samples;
    let mut st = ctx.stage("compose");

    let guided = guided_sample(&spec, &net, &cs, &schedule, n, sampler, &mut st.rng("sample/compose"))?;
    let unconditional = sample(&schedule, &net, n, sampler, None, &mut st.rng("sample/unconditional"))?;
    let targets = spec.targets();
    let sources = spec.source.as_ref().map(|s| vec![s.latent.clone(); n]);
    let mut rep = report(
        ctx,
        "compose",
        &guided,
        &targets,
        Some(&unconditional),
        sources.as_deref(),
    )?;
    rep.unconditional_baseline = spec.is_unguided();

    st.write_latents("compose_samples.csv", &guided)?;
    st.write_latents("compose_unconditional.csv", &unconditional)?;
    st.write_report("compose_report", &rep)?;
    for a in &rep.acc {
        st.metric(format!("acc:{}={}", a.attribute, u8::from(a.target)), a.acc);
    }
    if rep.unconditional_baseline {
        println!("no active guidance terms: this run is the unconditional baseline");
    }
    print_report(&rep);
    st.finish("compose")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Linear,
    Diffusion,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Linear => "linear",
            Mode::Diffusion => "diffusion",
        }
    }
}

/// Source strength and variance for a mode, as a template source term.
fn source_template(g: &GuidanceFile) -> SourceTerm {
    SourceTerm {
        latent: Vec::new(),
        gamma: g.gamma,
        variance: g.source_variance,
    }
}

fn linear_unavailable(g: &GuidanceFile, cs: &ClassifierSet, terms: &[GuidanceTerm]) -> Option<String> {
    if !(g.gamma.last() > 0.0) {
        return Some("the final source scale is zero".into());
    }
    terms
        .iter()
        .find(|t| cs.get(&t.attribute).is_ok_and(|c| !c.is_linear()))
        .map(|t| format!("classifier `{}` is not linear", t.attribute))
}

/// Options for [`edit`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EditFlags {
    pub linear: bool,
    pub sequential: bool,
}

pub fn edit(ctx: &Ctx, flags: EditFlags) -> Result<()> {
    let g = &ctx.cfg.guidance;
    let lg = ctx.cfg.linear_guidance.as_ref().unwrap_or(g);
    let data = ctx.dataset()?;
    let sources: Vec<Vec<f64>> = match &g.source {
        Some(r) => vec![r.resolve(Some(&data))?],
        None => data.latents.iter().take(ctx.cfg.edit_sources).cloned().collect(),
    };
    if sources.is_empty() {
        bail!("no source latents to edit");
    }
    let edits: Vec<Vec<GuidanceTerm>> = if flags.sequential {
        if ctx.cfg.edits.is_empty() {
            bail!("--sequential needs a non-empty `edits` list in the config");
        }
        ctx.cfg.edits.clone()
    } else {
        vec![g.terms.clone()]
    };
    let mut attrs: Vec<&str> = edits.iter().flat_map(|e| term_attributes(e)).collect();
    attrs.extend(term_attributes(&lg.terms));
    attrs.sort_unstable();
    attrs.dedup();
    let cs = ctx.classifiers(attrs)?;
    let linear_terms: Vec<GuidanceTerm> = if flags.sequential {
        edits.concat()
    } else {
        lg.terms.clone()
    };

    let mut modes = Vec::new();
    match linear_unavailable(lg, &cs, &linear_terms) {
        None => modes.push(Mode::Linear),
        Some(why) if flags.linear => bail!("linear edit unavailable: {why}"),
        Some(why) => eprintln!("skipping linear edit: {why}"),
    }
    let diffusion = if flags.linear { None } else { Some(ctx.denoiser()?) };
    if diffusion.is_some() {
        modes.push(Mode::Diffusion);
    }

    let mut st = ctx.stage(&format!(
        "edit{}{}",
        if flags.linear { " --linear" } else { "" },
        if flags.sequential { " --sequential" } else { "" }
    ));
    let mut comparison = String::from("mode,metric,attribute,value\n");
    for mode in modes {
        let guidance = if mode == Mode::Linear { lg } else { g };
        let template = source_template(guidance);
        let terms_for = |e: &[GuidanceTerm]| -> Vec<GuidanceTerm> {
            if mode == Mode::Linear && !flags.sequential {
                lg.terms.clone()
            } else {
                e.to_vec()
            }
        };
        let specs: Vec<GuidanceSpec> = edits
            .iter()
            .map(|e| {
                let spec = GuidanceSpec {
                    terms: terms_for(e),
                    source: Some(SourceTerm {
                        latent: sources[0].clone(),
                        ..template.clone()
                    }),
                    use_unconditional_score: guidance.use_unconditional_score,
                };
                spec.validate().map(|_| spec)
            })
            .collect::<lcg_core::Result<_>>()?;
        let stream = format!("sample/edit/{}", mode.name());
        let mut rng = st.rng(&stream);

        let stages: Vec<Vec<Vec<f64>>> = match (mode, &diffusion) {
            (Mode::Linear, _) if !flags.sequential => vec![sources
                .iter()
                .map(|z| {
                    let src = SourceTerm {
                        latent: z.clone(),
                        ..template.clone()
                    };
                    linear_solution(&specs[0].terms, &src, &cs)
                })
                .collect::<lcg_core::Result<_>>()?],
            (Mode::Linear, _) => {
                let per_source = sources
                    .iter()
                    .map(|z| sequential_linear_edit(&specs, &cs, z))
                    .collect::<lcg_core::Result<Vec<_>>>()?;
                transpose(per_source)
            }
            (Mode::Diffusion, Some((net, schedule))) => {
                let t_start = ctx.cfg.effective_t_start(schedule.steps());
                let sampler = ctx.cfg.effective_sampler();
                if !flags.sequential {
                    vec![manipulate_batch(
                        &specs[0], &sources, net, &cs, schedule, t_start, sampler, &mut rng,
                    )?]
                } else {
                    let per_source = rng
                        .split(sources.len())
                        .into_par_iter()
                        .zip(sources.par_iter())
                        .map(|(mut r, z)| sequential_edit(&specs, net, &cs, schedule, z, t_start, sampler, &mut r))
                        .collect::<lcg_core::Result<Vec<_>>>()?;
                    transpose(per_source)
                }
            }
            (Mode::Diffusion, None) => unreachable!("diffusion mode needs a denoiser"),
        };

        let mut cumulative: Vec<(String, bool)> = Vec::new();
        for (k, (outputs, spec)) in stages.iter().zip(&specs).enumerate() {
            for (a, y) in spec.targets() {
                match cumulative.iter_mut().find(|(b, _)| *b == a) {
                    Some(entry) => entry.1 = y,
                    None => cumulative.push((a, y)),
                }
            }
            let stem = if flags.sequential {
                format!("edit_{}_step{}", mode.name(), k + 1)
            } else {
                format!("edit_{}", mode.name())
            };
            let rep = report(ctx, &stem, outputs, &cumulative, Some(&sources), Some(&sources))?;
            st.write_latents(&format!("{stem}.csv"), outputs)?;
            st.write_report(&format!("{stem}_report"), &rep)?;
            print_report(&rep);
            if k + 1 == stages.len() {
                for line in rep.to_csv().lines().skip(1) {
                    let _ = writeln!(comparison, "{},{line}", mode.name());
                }
                for a in &rep.acc {
                    st.metric(
                        format!("{}:acc:{}={}", mode.name(), a.attribute, u8::from(a.target)),
                        a.acc,
                    );
                }
            }
        }

        if flags.sequential && ctx.world.attributes.len() > 1 && edits.iter().all(|e| e.len() == 1) {
            let list: Vec<_> = edits.iter().map(|e| (e[0].attribute.clone(), e[0].scale)).collect();
            let linear_editor;
            let diffusion_editor;
            let editor: &dyn Editor = match (mode, &diffusion) {
                (Mode::Linear, _) => {
                    linear_editor = LinearEditor {
                        classifiers: &cs,
                        gamma: template.gamma.last() / template.variance,
                    };
                    &linear_editor
                }
                (Mode::Diffusion, Some((net, schedule))) => {
                    diffusion_editor = DiffusionEditor {
                        net,
                        classifiers: &cs,
                        schedule,
                        sampler: ctx.cfg.effective_sampler(),
                        t_start: ctx.cfg.effective_t_start(schedule.steps()),
                        gamma: template.gamma,
                    };
                    &diffusion_editor
                }
                (Mode::Diffusion, None) => unreachable!("diffusion mode needs a denoiser"),
            };
            let mut drng = st.rng(&format!("eval/disentanglement/{}", mode.name()));
            let d = disentanglement_report(&ctx.world, editor, &list, &sources, &mut drng)?;
            let stem = format!("disentanglement_{}", mode.name());
            st.write(&format!("{stem}.csv"), d.to_csv())?;
            st.write(&format!("{stem}.json"), serde_json::to_string_pretty(&d)? + "\n")?;
            st.metric(format!("{}:max_off_target", mode.name()), d.max_off_target());
            println!(
                "{} disentanglement: max off-target ACC change {:.4}, targeted ACC {:?}",
                mode.name(),
                d.max_off_target(),
                d.targeted_acc
            );
        }
    }
    st.write(
        if flags.sequential {
            "edit_sequential_comparison.csv"
        } else {
            "edit_comparison.csv"
        },
        comparison,
    )?;
    st.finish(if flags.sequential { "edit:sequential" } else { "edit" })
}

fn transpose(per_source: Vec<Vec<Vec<f64>>>) -> Vec<Vec<Vec<f64>>> {
    let k = per_source.first().map_or(0, Vec::len);
    (0..k)
        .map(|i| per_source.iter().map(|s| s[i].clone()).collect())
        .collect()
}

fn input_or(ctx: &Ctx, input: Option<&Path>, default: &str) -> PathBuf {
    input.map_or_else(|| ctx.path(default), Path::to_path_buf)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn read_samples(ctx: &Ctx, path: &Path) -> Result<AttributedDataset> {
    if !path.exists() {
        bail!("sample file {} does not exist", path.display());
    }
    let ds = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    if ds.is_empty() {
        bail!("sample file {} contains no samples", path.display());
    }
    if ds.dim() != ctx.world.dim {
        bail!(
            "sample file {} has dimension {}, the world has {}",
            path.display(),
            ds.dim(),
            ctx.world.dim
        );
    }
    Ok(ds)
}

pub fn eval(ctx: &Ctx, input: Option<&Path>) -> Result<()> {
    let path = input_or(ctx, input, "compose_samples.csv");
    let ds = read_samples(ctx, &path)?;
    let stem = stem_of(&path);
    let mut st = ctx.stage("eval");
    let targets = ctx.cfg.guidance.to_spec(None).map_or_else(
        |_| {
            ctx.cfg
                .guidance
                .terms
                .iter()
                .map(|t| (t.attribute.clone(), t.polarity.target()))
                .collect()
        },
        |s| s.targets(),
    );
    let rep = report(ctx, &stem, &ds.latents, &targets, None, None)?;
    st.write_report(&format!("eval_{stem}"), &rep)?;
    print_report(&rep);
    st.finish(&format!("eval:{stem}"))
}

/// Linear classifiers along the world's attribute normals.
fn oracle_classifiers(world: &WorldSpec) -> Vec<LatentClassifier> {
    world
        .attributes
        .iter()
        .map(|a| {
            LatentClassifier::linear(
                a.name.clone(),
                a.normal.iter().map(|x| 4.0 * x).collect(),
                4.0 * a.offset,
            )
        })
        .collect()
}

/// Trained classifiers for every attribute when all are present, otherwise
/// the oracle directions.
fn available_classifiers(ctx: &Ctx) -> Result<(Vec<LatentClassifier>, bool)> {
    let names = ctx.world.attribute_names();
    if names.iter().all(|a| ctx.path(&classifier_file(a)).exists()) {
        let set = ctx.classifiers(names.iter().map(String::as_str))?;
        Ok((set.iter().cloned().collect(), true))
    } else {
        Ok((oracle_classifiers(&ctx.world), false))
    }
}

pub fn plot(ctx: &Ctx, input: Option<&Path>) -> Result<()> {
    let path = input_or(ctx, input, DATASET_FILE);
    let ds = read_samples(ctx, &path)?;
    let stem = stem_of(&path);
    let mut st = ctx.stage("plot");
    let labels = ds
        .latents
        .iter()
        .map(|z| oracle_label(&ctx.world, z))
        .collect::<lcg_core::Result<Vec<_>>>()?;
    let svg = scatter_svg(&ds.latents, &labels, &ctx.world.attribute_names(), &stem);
    let svg_path = st.write(&format!("{stem}_scatter.svg"), svg)?;

    let (cs, trained) = available_classifiers(ctx)?;
    let linear: Vec<&LatentClassifier> = cs.iter().filter(|c| c.is_linear()).collect();
    let names: Vec<String> = linear.iter().map(|c| c.attribute.clone()).collect();
    let corr = pairwise_correlation(&linear)?;
    let cells: Vec<Vec<Option<f64>>> = corr.iter().map(|r| r.iter().copied().map(Some).collect()).collect();
    st.write("correlation.csv", matrix_csv(&names, &names, &cells))?;
    println!(
        "wrote {} and correlation.csv ({} directions)",
        svg_path.display(),
        if trained {
            "trained classifier"
        } else {
            "oracle attribute"
        }
    );
    st.finish(&format!("plot:{stem}"))
}

/// Checks that conditional minus unconditional ELBO equals the classifier
/// term, with shared randomness.
pub fn elbo_check(ctx: &Ctx) -> Result<f64> {
    let mut st = ctx.stage("elbo-check");
    let (net, schedule) = if ctx.path(DENOISER_FILE).exists() {
        ctx.denoiser()?
    } else {
        let dc = &ctx.cfg.denoiser;
        let mut rng = st.rng("train/elbo-check");
        (
            Denoiser::new(ctx.world.dim, &dc.hidden, dc.activation, &mut rng)?,
            NoiseSchedule::new(ctx.cfg.schedule)?,
        )
    };
    let targets = {
        let t: Vec<(String, bool)> = ctx
            .cfg
            .guidance
            .terms
            .iter()
            .map(|t| (t.attribute.clone(), t.polarity.target()))
            .collect();
        if t.is_empty() {
            ctx.world.attribute_names().into_iter().map(|a| (a, true)).collect()
        } else {
            t
        }
    };
    let (list, _) = available_classifiers(ctx)?;
    let cs: ClassifierSet = list.into_iter().collect();

    let mut rng = st.rng("eval/elbo-check");
    let data = ctx.path(DATASET_FILE).exists().then(|| ctx.dataset()).transpose()?;
    let latents: Vec<Vec<f64>> = (0..ctx.cfg.elbo_check.latents)
        .map(|_| match &data {
            Some(ds) if !ds.is_empty() => ds.latents[rng.below(ds.len())].clone(),
            _ => rng.gaussian_vec(ctx.world.dim),
        })
        .collect();
    let mc = ctx.cfg.elbo_check.mc.max(1);
    let mut csv = String::from("index,conditional,unconditional,classifier,residual\n");
    let mut worst = 0.0f64;
    for (i, z0) in latents.iter().enumerate() {
        let mut r = rng.split(1).pop().expect("one generator");
        let mut r2 = r.clone();
        let cond = elbo_conditional(&schedule, &net, &cs, &targets, z0, &mut r, mc)?;
        let uncond = elbo_unconditional(&schedule, &net, z0, &mut r2, mc)?;
        let residual = (cond.total - uncond.total) - cond.classifier_total();
        worst = worst.max(residual.abs());
        let _ = writeln!(
            csv,
            "{i},{},{},{},{residual}",
            cond.total,
            uncond.total,
            cond.classifier_total()
        );
    }
    st.write("elbo_check.csv", csv)?;
    st.metric("max_abs_residual", worst);
    println!(
        "elbo-check: max |(conditional - unconditional) - classifier term| = {worst:e} over {} latents",
        latents.len()
    );
    st.finish("elbo-check")?;
    Ok(worst)
}

/// Parses `ddpm` or `ddim` (η = 0) for the command line.
pub fn parse_sampler(s: &str) -> std::result::Result<Sampler, String> {
    s.parse::<Sampler>().map_err(|e| e.to_string())
}
