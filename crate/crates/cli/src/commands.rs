use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use makeup_core::csl::{
    learn_style, planted_references, token_load_for, token_store, CslConfig, PromptTemplate, StyleToken,
    DEFAULT_TEMPLATE,
};
use makeup_core::dataprep::{
    build_pairs, list_images, read_manifest, synth_faces, BlurConfig, Demakeup, FaceParser, LabelMapParser,
    PairConfig, PrecomputedDemakeup, ToyDemakeup, ToyFaceParser,
};
use makeup_core::diffusion::{toy_backend, Container, LatentCodec, NoisePredictor, TextEncoder, ToyBackend};
use makeup_core::eval::{
    cosine_similarity_score, embed_set, frechet_distance, identity_integrity, Embedder, Report, ReportRow,
    ToyEmbedder,
};
use makeup_core::imageio::{contact_sheet, read_image_resized, write_mask_png, write_png};
use makeup_core::maip::{generate, Generation, GenerationConfig, Pipeline};
use makeup_core::mafor::{train_mafor, ControlBranch, MaForTrainConfig};
use makeup_core::optim::TrainLog;

use crate::config::{parse_enum, Resolver};
use crate::error::{CliError, CliResult};
use crate::manifest::{files_under, hash_files, manifest_for_file, sha256_file, BackendInfo, RunManifest, DIR_MANIFEST, MANIFEST_SCHEMA_VERSION};
use crate::{
    Cli, Command, EvaluateArgs, GenerateArgs, GenerationArgs, LearnStyleArgs, PrepareDataArgs, SweepArgs,
    SynthFacesArgs, SynthRefsArgs, TrainMaforArgs,
};

const LATENT_CHANNELS: usize = 4;
const DEFAULT_SIZE: usize = 64;

struct Ctx {
    argv: Vec<String>,
    cfg: Resolver,
    config_file: Option<PathBuf>,
    backend_seed: u64,
    quiet: bool,
}

impl Ctx {
    fn backend(&self) -> CliResult<ToyBackend> {
        Ok(toy_backend(self.backend_seed, LATENT_CHANNELS)?)
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write_manifest(
        &self,
        path: &Path,
        seed: Option<u64>,
        backend: Option<&ToyBackend>,
        mut inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> CliResult<()> {
        inputs.extend(self.config_file.iter().cloned());
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.argv.first().cloned().unwrap_or_default(),
            argv: self.argv.clone(),
            cwd: std::env::current_dir()?,
            seed,
            backend: backend.map(|b| BackendInfo {
                kind: "toy".into(),
                seed: self.backend_seed,
                predictor_checksum: b.predictor.checksum(),
            }),
            config: self.cfg.resolved(),
            inputs: hash_files(&inputs)?,
            outputs: hash_files(&outputs)?,
        };
        manifest.write(path)
    }
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    if let Command::Replay(a) = &cli.command {
        return replay(&a.manifest, cli.quiet);
    }
    let cfg = Resolver::from_file(cli.config.as_deref())?;
    let backend_seed = cfg.get("backend_seed", cli.backend_seed, 0u64)?;
    let ctx = Ctx {
        argv,
        cfg,
        config_file: cli.config.clone(),
        backend_seed,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::SynthFaces(a) => synth_faces_cmd(&ctx, a),
        Command::SynthRefs(a) => synth_refs_cmd(&ctx, a),
        Command::PrepareData(a) => prepare_data_cmd(&ctx, a),
        Command::TrainMafor(a) => train_mafor_cmd(&ctx, a),
        Command::LearnStyle(a) => learn_style_cmd(&ctx, a),
        Command::Generate(a) => generate_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::Replay(_) => unreachable!("handled above"),
    };
    for key in ctx.cfg.unused_keys() {
        log::warn!("config key `{key}` is not used by this command");
    }
    result
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(CliError::usage(format!("--{name} must be positive")));
    }
    Ok(v)
}

fn synth_faces_cmd(ctx: &Ctx, a: &SynthFacesArgs) -> CliResult<()> {
    let count = positive("count", ctx.cfg.get("count", a.count, 8usize)?)?;
    let seed = ctx.cfg.get("seed", a.seed, 0u64)?;
    let size = positive("size", ctx.cfg.get("size", a.size, DEFAULT_SIZE)?)?;
    let bare = ctx.cfg.switch("bare", a.bare)?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for (i, face) in synth_faces(count, seed, size).iter().enumerate() {
        let path = a.out.join(format!("face_{i:04}.png"));
        write_png(if bare { &face.naked } else { &face.makeup }, &path)?;
        outputs.push(path);
    }
    ctx.write_manifest(&a.out.join(DIR_MANIFEST), Some(seed), None, vec![], outputs)?;
    println!("wrote {count} faces to {}", a.out.display());
    Ok(())
}

fn synth_refs_cmd(ctx: &Ctx, a: &SynthRefsArgs) -> CliResult<()> {
    let count = positive("count", ctx.cfg.get("count", a.count, 4usize)?)?;
    let seed = ctx.cfg.get("seed", a.seed, 0u64)?;
    let size = positive("size", ctx.cfg.get("size", a.size, DEFAULT_SIZE)?)?;
    let be = ctx.backend()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plant: Vec<f64> = (0..be.text.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let refs = planted_references(&be.predictor, &be.text, &be.codec, &plant, count, size, seed.wrapping_add(1))?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        let path = a.out.join(format!("ref_{i:02}.png"));
        write_png(r, &path)?;
        outputs.push(path);
    }
    let plant_path = a.out.join("plant.json");
    write_json(&serde_json::json!({ "embedding": plant, "template": DEFAULT_TEMPLATE }), &plant_path)?;
    outputs.push(plant_path);
    ctx.write_manifest(&a.out.join(DIR_MANIFEST), Some(seed), Some(&be), vec![], outputs)?;
    println!("wrote {count} references to {}", a.out.display());
    Ok(())
}

fn prepare_data_cmd(ctx: &Ctx, a: &PrepareDataArgs) -> CliResult<()> {
    let size = positive("size", ctx.cfg.get("size", a.size, DEFAULT_SIZE)?)?;
    let mut blur = BlurConfig::for_resolution(size);
    blur.kernel_size = ctx.cfg.get("blur_kernel", a.blur_kernel, blur.kernel_size)?;
    blur.sigma = ctx.cfg.get("blur_sigma", a.blur_sigma, blur.sigma)?;
    blur.validate()?;
    let parser: Box<dyn FaceParser> = match &a.label_dir {
        Some(d) => {
            ctx.cfg.record("label_dir", &d);
            Box::new(LabelMapParser::new(d))
        }
        None => Box::new(ToyFaceParser::default()),
    };
    let demakeup: Box<dyn Demakeup> = match &a.demakeup_dir {
        Some(d) => {
            ctx.cfg.record("demakeup_dir", &d);
            Box::new(PrecomputedDemakeup { dir: d.clone() })
        }
        None => Box::new(ToyDemakeup::default()),
    };
    let inputs = if a.input.is_dir() {
        list_images(&a.input)?
    } else {
        return Err(CliError::input(format!("no inputs: {} is not a directory", a.input.display())));
    };
    let manifest = build_pairs(&a.input, &a.out, &PairConfig { size, blur }, parser.as_ref(), demakeup.as_ref())?;
    let skipped: Vec<_> = manifest.skipped().map(|r| r.source_id().to_string()).collect();
    let outputs = files_under(&a.out)?;
    ctx.write_manifest(&a.out.join(DIR_MANIFEST), None, None, inputs, outputs)?;
    println!(
        "{} pairs written, {} skipped{} -> {}",
        manifest.ok_count(),
        skipped.len(),
        if skipped.is_empty() {
            String::new()
        } else {
            format!(" ({})", skipped.join(", "))
        },
        a.out.display()
    );
    Ok(())
}

fn preset_name(ctx: &Ctx, flag: &Option<String>) -> CliResult<String> {
    let p = ctx.cfg.get("preset", flag.clone(), "full".to_string())?;
    if p != "full" && p != "toy" {
        return Err(CliError::usage(format!("unknown preset `{p}` (expected full or toy)")));
    }
    Ok(p)
}

fn report_log(ctx: &Ctx, what: &str, log: &TrainLog) {
    if let (Some(first), Some(last)) = (log.first_decile_mean(), log.last_decile_mean()) {
        ctx.progress(format!(
            "{what}: {} updates, loss first decile {first:.5}, last decile {last:.5}",
            log.losses.len()
        ));
    }
}

fn train_mafor_cmd(ctx: &Ctx, a: &TrainMaforArgs) -> CliResult<()> {
    let mut cfg = if preset_name(ctx, &a.preset)? == "toy" {
        MaForTrainConfig::toy()
    } else {
        MaForTrainConfig::default()
    };
    cfg.total_steps = ctx.cfg.get("steps", a.steps, cfg.total_steps)?;
    cfg.learning_rate = ctx.cfg.get("lr", a.lr, cfg.learning_rate)?;
    cfg.grad_accum = ctx.cfg.get("accum", a.accum, cfg.grad_accum)?;
    cfg.batch_size = ctx.cfg.get("batch", a.batch, cfg.batch_size)?;
    cfg.optimizer = parse_enum(&ctx.cfg.get("optimizer", a.optimizer.clone(), enum_name(&cfg.optimizer))?, "optimizer")?;
    cfg.seed = ctx.cfg.get("seed", a.seed, cfg.seed)?;
    cfg.validate()?;

    let pm = read_manifest(&a.pairs)?;
    let pairs = pm.load_pairs()?;
    if pairs.is_empty() {
        return Err(CliError::input(format!("no inputs: {} lists no usable pairs", a.pairs.display())));
    }
    let inputs = files_under(&pm.root)?;
    let be = ctx.backend()?;
    let mut branch = ControlBranch::new(&be.predictor, be.codec.resolution_factor(), cfg.seed)?;
    let every = (cfg.total_steps / 10).max(1);
    let log = train_mafor(&be.predictor, &be.text, &be.codec, &mut branch, &pairs, &cfg, |step, loss| {
        if (step + 1) % every == 0 {
            ctx.progress(format!("step {}/{}: loss {loss:.5}", step + 1, cfg.total_steps));
        }
    })?;
    ensure_parent(&a.out)?;
    branch.to_container().write(&a.out)?;
    let loss_path = sibling(&a.out, "_loss.json");
    write_json(&log, &loss_path)?;
    report_log(ctx, "control branch", &log);
    ctx.write_manifest(&manifest_for_file(&a.out), Some(cfg.seed), Some(&be), inputs, vec![a.out.clone(), loss_path])?;
    println!("wrote control branch to {}", a.out.display());
    Ok(())
}

fn learn_style_cmd(ctx: &Ctx, a: &LearnStyleArgs) -> CliResult<()> {
    let mut cfg = if preset_name(ctx, &a.preset)? == "toy" {
        CslConfig::toy()
    } else {
        CslConfig::default()
    };
    cfg.total_steps = ctx.cfg.get("steps", a.steps, cfg.total_steps)?;
    cfg.learning_rate = ctx.cfg.get("lr", a.lr, cfg.learning_rate)?;
    cfg.batch_size = ctx.cfg.get("batch", a.batch, cfg.batch_size)?;
    cfg.optimizer = parse_enum(&ctx.cfg.get("optimizer", a.optimizer.clone(), enum_name(&cfg.optimizer))?, "optimizer")?;
    cfg.timestep_sampling = parse_enum(
        &ctx.cfg.get("timesteps", a.timesteps.clone(), enum_name(&cfg.timestep_sampling))?,
        "timestep sampling",
    )?;
    cfg.init_word = ctx.cfg.get("init_word", a.init_word.clone(), cfg.init_word.clone())?;
    cfg.flip_augment = ctx.cfg.switch("flip", a.flip)? || cfg.flip_augment;
    cfg.seed = ctx.cfg.get("seed", a.seed, cfg.seed)?;
    cfg.validate()?;
    let template = PromptTemplate::new(&ctx.cfg.get("template", a.template.clone(), DEFAULT_TEMPLATE.to_string())?)?;
    let size = positive("size", ctx.cfg.get("size", a.size, DEFAULT_SIZE)?)?;

    let paths = list_images(&a.refs)?;
    if paths.is_empty() {
        return Err(CliError::input(format!("no inputs: no reference images in {}", a.refs.display())));
    }
    let refs = paths
        .iter()
        .map(|p| read_image_resized(p, size))
        .collect::<makeup_core::Result<Vec<_>>>()?;
    let be = ctx.backend()?;
    let every = (cfg.total_steps / 10).max(1);
    let (token, log) = learn_style(&be.predictor, &be.text, &be.codec, &refs, &template, &cfg, |step, loss| {
        if (step + 1) % every == 0 {
            ctx.progress(format!("step {}/{}: loss {loss:.5}", step + 1, cfg.total_steps));
        }
    })?;
    ensure_parent(&a.out)?;
    token_store(&token, &a.out)?;
    let loss_path = sibling(&a.out, "_loss.json");
    write_json(&log, &loss_path)?;
    report_log(ctx, "style token", &log);
    ctx.write_manifest(&manifest_for_file(&a.out), Some(cfg.seed), Some(&be), paths, vec![a.out.clone(), loss_path])?;
    println!("wrote style token to {}", a.out.display());
    Ok(())
}

struct GenSetup {
    be: ToyBackend,
    branch: Option<ControlBranch>,
    token: Option<StyleToken>,
    template: PromptTemplate,
    face: makeup_core::ImageGrid,
    config: GenerationConfig,
    inputs: Vec<PathBuf>,
}

impl GenSetup {
    fn run(&self, config: &GenerationConfig) -> CliResult<Generation> {
        let parser = ToyFaceParser::default();
        let pipe = Pipeline {
            base: &self.be.predictor,
            branch: self.branch.as_ref(),
            text: &self.be.text,
            codec: &self.be.codec,
            parser: &parser,
        };
        Ok(generate(pipe, &self.face, self.token.as_ref(), &self.template, config, false)?)
    }
}

fn setup_generation(ctx: &Ctx, a: &GenerationArgs) -> CliResult<GenSetup> {
    let defaults = GenerationConfig::default();
    let config = GenerationConfig {
        guidance_scale: ctx.cfg.get("guidance_scale", a.guidance, defaults.guidance_scale)?,
        num_inference_steps: ctx.cfg.get("steps", a.steps, defaults.num_inference_steps)?,
        seed: ctx.cfg.get("seed", a.seed, defaults.seed)?,
        sampler: parse_enum(&ctx.cfg.get("sampler", a.sampler.clone(), enum_name(&defaults.sampler))?, "sampler")?,
        use_final_blend: !ctx.cfg.switch("no_final_blend", a.no_final_blend)?,
        use_mask_merge: !ctx.cfg.switch("no_mask_merge", a.no_mask_merge)?,
        use_control: !ctx.cfg.switch("no_control", a.no_control)?,
        use_style: !ctx.cfg.switch("no_style", a.no_style)?,
        blur: None,
    };
    config.validate_exposed_range()?;
    let template = PromptTemplate::new(&ctx.cfg.get("template", a.template.clone(), DEFAULT_TEMPLATE.to_string())?)?;
    let size = positive("size", ctx.cfg.get("size", a.size, DEFAULT_SIZE)?)?;
    let be = ctx.backend()?;
    let face = read_image_resized(&a.face, size)?;
    let mut inputs = vec![a.face.clone()];
    let token = if config.use_style {
        let path = a
            .style
            .as_ref()
            .ok_or_else(|| CliError::usage("--style is required unless --no-style is given"))?;
        inputs.push(path.clone());
        Some(token_load_for(path, &be.text)?)
    } else {
        None
    };
    let branch = if config.use_control {
        let path = a
            .branch
            .as_ref()
            .ok_or_else(|| CliError::usage("--branch is required unless --no-control is given"))?;
        inputs.push(path.clone());
        Some(ControlBranch::from_container(&Container::read(path)?, &be.predictor)?)
    } else {
        None
    };
    Ok(GenSetup {
        be,
        branch,
        token,
        template,
        face,
        config,
        inputs,
    })
}

fn generate_cmd(ctx: &Ctx, a: &GenerateArgs) -> CliResult<()> {
    let setup = setup_generation(ctx, &a.gen)?;
    let extras = ctx.cfg.switch("extras", a.extras)?;
    let g = setup.run(&setup.config)?;
    ensure_parent(&a.out)?;
    write_png(&g.final_image, &a.out)?;
    let diag_path = sibling(&a.out, ".diagnostics.json");
    write_json(&g.diagnostics, &diag_path)?;
    let mut outputs = vec![a.out.clone(), diag_path];
    if extras {
        let raw = sibling(&a.out, "_raw.png");
        write_png(&g.generated, &raw)?;
        let mask = sibling(&a.out, "_mask.png");
        write_mask_png(&g.mask, &mask)?;
        outputs.extend([raw, mask]);
    }
    let integrity = identity_integrity(&g.final_image, &setup.face, &g.mask)?;
    ctx.write_manifest(
        &manifest_for_file(&a.out),
        Some(setup.config.seed),
        Some(&setup.be),
        setup.inputs.clone(),
        outputs,
    )?;
    println!(
        "wrote {} (outside-mask MAD {:.6}, inside-mask MAD {:.6})",
        a.out.display(),
        integrity.outside.mad,
        integrity.inside.mad
    );
    Ok(())
}

fn sweep_cmd(ctx: &Ctx, a: &SweepArgs) -> CliResult<()> {
    let setup = setup_generation(ctx, &a.gen)?;
    ctx.cfg.record("param", &a.param);
    let configs = a
        .values
        .iter()
        .map(|raw| {
            let raw = raw.trim();
            let bad = |_| CliError::usage(format!("invalid {} value `{raw}`", a.param));
            let mut c = setup.config.clone();
            match a.param.as_str() {
                "guidance" => c.guidance_scale = raw.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "steps" => c.num_inference_steps = raw.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                "seed" => c.seed = raw.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                other => {
                    return Err(CliError::usage(format!(
                        "unknown sweep parameter `{other}` (expected guidance, steps or seed)"
                    )))
                }
            }
            c.validate_exposed_range()?;
            Ok((raw.to_string(), c))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if configs.is_empty() {
        return Err(CliError::usage("--values needs at least one value"));
    }
    ctx.cfg.record("sweep", &configs.iter().map(|(_, c)| c).collect::<Vec<_>>());
    let results = configs
        .par_iter()
        .map(|(_, c)| setup.run(c))
        .collect::<CliResult<Vec<_>>>()?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for ((raw, _), g) in configs.iter().zip(&results) {
        let path = a.out.join(format!("{}_{}.png", a.param, raw.replace(['/', '\\'], "_")));
        write_png(&g.final_image, &path)?;
        outputs.push(path);
    }
    let images: Vec<_> = results.iter().map(|g| g.final_image.clone()).collect();
    let sheet = contact_sheet(&images, images.len()).expect("at least one image");
    let sheet_path = a.out.join("sheet.png");
    write_png(&sheet, &sheet_path)?;
    outputs.push(sheet_path);
    ctx.write_manifest(
        &a.out.join(DIR_MANIFEST),
        Some(setup.config.seed),
        Some(&setup.be),
        setup.inputs.clone(),
        outputs,
    )?;
    println!("wrote {} outputs and sheet.png to {}", results.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx, a: &EvaluateArgs) -> CliResult<()> {
    let embedder = ctx.cfg.get("embedder", a.embedder.clone(), "toy".to_string())?;
    if embedder != "toy" {
        return Err(CliError::usage(format!("unknown embedder `{embedder}` (available: toy)")));
    }
    let aggregate = parse_enum(&ctx.cfg.get("aggregate", a.aggregate.clone(), "mean".to_string())?, "aggregate")?;
    let method = ctx.cfg.get("method", a.method.clone(), "ours".to_string())?;
    let default_style = a
        .reference
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("style")
        .to_string();
    let style = ctx.cfg.get("style_name", a.style_name.clone(), default_style)?;
    let generated = list_images(&a.generated)?;
    let reference = list_images(&a.reference)?;
    for (what, set) in [("generated", &generated), ("reference", &reference)] {
        if set.len() < 2 {
            return Err(CliError::input(format!(
                "no inputs: {what} set needs at least 2 images, found {}",
                set.len()
            )));
        }
    }
    let style_embedder = ToyEmbedder::default();
    let perceptual_embedder = ToyEmbedder::new(4, 16)?;
    let gen_style = embed_set(&generated, &style_embedder)?;
    let ref_style = embed_set(&reference, &style_embedder)?;
    let gen_perc = embed_set(&generated, &perceptual_embedder)?;
    let ref_perc = embed_set(&reference, &perceptual_embedder)?;
    let row = ReportRow {
        method,
        style,
        style_similarity: cosine_similarity_score(&gen_style, &ref_style, aggregate)?,
        perceptual_similarity: cosine_similarity_score(&gen_perc, &ref_perc, aggregate)?,
        fid: frechet_distance(&gen_style, &ref_style)?,
    };
    let report = Report::new(style_embedder.id(), perceptual_embedder.id(), vec![row]);
    std::fs::create_dir_all(&a.out)?;
    let csv_path = a.out.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()?)?;
    let json_path = a.out.join("report.json");
    std::fs::write(&json_path, report.to_json()? + "\n")?;
    let gen_feat = a.out.join("generated.mkfs");
    gen_style.save(&gen_feat)?;
    let ref_feat = a.out.join("reference.mkfs");
    ref_style.save(&ref_feat)?;
    let mut inputs = generated;
    inputs.extend(reference);
    ctx.write_manifest(
        &a.out.join(DIR_MANIFEST),
        None,
        None,
        inputs,
        vec![csv_path, json_path, gen_feat, ref_feat],
    )?;
    print!("{}", report.to_text());
    Ok(())
}

fn replay(path: &Path, quiet: bool) -> CliResult<()> {
    let path = std::fs::canonicalize(path)
        .map_err(|e| CliError::input(format!("cannot read manifest {}: {e}", path.display())))?;
    let m = RunManifest::read(&path)?;
    let original_cwd = std::env::current_dir()?;
    std::env::set_current_dir(&m.cwd)
        .map_err(|e| CliError::input(format!("recorded working directory {}: {e}", m.cwd.display())))?;
    let result = (|| {
        for input in &m.inputs {
            if sha256_file(&input.path)? != input.sha256 {
                return Err(CliError::input(format!(
                    "input {} changed since the recorded run",
                    input.path.display()
                )));
            }
        }
        let mut argv = vec!["makeup".to_string()];
        argv.extend(m.argv.iter().cloned());
        if quiet && !argv.iter().any(|a| a == "-q" || a == "--quiet") {
            argv.push("--quiet".into());
        }
        crate::run(argv)?;
        let mut mismatched = Vec::new();
        for out in &m.outputs {
            if sha256_file(&out.path)? != out.sha256 {
                mismatched.push(out.path.display().to_string());
            }
        }
        if !mismatched.is_empty() {
            return Err(CliError::runtime(format!(
                "replay produced different outputs: {}",
                mismatched.join(", ")
            )));
        }
        Ok(())
    })();
    std::env::set_current_dir(original_cwd)?;
    result?;
    println!("replay ok: {} outputs identical", m.outputs.len());
    Ok(())
}
