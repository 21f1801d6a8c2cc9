use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use llsh_core::baselines::{self, CostInputs};
use llsh_core::data::{self, generate_synthetic, Dataset};
use llsh_core::evaluation::{macro_auc_detailed, micro_auc, LabeledVideo};
use llsh_core::scoring::finish_series;
use llsh_core::theory;
use llsh_core::training::{train, PairSampler, PairSource};
use llsh_core::{EncoderConfig, FingerprintCheck, HashEncoder, HashIndex, QueryConfig, Scorer, SynthConfig};
use rayon::prelude::*;

use crate::args::*;
use crate::record::RunRecord;
use crate::settings::Settings;
use crate::UsageError;

pub struct Ctx {
    pub settings: Settings,
    pub record: RunRecord,
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn percent(auc: f64) -> String {
    format!("{:.1}%", 100.0 * auc)
}

pub fn run(ctx: &mut Ctx, command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => synth(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Index(a) => index(ctx, a),
        Command::Score(a) => score(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Baseline(BaselineCommand::Knn(a)) => knn(ctx, a),
        Command::Baseline(BaselineCommand::Kmeans(a)) => kmeans(ctx, a),
        Command::Cost(a) => cost(ctx, a),
        Command::Theory(TheoryCommand::Curve(a)) => curve(ctx, a),
        Command::Theory(TheoryCommand::Mc(a)) => mc(ctx, a),
        Command::Stats(a) => stats(ctx, a),
    }
}

fn synth(ctx: &mut Ctx, a: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = if a.preset == "default" {
        ctx.settings.synth.clone()
    } else {
        SynthConfig {
            seed: ctx.settings.seed,
            ..SynthConfig::preset(&a.preset)?
        }
    };
    cfg.seed = ctx.settings.seed;
    let out = generate_synthetic(&cfg, &a.out)?;
    ctx.record.output("train_manifest", &out.train_manifest);
    ctx.record.output("test_manifest", &out.test_manifest);
    ctx.record.result("synth", &cfg);
    println!(
        "wrote {} and {}",
        out.train_manifest.display(),
        out.test_manifest.display()
    );
    Ok(())
}

fn dataset_dim(ds: &Dataset, what: &Path) -> anyhow::Result<usize> {
    match ds.dim() {
        Some(d) if ds.num_records() > 0 => Ok(d),
        _ => bail!(llsh_core::Error::Empty(format!("{} has no feature records", what.display()))),
    }
}

fn encoder_config(settings: &Settings, d: usize, shape: &EncoderShape) -> EncoderConfig {
    EncoderConfig::new(
        d,
        shape.code_len.unwrap_or(settings.encoder.code_len),
        shape.tables.unwrap_or(settings.encoder.num_tables),
    )
    .with_seed(settings.seed)
    .with_normalize_input(settings.encoder.normalize_input)
}

fn load_encoder(ctx: &mut Ctx, path: &Path, role: &str) -> anyhow::Result<HashEncoder> {
    let e = HashEncoder::load(path)?;
    ctx.record.fingerprint(role, e.fingerprint());
    Ok(e)
}

fn train_cmd(ctx: &mut Ctx, a: &TrainArgs) -> anyhow::Result<()> {
    let s = &mut ctx.settings;
    let t = &mut s.train;
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.iterations = a.iterations.unwrap_or(t.iterations);
    t.queue_len = a.queue_len.unwrap_or(t.queue_len);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.temperature = a.temperature.unwrap_or(t.temperature);
    t.momentum = a.momentum.unwrap_or(t.momentum);
    t.validate().map_err(|e| UsageError(e.to_string()))?;
    let config = *t;

    let ds = Dataset::load(&a.train)?;
    let d = dataset_dim(&ds, &a.train)?;
    let init = match &a.init {
        Some(p) => load_encoder(ctx, p, "init")?,
        None => {
            let e = HashEncoder::init_random(encoder_config(&ctx.settings, d, &a.shape))?;
            ctx.record.fingerprint("init", e.fingerprint());
            e
        }
    };
    let timed = ds.videos.iter().all(|v| v.features.spans().is_some());
    let source = match (a.pairs, timed) {
        (PairMode::Temporal, false) => bail!(llsh_core::Error::Empty(
            "temporal pairs need frame spans in every training feature file".into()
        )),
        (PairMode::Temporal | PairMode::Auto, true) => PairSource::Temporal {
            videos: ds.timed_sequences()?,
            max_offset: config.max_offset,
        },
        _ => PairSource::Jitter {
            features: ds.videos.into_iter().flat_map(|v| v.features.into_features()).collect(),
            sigma: config.pair_jitter,
        },
    };
    let sampler = PairSampler::new(source)?;
    log::info!(
        "training r={} b={} for {} steps (batch {}, queue {}, lr {})",
        init.config().code_len,
        init.config().num_tables,
        config.iterations,
        config.batch_size,
        config.queue_len,
        config.learning_rate
    );
    let outcome = train(&init, &sampler, config)?;
    outcome.encoder.save(&a.out)?;
    ctx.record.fingerprint("encoder", outcome.encoder.fingerprint());
    ctx.record.output("encoder", &a.out);
    if let Some(p) = &a.loss_log {
        let mut text = String::from("step,loss\n");
        for (i, l) in outcome.losses.iter().enumerate() {
            writeln!(text, "{i},{l}").unwrap();
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        ctx.record.output("loss_log", p);
    }
    ctx.record.result("losses", &outcome.losses);
    match (outcome.losses.first(), outcome.losses.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps, loss {first:.4} -> {last:.4}; encoder {:016x} written to {}",
            outcome.losses.len(),
            outcome.encoder.fingerprint(),
            a.out.display()
        ),
        _ => println!("0 steps; initial encoder written to {}", a.out.display()),
    }
    Ok(())
}

fn index(ctx: &mut Ctx, a: &IndexArgs) -> anyhow::Result<()> {
    let variant = a.variant.unwrap_or(ctx.settings.variant);
    ctx.settings.variant = variant;
    let ds = Dataset::load(&a.train)?;
    let d = dataset_dim(&ds, &a.train)?;
    let encoder = if a.init_random {
        let e = HashEncoder::init_random(encoder_config(&ctx.settings, d, &a.shape))?;
        e.save(&a.encoder)?;
        ctx.record.output("encoder", &a.encoder);
        ctx.record.fingerprint("encoder", e.fingerprint());
        e
    } else {
        if a.shape.code_len.is_some() || a.shape.tables.is_some() {
            log::warn!("--code-len/--tables only apply with --init-random; using the encoder's shape");
        }
        load_encoder(ctx, &a.encoder, "encoder")?
    };
    let features = ds.all_features();
    let index = HashIndex::build(&encoder, &features, variant)?;
    index.save(&a.out)?;
    ctx.record.fingerprint("index", index.encoder_fingerprint());
    ctx.record.output("index", &a.out);
    let stats = index.stats();
    ctx.record.result("stats", &stats);
    let buckets: usize = stats.tables.iter().map(|t| t.buckets).sum();
    println!(
        "indexed {} features into {} tables ({} buckets, {variant}); written to {}",
        stats.total,
        stats.num_tables,
        buckets,
        a.out.display()
    );
    Ok(())
}

fn query_config(settings: &mut Settings, series: &SeriesArgs) -> anyhow::Result<QueryConfig> {
    let q = &mut settings.query;
    if let Some(s) = series.sigma {
        q.smooth_sigma = s;
    }
    if series.minmax {
        q.per_video_minmax = true;
    }
    if let Some(m) = series.metric {
        q.distance = m;
    }
    q.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(*q)
}

/// Frame-level series for every test video from a per-feature scorer, one CSV each.
fn write_series<S>(ctx: &mut Ctx, test: &Dataset, query: &QueryConfig, out_dir: &Path, scorer: S) -> anyhow::Result<()>
where
    S: Fn(&[f32]) -> llsh_core::Result<f64> + Sync,
{
    create_dir(out_dir)?;
    for v in &test.videos {
        let raw: Vec<f64> = v
            .features
            .features()
            .par_iter()
            .map(|x| scorer(x))
            .collect::<llsh_core::Result<_>>()?;
        let series = finish_series(&raw, &v.spans()?, v.frame_count as usize, query)
            .with_context(|| format!("video {}", v.id))?;
        data::save_scores(out_dir.join(format!("{}.csv", v.id)), &series)?;
    }
    ctx.record.output("scores_dir", out_dir);
    println!("scored {} videos into {}", test.videos.len(), out_dir.display());
    Ok(())
}

fn score(ctx: &mut Ctx, a: &ScoreArgs) -> anyhow::Result<()> {
    let mut query = query_config(&mut ctx.settings, &a.series)?;
    if a.sentinel.is_some() {
        query.sentinel = a.sentinel;
        ctx.settings.query.sentinel = a.sentinel;
    }
    let encoder = load_encoder(ctx, &a.encoder, "encoder")?;
    let check = match a.fingerprint {
        FingerprintMode::Strict => FingerprintCheck::Strict(encoder.fingerprint()),
        FingerprintMode::Warn => FingerprintCheck::Warn(encoder.fingerprint()),
        FingerprintMode::Skip => FingerprintCheck::Skip,
    };
    let index = HashIndex::load(&a.index, check)?;
    ctx.record.fingerprint("index", index.encoder_fingerprint());
    let test = Dataset::load(&a.test)?;
    let scorer = Scorer::new(&index, &encoder, query)?;
    write_series(ctx, &test, &query, &a.out_dir, |y| scorer.score(y))
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> anyhow::Result<()> {
    let scores_for = |id: &str| data::load_scores(a.scores_dir.join(format!("{id}.csv")));
    let mut run = Vec::new();
    if let Some(test) = &a.test {
        let ds = Dataset::load(test)?;
        for v in ds.videos {
            let scores = scores_for(&v.id)?;
            let labels = v.labels.expect("test manifests carry labels");
            run.push(LabeledVideo::new(v.id, scores, labels)?);
        }
    } else {
        let dir = a.labels_dir.as_ref().expect("clap requires one label source");
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "csv"));
        files.sort();
        if files.is_empty() {
            bail!(llsh_core::Error::Empty(format!("no label CSVs in {}", dir.display())));
        }
        for f in files {
            let id = f.file_stem().unwrap().to_string_lossy().into_owned();
            let scores = scores_for(&id)?;
            let labels = data::load_labels(&f, scores.len() as u64)?;
            run.push(LabeledVideo::new(id, scores, labels)?);
        }
    }
    if matches!(a.protocol, Protocol::Micro | Protocol::Both) {
        let auc = micro_auc(&run)?;
        ctx.record.result("micro_auc", auc);
        println!("micro AUC: {}", percent(auc));
    }
    if matches!(a.protocol, Protocol::Macro | Protocol::Both) {
        let m = macro_auc_detailed(&run)?;
        ctx.record.result("macro_auc", m.auc);
        ctx.record.result("per_video_auc", &m.per_video);
        ctx.record.result("skipped_videos", &m.skipped);
        println!("macro AUC: {}", percent(m.auc));
        if !m.skipped.is_empty() {
            println!("  ({} single-class videos excluded)", m.skipped.len());
        }
    }
    Ok(())
}

fn knn(ctx: &mut Ctx, a: &KnnArgs) -> anyhow::Result<()> {
    let k = a.k.unwrap_or(ctx.settings.baseline.knn_k);
    ctx.settings.baseline.knn_k = k;
    let query = query_config(&mut ctx.settings, &a.data.series)?;
    let train = Dataset::load(&a.data.train)?;
    let test = Dataset::load(&a.data.test)?;
    let features = train.all_features();
    if k == 0 || k > features.len() {
        bail!(UsageError(format!("-k {k} must lie in 1..={}", features.len())));
    }
    write_series(ctx, &test, &query, &a.data.out_dir, |y| {
        baselines::knn_score(&features, y, k, query.distance)
    })
}

fn kmeans(ctx: &mut Ctx, a: &KmeansArgs) -> anyhow::Result<()> {
    let b = &mut ctx.settings.baseline;
    b.kmeans_k = a.k.unwrap_or(b.kmeans_k);
    b.kmeans_iterations = a.iterations.unwrap_or(b.kmeans_iterations);
    let (k, iters) = (b.kmeans_k, b.kmeans_iterations);
    let query = query_config(&mut ctx.settings, &a.data.series)?;
    let train = Dataset::load(&a.data.train)?;
    let test = Dataset::load(&a.data.test)?;
    let features = train.all_features();
    if k == 0 || k > features.len() || iters == 0 {
        bail!(UsageError(format!(
            "-k {k} must lie in 1..={} and --iterations must be positive",
            features.len()
        )));
    }
    let model = baselines::kmeans_fit(&features, k, iters, ctx.settings.seed)?;
    log::info!("k-means converged after {} iterations", model.iterations);
    ctx.record.result("kmeans_iterations", model.iterations);
    ctx.record.result("inertia", &model.inertia);
    write_series(ctx, &test, &query, &a.data.out_dir, |y| {
        baselines::kmeans_score(&model.centers, y, query.distance)
    })
}

fn cost(ctx: &mut Ctx, a: &CostArgs) -> anyhow::Result<()> {
    if a.paper_table {
        let rows = baselines::paper_table()?;
        for row in &rows {
            println!("{row}");
        }
        ctx.record.result("rows", &rows);
        return Ok(());
    }
    let method = a.method.expect("clap requires --method");
    let inputs = CostInputs::parse(a.params.as_deref().unwrap_or("")).map_err(|e| UsageError(e.to_string()))?;
    let count = baselines::cost(method, &inputs).map_err(|e| UsageError(e.to_string()))?;
    ctx.record.result("multiplications", count.to_string());
    println!("{count} multiplications ({})", baselines::format_count(count));
    Ok(())
}

fn curve(ctx: &mut Ctx, a: &CurveArgs) -> anyhow::Result<()> {
    let threshold = theory::similarity_threshold(a.r, a.b).map_err(|e| UsageError(e.to_string()))?;
    let steepest = theory::steepest_similarity(a.r, a.b, a.points.max(2))?;
    ctx.record.result("threshold", threshold);
    ctx.record.result("steepest", steepest);
    println!(
        "r={} b={}: threshold (1/b)^(1/r) = {threshold:.4}, steepest rise at s = {steepest:.4}",
        a.r, a.b
    );
    if let Some(out) = &a.out {
        let csv = theory::curves_csv(&[(a.r, a.b)], a.points)?;
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        ctx.record.output("curve", out);
    }
    Ok(())
}

fn mc(ctx: &mut Ctx, a: &McArgs) -> anyhow::Result<()> {
    let alpha = match (a.alpha, a.similarity) {
        (Some(alpha), _) => alpha,
        (None, Some(s)) if (0.0..=1.0).contains(&s) => theory::angle_from_similarity(s),
        (None, s) => bail!(UsageError(format!("similarity must lie in [0,1], got {s:?}"))),
    };
    let res = theory::monte_carlo_collision(alpha, a.r, a.b, a.d, a.trials, ctx.settings.seed)
        .map_err(|e| UsageError(e.to_string()))?;
    ctx.record.result("monte_carlo", res);
    println!(
        "alpha={alpha:.6} r={} b={} d={}: empirical {:.4} ({} / {}), theory {:.4}, sd {:.4}",
        a.r, a.b, a.d, res.empirical, res.hits, res.trials, res.theoretical, res.std_dev
    );
    Ok(())
}

fn stats(ctx: &mut Ctx, a: &StatsArgs) -> anyhow::Result<()> {
    let check = match &a.encoder {
        Some(p) => FingerprintCheck::Strict(load_encoder(ctx, p, "encoder")?.fingerprint()),
        None => FingerprintCheck::Skip,
    };
    let index = HashIndex::load(&a.index, check)?;
    ctx.record.fingerprint("index", index.encoder_fingerprint());
    let stats = index.stats();
    print!("{stats}");
    ctx.record.result("stats", &stats);
    Ok(())
}
