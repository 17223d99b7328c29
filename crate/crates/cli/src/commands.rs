use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use codec_probe::ancogen::{self, AncogenConfig, AncogenModel, StreamLayout};
use codec_probe::assoc::{
    accumulate_aligned, filter_by_content, predominant_mapping, rank_associations, topk_csv, topk_usage_curve,
    Weighting,
};
use codec_probe::corpus::{
    parse_corpus, BinningConfig, EmbeddingTable, SpeakerTable, TokenCorpus, Utterance,
};
use codec_probe::metrics::{aae, content_accuracy, metrics_csv, MetricReport};
use codec_probe::mi::{mi_report, ClubConfig, Estimator, MiAttribute, MiReportConfig};
use codec_probe::par;
use codec_probe::projection::{
    codebook_points, color_by_mapping, label_points, parse_categories, points_csv, scatter_svg, tsne,
    utterance_mean_embeddings, Points, TsneConfig, TsneMode,
};
use codec_probe::synth::{content_categories, generate_corpus, synthetic_codebook, GroundTruthSpec};

use crate::output::{read_text, CliResult, Failure, Outputs};
use crate::plot::topk_svg;
use crate::*;

pub fn run(ctx: &Context, command: Command) -> CliResult<()> {
    match command {
        Command::Validate(a) => validate(ctx, a),
        Command::Synth(a) => synth(ctx, a),
        Command::Assoc(a) => assoc(ctx, a),
        Command::Topk(a) => topk(ctx, a),
        Command::Tsne(a) => tsne_cmd(ctx, a),
        Command::Mi(a) => mi(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Analyze(a) => analyze(ctx, a),
        Command::Generate(a) => generate(ctx, a),
        Command::Convert(a) => convert(ctx, a),
        Command::Report(a) => report(ctx, a),
    }
}

fn load_corpus(ctx: &Context, path: &Path) -> CliResult<TokenCorpus> {
    let text = read_text(path)?;
    let c = parse_corpus(&text, ctx.par).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    log::info!("loaded {} utterances from {}", c.len(), path.display());
    Ok(c)
}

fn non_empty(c: &TokenCorpus) -> CliResult<()> {
    if c.is_empty() {
        return Err(Failure::Data("corpus is empty".into()));
    }
    Ok(())
}

fn check_scale(c: &TokenCorpus, scale: usize) -> CliResult<()> {
    let m = c.num_scales().unwrap_or(0);
    if scale >= m {
        return Err(Failure::Data(format!("scale out of range: {scale} (corpus has {m} scales)")));
    }
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

fn load_codebook(path: &Path) -> CliResult<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(EmbeddingTable::from_bytes(&bytes)?)
}

fn load_categories(path: Option<&PathBuf>) -> CliResult<Option<BTreeMap<u32, String>>> {
    path.map(|p| parse_categories(&read_text(p)?).map_err(|e| Failure::Data(format!("{}: {e}", p.display()))))
        .transpose()
}

fn validate(ctx: &Context, a: ValidateArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    let frames: usize = c.utterances().iter().map(|u| u.codec.len()).sum();
    println!(
        "ok: {} utterances, {} scales x {} codec tokens, {} codec frames, {} speakers",
        c.len(),
        c.num_scales().unwrap_or(0),
        c.codec_cardinality().unwrap_or(0),
        frames,
        c.speakers().len()
    );
    Ok(())
}

fn synth(ctx: &Context, a: SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str::<GroundTruthSpec>(&read_text(p)?)
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => match a.preset {
            Preset::SpeechtokenizerLike => GroundTruthSpec::speechtokenizer_like(),
            Preset::Deterministic => GroundTruthSpec::deterministic(),
            Preset::Noise => GroundTruthSpec::noise(GroundTruthSpec::default().num_scales),
        },
    };
    if ctx.seed_given || a.spec.is_none() {
        spec.seed = ctx.seed;
    }
    let g = generate_corpus(&spec, a.n, ctx.par)?;
    let cb = synthetic_codebook(&g.truth, a.codebook_dim)?;
    let mut out = Outputs::default();
    out.add(&a.out, g.corpus.to_jsonl());
    out.add(a.ground_truth.unwrap_or_else(|| sibling(&a.out, "ground_truth.json")), g.truth.to_json()? + "\n");
    out.add(a.codebook.unwrap_or_else(|| sibling(&a.out, "codebook.cbk")), cb.to_bytes());
    out.add(a.categories.unwrap_or_else(|| sibling(&a.out, "categories.csv")), content_categories(&spec));
    out.commit()?;
    println!("generated {} utterances ({} scales, seed {})", a.n, spec.num_scales, spec.seed);
    Ok(())
}

fn assoc(ctx: &Context, a: AssocArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    check_scale(&c, a.scale)?;
    let frames = c.align_all(ctx.par)?;
    let n_attr = c.content_cardinality().unwrap_or(0);
    let n_codec = c.codec_cardinality().unwrap_or(0);
    let m = accumulate_aligned(&frames, a.scale, n_attr, n_codec, ctx.par)?;
    let r = rank_associations(&m);
    let mut mapping = String::from("codec_token,attr_token,share,support\n");
    for col in r.used() {
        let (attr, share) = col.ranked[0];
        let _ = writeln!(mapping, "{},{attr},{share},{}", col.codec_token, col.support);
    }
    let mut out = Outputs::default();
    out.add(a.out.join("cooccurrence.csv"), m.to_csv());
    out.add(a.out.join("mapping.csv"), mapping);
    if let Some(t) = a.content_token {
        out.add(a.out.join("pitch_conditioned.csv"), filter_by_content(&frames, a.scale, t)?.to_csv());
    }
    let curve = topk_usage_curve(&r, 1, Weighting::Uniform)?;
    out.commit()?;
    println!(
        "scale {}: {} frames, {} used codec tokens, top-1 mean share {:.2}%",
        a.scale,
        m.total(),
        r.used().count(),
        curve[0]
    );
    Ok(())
}

fn topk_curves(
    ctx: &Context,
    c: &TokenCorpus,
    scales: &[usize],
    k_max: usize,
    weighting: Weighting,
) -> CliResult<Vec<(usize, Vec<f64>)>> {
    let frames = c.align_all(ctx.par)?;
    let n_attr = c.content_cardinality().unwrap_or(0);
    let n_codec = c.codec_cardinality().unwrap_or(0);
    scales
        .iter()
        .map(|&s| {
            let m = accumulate_aligned(&frames, s, n_attr, n_codec, ctx.par)?;
            Ok((s, topk_usage_curve(&rank_associations(&m), k_max, weighting)?))
        })
        .collect()
}

fn topk(ctx: &Context, a: TopkArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    let scales: Vec<usize> = match a.scale {
        Some(s) => {
            check_scale(&c, s)?;
            vec![s]
        }
        None => (0..c.num_scales().unwrap_or(0)).collect(),
    };
    let weighting = if a.weighted { Weighting::Frequency } else { Weighting::Uniform };
    let curves = topk_curves(ctx, &c, &scales, a.k_max, weighting)?;
    let mut out = Outputs::default();
    for (s, curve) in &curves {
        out.add(a.out.join(format!("topk_scale{s}.csv")), topk_csv(curve));
        println!("scale {s}: top-1 {:.2}%  top-{} {:.2}%", curve[0], curve.len(), curve[curve.len() - 1]);
    }
    out.add(a.out.join("topk.svg"), topk_svg(&curves));
    out.commit()
}

fn tsne_config(ctx: &Context, perplexity: f64, iterations: usize, theta: Option<f64>) -> TsneConfig {
    TsneConfig {
        perplexity,
        iterations,
        seed: ctx.seed,
        mode: theta.map_or(TsneMode::Exact, |theta| TsneMode::BarnesHut { theta }),
        ..TsneConfig::default()
    }
}

/// t-SNE of one codebook scale coloured by the corpus's predominant
/// content mapping; returns `(points.csv, trace.csv, layout.svg)`.
fn codebook_layout(
    ctx: &Context,
    table: &EmbeddingTable,
    scale: usize,
    corpus: Option<&TokenCorpus>,
    categories: Option<&BTreeMap<u32, String>>,
    cfg: &TsneConfig,
) -> CliResult<(String, String, String)> {
    let points = codebook_points(table, scale)?;
    let mapping = match corpus {
        Some(c) if !c.is_empty() => {
            check_scale(c, scale)?;
            let frames = c.align_all(ctx.par)?;
            let m = accumulate_aligned(
                &frames,
                scale,
                c.content_cardinality().unwrap_or(0),
                c.codec_cardinality().unwrap_or(0),
                ctx.par,
            )?;
            predominant_mapping(&rank_associations(&m))
        }
        _ => BTreeMap::new(),
    };
    let emb = tsne(&points, cfg, ctx.par)?;
    log::info!("scale {scale}: t-SNE of {} rows, KL {:.4}", points.n, emb.kl);
    let tokens: Vec<u32> = (0..points.n as u32).collect();
    let labeled = color_by_mapping(&tokens, &emb, &mapping, categories)?;
    Ok((points_csv(&labeled), emb.trace_csv(), scatter_svg(&labeled, &format!("codebook scale {scale}"))))
}

fn tsne_cmd(ctx: &Context, a: TsneArgs) -> CliResult<()> {
    let table = load_codebook(&a.codebook)?;
    let corpus = a.corpus.as_deref().map(|p| load_corpus(ctx, p)).transpose()?;
    let categories = load_categories(a.categories.as_ref())?;
    let cfg = tsne_config(ctx, a.perplexity, a.iterations, a.theta);
    let (points, trace, svg) = if a.utterances {
        let c = corpus.as_ref().ok_or_else(|| Failure::Usage("--utterances needs --corpus".into()))?;
        non_empty(c)?;
        let means = utterance_mean_embeddings(c, &table, a.scale)?;
        let dim = means[0].vector.len();
        let x = Points::new(means.len(), dim, means.iter().flat_map(|m| m.vector.iter().copied()).collect())?;
        let emb = tsne(&x, &cfg, ctx.par)?;
        let ids: Vec<String> = means.iter().map(|m| m.id.clone()).collect();
        let labels: Vec<String> = means.iter().map(|m| m.speaker_id.clone()).collect();
        let labeled = label_points(&ids, &emb, &labels)?;
        (points_csv(&labeled), emb.trace_csv(), scatter_svg(&labeled, &format!("utterance means, scale {}", a.scale)))
    } else {
        codebook_layout(ctx, &table, a.scale, corpus.as_ref(), categories.as_ref(), &cfg)?
    };
    let mut out = Outputs::default();
    out.add(a.out.join("points.csv"), points);
    out.add(a.out.join("trace.csv"), trace);
    out.add(a.out.join("layout.svg"), svg);
    out.commit()
}

fn mi_config(ctx: &Context, max_samples: usize, epochs: usize, attributes: Option<&[String]>) -> CliResult<MiReportConfig> {
    let mut cfg = MiReportConfig {
        club: ClubConfig { epochs, seed: ctx.seed, ..ClubConfig::default() },
        max_samples,
        ..MiReportConfig::default()
    };
    if let Some(list) = attributes {
        cfg.attributes = list.iter().map(|s| MiAttribute::parse(s.trim())).collect::<codec_probe::Result<_>>()?;
    }
    Ok(cfg)
}

fn mi(ctx: &Context, a: MiArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    let cfg = mi_config(ctx, a.max_samples, a.epochs, a.attributes.as_deref())?;
    let report = mi_report(&c, &cfg, ctx.par)?;
    let mut out = Outputs::default();
    out.add(&a.out, report.to_csv());
    out.commit()?;
    for attr in &cfg.attributes {
        if let Some((s, v)) = report.dominant(*attr, Estimator::Club) {
            println!("{}: dominant scale {s} ({v:.4} nats, club)", attr.name());
        }
    }
    Ok(())
}

fn train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    let binning = BinningConfig::default();
    let speakers = SpeakerTable::from_corpus(&c);
    let layout = StreamLayout::from_corpus(&c, &binning)?;
    let d = AncogenConfig::default();
    let config = AncogenConfig {
        dim: a.dim.unwrap_or(d.dim),
        heads: a.heads.unwrap_or(d.heads),
        encoder_blocks: a.encoder_blocks.unwrap_or(d.encoder_blocks),
        decoder_blocks: a.decoder_blocks.unwrap_or(d.decoder_blocks),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        steps: a.steps,
        seed: ctx.seed,
        ..d
    };
    let data = ancogen::prepare_sequences(&c, &binning, &speakers, ctx.par)?;
    let mut model = AncogenModel::new(layout, config)?;
    log::info!("model has {} parameters", model.num_parameters());
    let report = ancogen::train(&mut model, &data, a.steps, |step, loss, _| {
        if step % 100 == 0 {
            log::info!("step {step}: loss {loss:.4}");
        }
    })?;
    let mut out = Outputs::default();
    out.add(&a.out, model.store.to_checkpoint_bytes());
    out.add(ancogen::sidecar_path(&a.out), model.sidecar_json(&binning, &speakers)?);
    if let Some(p) = &a.loss_csv {
        let mut csv = String::from("step,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l}");
        }
        out.add(p, csv);
    }
    out.commit()?;
    println!(
        "trained {} steps, {} parameters, final loss {:.4}",
        a.steps,
        model.num_parameters(),
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(AncogenModel, BinningConfig, SpeakerTable)> {
    AncogenModel::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn check_model_layout(model: &AncogenModel, c: &TokenCorpus) -> CliResult<()> {
    let (m, n) = (c.num_scales().unwrap_or(0), c.codec_cardinality().unwrap_or(0));
    if m != model.layout.num_scales || n != model.layout.codec_vocab {
        return Err(Failure::Data(format!(
            "corpus codec layout {m}x{n} does not match the model's {}x{}",
            model.layout.num_scales, model.layout.codec_vocab
        )));
    }
    Ok(())
}

fn jsonl(utterances: Vec<Utterance>) -> CliResult<String> {
    Ok(TokenCorpus::new(utterances)?.to_jsonl())
}

fn analyze(ctx: &Context, a: AnalyzeArgs) -> CliResult<()> {
    let (model, binning, speakers) = load_model(&a.model)?;
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    check_model_layout(&model, &c)?;
    let frames = c.align_all(ctx.par)?;
    let predicted = par::map_slice(ctx.par, &frames, |f| model.analyze(&f.codec_tokens))
        .into_iter()
        .collect::<codec_probe::Result<Vec<_>>>()?;
    let mut utterances = Vec::with_capacity(frames.len());
    let (mut pred_c, mut ref_c, mut pred_p, mut ref_p) = (vec![], vec![], vec![], vec![]);
    for (f, p) in frames.iter().zip(&predicted) {
        let mut u = f.clone();
        u.content = p.content.clone();
        u.pitch_hz = p.pitch.iter().map(|&b| binning.pitch_bin_center(b)).collect();
        u.loudness_db = p.loudness.iter().map(|&b| binning.loudness_bin_center(b)).collect();
        u.speaker_id = speakers.name(p.speaker).unwrap_or("unknown").to_string();
        u.speaker_embedding = None;
        pred_c.extend_from_slice(&u.content);
        ref_c.extend_from_slice(&f.content);
        pred_p.extend_from_slice(&u.pitch_hz);
        ref_p.extend_from_slice(&f.pitch_hz);
        utterances.push(u.to_utterance());
    }
    let mut reports = vec![content_accuracy(&pred_c, &ref_c)?];
    match aae(&pred_p, &ref_p) {
        Ok(r) => reports.push(r),
        Err(e) => log::info!("pitch AAE skipped: {e}"),
    }
    let mut out = Outputs::default();
    out.add(&a.out, jsonl(utterances)?);
    if let Some(p) = &a.metrics {
        out.add(p, metrics_csv(&reports));
    }
    out.commit()?;
    for r in &reports {
        println!("{}: {:.4} {} (n={})", r.name, r.value, r.units, r.n);
    }
    Ok(())
}

fn match_reports(pred: &[Vec<Vec<u32>>], reference: &[Vec<Vec<u32>>]) -> CliResult<Vec<MetricReport>> {
    let m = reference.first().map_or(0, |r| r.len());
    (0..m)
        .map(|s| {
            let p: Vec<u32> = pred.iter().flat_map(|u| u[s].iter().copied()).collect();
            let r: Vec<u32> = reference.iter().flat_map(|u| u[s].iter().copied()).collect();
            let mut rep = content_accuracy(&p, &r)?;
            rep.name = format!("codec_match_scale{s}");
            Ok(rep)
        })
        .collect()
}

fn generate(ctx: &Context, a: GenerateArgs) -> CliResult<()> {
    let (model, binning, speakers) = load_model(&a.model)?;
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    check_model_layout(&model, &c)?;
    let frames = c.align_all(ctx.par)?;
    let seqs = ancogen::prepare_sequences(&c, &binning, &speakers, ctx.par)?;
    let codec = par::map_slice(ctx.par, &seqs, |s| model.generate(&s.attributes))
        .into_iter()
        .collect::<codec_probe::Result<Vec<_>>>()?;
    let reference: Vec<Vec<Vec<u32>>> = seqs.iter().map(|s| s.codec.clone()).collect();
    let reports = match_reports(&codec, &reference)?;
    let utterances = frames
        .iter()
        .zip(codec)
        .map(|(f, tokens)| {
            let mut u = f.clone();
            u.codec_tokens = tokens;
            u.to_utterance()
        })
        .collect();
    let mut out = Outputs::default();
    out.add(&a.out, jsonl(utterances)?);
    if let Some(p) = &a.metrics {
        out.add(p, metrics_csv(&reports));
    }
    out.commit()?;
    for r in &reports {
        println!("{}: {:.4} (n={})", r.name, r.value, r.n);
    }
    Ok(())
}

fn convert(ctx: &Context, a: ConvertArgs) -> CliResult<()> {
    let (model, _, speakers) = load_model(&a.model)?;
    let target = speakers.token(&a.target_speaker).ok_or_else(|| {
        Failure::Data(format!(
            "unknown target speaker {} (known: {})",
            a.target_speaker,
            speakers.names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    check_model_layout(&model, &c)?;
    let frames = c.align_all(ctx.par)?;
    let codec = par::map_slice(ctx.par, &frames, |f| model.convert_voice(&f.codec_tokens, target))
        .into_iter()
        .collect::<codec_probe::Result<Vec<_>>>()?;
    let reference: Vec<Vec<Vec<u32>>> = frames.iter().map(|f| f.codec_tokens.clone()).collect();
    let reports = match_reports(&codec, &reference)?;
    let utterances = frames
        .iter()
        .zip(codec)
        .map(|(f, tokens)| {
            let mut u = f.clone();
            u.codec_tokens = tokens;
            u.speaker_id = a.target_speaker.clone();
            u.speaker_embedding = None;
            u.to_utterance()
        })
        .collect();
    let mut out = Outputs::default();
    out.add(&a.out, jsonl(utterances)?);
    out.commit()?;
    for r in &reports {
        println!("{} (unchanged vs source): {:.4}", r.name, r.value);
    }
    Ok(())
}

fn report(ctx: &Context, a: ReportArgs) -> CliResult<()> {
    let c = load_corpus(ctx, &a.corpus)?;
    non_empty(&c)?;
    let scales: Vec<usize> = (0..c.num_scales().unwrap_or(0)).collect();
    let curves = topk_curves(ctx, &c, &scales, a.k_max, Weighting::Uniform)?;
    let mut out = Outputs::default();
    let mut all = String::from("scale,k,mean_share_percent\n");
    for (s, curve) in &curves {
        out.add(a.out.join(format!("topk_scale{s}.csv")), topk_csv(curve));
        for (k, v) in curve.iter().enumerate() {
            let _ = writeln!(all, "{s},{},{v}", k + 1);
        }
    }
    out.add(a.out.join("topk.csv"), all);
    out.add(a.out.join("topk.svg"), topk_svg(&curves));
    if let Some(cb) = &a.codebook {
        let table = load_codebook(cb)?;
        let categories = load_categories(a.categories.as_ref())?;
        let cfg = tsne_config(ctx, a.perplexity, a.iterations, None);
        for s in 0..table.scales.len().min(scales.len()) {
            let (points, trace, svg) = codebook_layout(ctx, &table, s, Some(&c), categories.as_ref(), &cfg)?;
            out.add(a.out.join(format!("tsne_scale{s}_points.csv")), points);
            out.add(a.out.join(format!("tsne_scale{s}_trace.csv")), trace);
            out.add(a.out.join(format!("tsne_scale{s}.svg")), svg);
        }
    }
    if !a.no_mi {
        let cfg = mi_config(ctx, a.max_samples, a.epochs, None)?;
        out.add(a.out.join("mi_report.csv"), mi_report(&c, &cfg, ctx.par)?.to_csv());
    }
    out.commit()?;
    println!("report written to {}", a.out.display());
    Ok(())
}
