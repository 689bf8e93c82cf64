use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use pmiris_core::encoding::encode as encode_polar;
use pmiris_core::evaluation::{
    evaluate_samples, generate_pairs, load_scores_csv, pad_metrics, report, save_scores_csv, summarize,
    EvaluationSummary, ScoreRow, SliceSummary, DEFAULT_APCER_LEVELS,
};
use pmiris_core::gallery::{Candidate, Gallery};
use pmiris_core::geometry::SegmentationJson;
use pmiris_core::image::{load_image, write_file};
use pmiris_core::metadata::{load_metadata_csv, write_metadata_csv};
use pmiris_core::normalization::polar_mask_coverage;
use pmiris_core::pipeline::{compare_templates, extract_templates, normalize_sample, segment_sample, StageFailure};
use pmiris_core::quality::compute_quality;
use pmiris_core::statistics::{
    anova_oneway, balance_pmi, bootstrap_dprime, kruskal_wallis, split_age_groups, BalanceParams, Removal, StatsError,
    TestResult, DEFAULT_BALANCE_TOLERANCE, DEFAULT_BOOTSTRAP_FRACTION, DEFAULT_BOOTSTRAP_REPS, DEFAULT_MIN_GROUP_SIZE,
};
use pmiris_core::synthetic::{dataset, Degradation};
use pmiris_core::template::IrisTemplate;
use pmiris_core::{Bitmap, EncoderId, IrisImage, PairLabel, Sample, SampleMetadata, SourceChannel};

use crate::config::Settings;
use crate::{internal, usage, EncoderList};

pub struct Context {
    pub settings: Settings,
    pub channel: SourceChannel,
}

impl Context {
    fn cfg(&self) -> &pmiris_core::PipelineConfig {
        &self.settings.pipeline
    }

    fn seed(&self) -> u64 {
        self.settings.seed.unwrap_or(0)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;

    let text = serde_json::to_string_pretty(value).map_err(internal)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (`| head`) is the reader's choice, not a failure.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r.context("writing to stdout"),
    }
}

fn read_image(path: &Path, channel: SourceChannel) -> Result<IrisImage> {
    load_image(path, channel).with_context(|| format!("reading image {}", path.display()))
}

fn read_mask(path: &Path) -> Result<Bitmap> {
    Ok(read_image(path, SourceChannel::Nir)?.to_mask())
}

fn read_segmentation(path: &Path) -> Result<(pmiris_core::Segmentation, Option<PathBuf>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let json: SegmentationJson = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let seg = json.to_segmentation()?;
    let mask = json.mask_path.map(|m| {
        let m = PathBuf::from(m);
        if m.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(m)
        } else {
            m
        }
    });
    Ok((seg, mask))
}

/// Image plus optional explicit mask and geometry, as one pipeline sample.
#[derive(Debug, Args)]
pub struct ImageInput {
    /// PGM or PNG image.
    image: PathBuf,
    /// Occlusion mask image (nonzero = usable), same size as the image.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Segmentation JSON; skips boundary finding.
    #[arg(long)]
    segmentation: Option<PathBuf>,
}

impl ImageInput {
    fn sample(&self, ctx: &Context) -> Result<Sample> {
        let mut sample = Sample::new(read_image(&self.image, ctx.channel)?);
        let mut mask_path = self.mask.clone();
        if let Some(p) = &self.segmentation {
            let (seg, m) = read_segmentation(p)?;
            sample.segmentation = Some(seg);
            mask_path = mask_path.or(m);
        }
        if let Some(m) = mask_path {
            sample.occlusion_mask = Some(read_mask(&m)?);
        }
        Ok(sample)
    }
}

fn stage<T>(r: Result<T, StageFailure>, image: &Path) -> Result<T> {
    r.map_err(|e| anyhow!("{}: {e}", image.display()))
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    input: ImageInput,
    /// Also write the segmentation JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn segment(ctx: &Context, args: SegmentArgs) -> Result<()> {
    let sample = args.input.sample(ctx)?;
    let seg = stage(segment_sample(&sample, ctx.cfg()), &args.input.image)?;
    let mask = args.input.mask.as_ref().map(|p| p.to_string_lossy().into_owned());
    let json = seg.to_json(mask.as_deref());
    if let Some(out) = &args.out {
        write_file(out, serde_json::to_string_pretty(&json)?.as_bytes())?;
    }
    print_json(&json)
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[command(flatten)]
    input: ImageInput,
    /// Output prefix: writes `<out>.pgm` (texture) and `<out>_mask.pbm`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct NormalizeOutput {
    rows: usize,
    cols: usize,
    mask_coverage: f64,
    texture_path: Option<String>,
    mask_path: Option<String>,
}

pub fn normalize(ctx: &Context, args: NormalizeArgs) -> Result<()> {
    let sample = args.input.sample(ctx)?;
    let (_, polar) = stage(normalize_sample(&sample, ctx.cfg()), &args.input.image)?;
    let mut out = NormalizeOutput {
        rows: polar.rows(),
        cols: polar.cols(),
        mask_coverage: polar_mask_coverage(&polar),
        texture_path: None,
        mask_path: None,
    };
    if let Some(prefix) = &args.out {
        let (pgm, pbm) = polar.debug_dump();
        let tex = prefix.with_extension("pgm");
        let mask = PathBuf::from(format!("{}_mask.pbm", prefix.display()));
        write_file(&tex, &pgm)?;
        write_file(&mask, &pbm)?;
        out.texture_path = Some(tex.display().to_string());
        out.mask_path = Some(mask.display().to_string());
    }
    print_json(&out)
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    input: ImageInput,
    #[arg(long)]
    encoder: EncoderId,
    /// Template file to write (`.pmit`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TemplateInfo {
    encoder: EncoderId,
    rows: usize,
    cols: usize,
    bitplanes: usize,
    mask_coverage: f64,
    params_digest: String,
    path: Option<String>,
}

impl TemplateInfo {
    fn of(t: &IrisTemplate, path: Option<&Path>) -> Self {
        Self {
            encoder: t.encoder_id,
            rows: t.rows(),
            cols: t.cols(),
            bitplanes: t.bitplanes.len(),
            mask_coverage: t.mask.coverage(),
            params_digest: t.params_digest.iter().map(|b| format!("{b:02x}")).collect(),
            path: path.map(|p| p.display().to_string()),
        }
    }
}

pub fn encode(ctx: &Context, args: EncodeArgs) -> Result<()> {
    let sample = args.input.sample(ctx)?;
    let (_, polar) = stage(normalize_sample(&sample, ctx.cfg()), &args.input.image)?;
    let template = encode_polar(&polar, &ctx.cfg().encoder(args.encoder))
        .map_err(|e| anyhow!("{}: {e}", args.input.image.display()))?;
    if let Some(out) = &args.out {
        write_file(out, &template.to_bytes())?;
    }
    print_json(&TemplateInfo::of(&template, args.out.as_deref()))
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Image or `.pmit` template.
    a: PathBuf,
    /// Image or `.pmit` template.
    b: PathBuf,
    /// Comma-separated encoders or `all` (ignored for templates).
    #[arg(long, default_value = "all")]
    encoder: EncoderList,
    #[arg(long)]
    mask_a: Option<PathBuf>,
    #[arg(long)]
    mask_b: Option<PathBuf>,
}

#[derive(Serialize)]
struct MatchEntry {
    encoder: EncoderId,
    score: Option<f64>,
    best_shift: Option<i64>,
    ftm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ftm_reason: Option<String>,
}

#[derive(Serialize)]
struct MatchOutput {
    a: String,
    b: String,
    results: Vec<MatchEntry>,
}

fn is_template(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pmit"))
}

fn read_template(p: &Path) -> Result<IrisTemplate> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    IrisTemplate::from_bytes(&bytes).with_context(|| format!("decoding {}", p.display()))
}

pub fn match_cmd(ctx: &Context, args: MatchArgs) -> Result<()> {
    let cfg = ctx.cfg();
    let (meta_a, meta_b, pairs) = match (is_template(&args.a), is_template(&args.b)) {
        (true, true) => {
            let (ta, tb) = (read_template(&args.a)?, read_template(&args.b)?);
            let enc = ta.encoder_id;
            let meta = |p: &Path| SampleMetadata::placeholder(&p.display().to_string());
            (meta(&args.a), meta(&args.b), vec![(enc, Ok(ta), Ok(tb))])
        }
        (false, false) => {
            let load = |p: &Path, m: &Option<PathBuf>| -> Result<Sample> {
                let mut s = Sample::new(read_image(p, ctx.channel)?);
                if let Some(m) = m {
                    s.occlusion_mask = Some(read_mask(m)?);
                }
                Ok(s)
            };
            let (sa, sb) = (load(&args.a, &args.mask_a)?, load(&args.b, &args.mask_b)?);
            let ta = extract_templates(&sa, cfg, &args.encoder.0);
            let tb = extract_templates(&sb, cfg, &args.encoder.0);
            let pairs = args
                .encoder
                .0
                .iter()
                .zip(ta.into_iter().zip(tb))
                .map(|(&e, (a, b))| (e, a, b))
                .collect();
            (sa.metadata, sb.metadata, pairs)
        }
        _ => return Err(usage(anyhow!("compare two images or two templates, not one of each"))),
    };
    let results = pairs
        .into_iter()
        .map(|(enc, ta, tb)| {
            let rec = compare_templates(&meta_a, &meta_b, enc, &ta, &tb, &cfg.matching);
            MatchEntry {
                encoder: enc,
                score: rec.score,
                best_shift: rec.best_shift,
                ftm: rec.ftm,
                ftm_reason: rec.ftm_reason,
            }
        })
        .collect();
    print_json(&MatchOutput {
        a: args.a.display().to_string(),
        b: args.b.display().to_string(),
        results,
    })
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[command(flatten)]
    input: ImageInput,
}

pub fn quality(ctx: &Context, args: QualityArgs) -> Result<()> {
    let sample = args.input.sample(ctx)?;
    let seg = stage(segment_sample(&sample, ctx.cfg()), &args.input.image)?;
    let record = compute_quality(&sample.image, &seg)?;
    print_json(&record)
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    metadata: PathBuf,
    /// Write `probe_id,gallery_id,label` CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PairOut<'a> {
    probe_id: &'a str,
    gallery_id: &'a str,
    label: PairLabel,
}

#[derive(Serialize)]
struct PairsOutput<'a> {
    n_genuine: usize,
    n_impostor: usize,
    pairs: Vec<PairOut<'a>>,
}

pub fn pairs(_ctx: &Context, args: PairsArgs) -> Result<()> {
    let meta = load_metadata_csv(&args.metadata)?;
    let set = generate_pairs(&meta);
    let pairs: Vec<PairOut> = set
        .all()
        .map(|p| PairOut {
            probe_id: &meta[p.probe].sample_id,
            gallery_id: &meta[p.gallery].sample_id,
            label: p.label,
        })
        .collect();
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
        for p in &pairs {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    print_json(&PairsOutput {
        n_genuine: set.genuine.len(),
        n_impostor: set.impostor.len(),
        pairs,
    })
}

#[derive(Debug, Args)]
pub struct RunEvalArgs {
    #[arg(long)]
    metadata: PathBuf,
    /// Directory that `image_path` is relative to (default: the metadata file's).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Directory of `<image stem>_mask.png` occlusion masks.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Output directory for `scores_<encoder>.csv` and `report.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    encoders: EncoderList,
}

#[derive(Serialize)]
struct EncoderEval {
    encoder: EncoderId,
    scores_csv: String,
    slices: Vec<SliceSummary>,
    by_gender: BTreeMap<String, EvaluationSummary>,
    by_age_group: BTreeMap<String, EvaluationSummary>,
}

#[derive(Serialize)]
struct EvalReport {
    n_samples: usize,
    n_genuine_pairs: usize,
    n_impostor_pairs: usize,
    encoders: Vec<EncoderEval>,
}

fn mask_for(dir: &Path, image_path: &str) -> Result<Bitmap> {
    let stem = Path::new(image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in ["png", "pgm"] {
        let p = dir.join(format!("{stem}_mask.{ext}"));
        if p.exists() {
            return read_mask(&p);
        }
    }
    bail!("no mask for `{image_path}` in {}", dir.display())
}

pub fn run_eval(ctx: &Context, args: RunEvalArgs) -> Result<()> {
    let meta = load_metadata_csv(&args.metadata)?;
    let root = args
        .images
        .clone()
        .unwrap_or_else(|| args.metadata.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut samples = Vec::with_capacity(meta.len());
    for m in meta {
        let mut s = Sample::with_metadata(read_image(&root.join(&m.image_path), ctx.channel)?, m);
        if let Some(dir) = &args.masks {
            s.occlusion_mask = Some(mask_for(dir, &s.metadata.image_path)?);
        }
        samples.push(s);
    }
    tracing::info!(samples = samples.len(), encoders = args.encoders.0.len(), "evaluating");
    let all_meta: Vec<SampleMetadata> = samples.iter().map(|s| s.metadata.clone()).collect();
    let set = generate_pairs(&all_meta);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut encoders = Vec::new();
    for (enc, records) in evaluate_samples(&samples, ctx.cfg(), &args.encoders.0) {
        let rows: Vec<ScoreRow> = records.iter().map(ScoreRow::from).collect();
        let path = args.out.join(format!("scores_{enc}.csv"));
        save_scores_csv(&rows, &path)?;
        let mut by_gender: BTreeMap<String, Vec<_>> = BTreeMap::new();
        let mut by_age: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for (rec, row) in records.iter().zip(&rows) {
            by_gender.entry(row.gender.clone()).or_default().push(rec.clone());
            by_age.entry(row.age_group.clone()).or_default().push(rec.clone());
        }
        let summarize_all = |m: BTreeMap<String, Vec<_>>| m.into_iter().map(|(k, v)| (k, summarize(&v))).collect();
        encoders.push(EncoderEval {
            encoder: enc,
            scores_csv: path.display().to_string(),
            slices: report(enc, &records).slices,
            by_gender: summarize_all(by_gender),
            by_age_group: summarize_all(by_age),
        });
    }
    let report = EvalReport {
        n_samples: samples.len(),
        n_genuine_pairs: set.genuine.len(),
        n_impostor_pairs: set.impostor.len(),
        encoders,
    };
    write_file(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    print_json(&report)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupBy {
    Gender,
    AgeGroup,
}

fn group_metadata(meta: &[SampleMetadata], by: GroupBy) -> (BTreeMap<String, Vec<SampleMetadata>>, Vec<String>) {
    match by {
        GroupBy::Gender => {
            let mut groups: BTreeMap<String, Vec<SampleMetadata>> = BTreeMap::new();
            let mut excluded = Vec::new();
            for m in meta {
                if m.gender == pmiris_core::Gender::Unknown {
                    excluded.push(m.sample_id.clone());
                } else {
                    groups.entry(m.gender.to_string()).or_default().push(m.clone());
                }
            }
            (groups, excluded)
        }
        GroupBy::AgeGroup => {
            let split = split_age_groups(meta);
            let groups = split
                .groups
                .into_iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(g, v)| (g.label().to_string(), v))
                .collect();
            (groups, split.excluded.into_iter().map(|m| m.sample_id).collect())
        }
    }
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long, value_enum)]
    by: GroupBy,
    /// Hours.
    #[arg(long, default_value_t = DEFAULT_BALANCE_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_GROUP_SIZE)]
    min_size: usize,
    /// Write the retained samples as a metadata CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BalanceOutput {
    means: BTreeMap<String, f64>,
    sizes: BTreeMap<String, usize>,
    /// In removal order.
    removed: Vec<Removal>,
    /// Samples outside every group.
    excluded: Vec<String>,
}

pub fn balance(_ctx: &Context, args: BalanceArgs) -> Result<()> {
    let meta = load_metadata_csv(&args.metadata)?;
    let (groups, excluded) = group_metadata(&meta, args.by);
    let params = BalanceParams {
        tolerance: args.tolerance,
        min_size: args.min_size,
    };
    let outcome = balance_pmi(&groups, &params)?;
    if let Some(out) = &args.out {
        let kept: Vec<SampleMetadata> = outcome.groups.values().flatten().cloned().collect();
        let file = fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
        write_metadata_csv(file, &kept)?;
    }
    print_json(&BalanceOutput {
        sizes: outcome.groups.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        means: outcome.means,
        removed: outcome.removed,
        excluded,
    })
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Score CSV produced by `run-eval`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_enum)]
    by: GroupBy,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_FRACTION)]
    fraction: f64,
}

#[derive(Serialize)]
struct GroupStats {
    n_genuine: usize,
    n_impostor: usize,
    dprime: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct TestOutcome {
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl From<Result<TestResult, StatsError>> for TestOutcome {
    fn from(r: Result<TestResult, StatsError>) -> Self {
        match r {
            Ok(t) => Self {
                result: Some(t),
                error: None,
            },
            Err(e) => Self {
                result: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Serialize)]
struct StatsOutput {
    seed: u64,
    reps: usize,
    fraction: f64,
    groups: BTreeMap<String, GroupStats>,
    anova: TestOutcome,
    kruskal_wallis: TestOutcome,
}

/// Groups pairs whose samples share the grouping attribute; mixed and
/// excluded pairs are left out. Each group's bootstrap uses `--seed`.
pub fn stats(ctx: &Context, args: StatsArgs) -> Result<()> {
    let rows = load_scores_csv(&args.scores)?;
    let mut grouped: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.ftm) {
        let key = match args.by {
            GroupBy::Gender => &r.gender,
            GroupBy::AgeGroup => &r.age_group,
        };
        if matches!(key.as_str(), "mixed" | "excluded" | "unknown") {
            continue;
        }
        let Some(score) = r.score else { continue };
        let entry = grouped.entry(key.clone()).or_default();
        match r.label {
            PairLabel::Genuine => entry.0.push(score),
            PairLabel::Impostor => entry.1.push(score),
        }
    }
    let seed = ctx.seed();
    let mut groups = BTreeMap::new();
    let mut vectors = Vec::new();
    for (label, (g, i)) in grouped {
        let boot = bootstrap_dprime(&g, &i, args.reps, args.fraction, seed);
        if let Ok(v) = &boot {
            vectors.push(v.clone());
        }
        groups.insert(
            label,
            GroupStats {
                n_genuine: g.len(),
                n_impostor: i.len(),
                error: boot.as_ref().err().map(ToString::to_string),
                dprime: boot.ok(),
            },
        );
    }
    print_json(&StatsOutput {
        seed,
        reps: args.reps,
        fraction: args.fraction,
        groups,
        anova: anova_oneway(&vectors).into(),
        kruskal_wallis: kruskal_wallis(&vectors).into(),
    })
}

#[derive(Debug, Args)]
pub struct PadEvalArgs {
    /// Bona fide scores: a CSV with a `score` column, or one number per line.
    #[arg(long)]
    bona_fide: PathBuf,
    /// Attack scores, same format.
    #[arg(long)]
    attacks: PathBuf,
    /// Comma-separated APCER levels in addition to the defaults.
    #[arg(long, value_delimiter = ',')]
    apcer: Vec<f64>,
}

/// Reads PAD scores. A header row is recognised by a `score` column.
pub fn read_pad_scores(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut column = 0;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), n + 1))?;
        if n == 0 {
            if let Some(i) = rec.iter().position(|f| f.eq_ignore_ascii_case("score")) {
                column = i;
                continue;
            }
        }
        let field = rec
            .get(column)
            .ok_or_else(|| anyhow!("{}: row {} has no column {}", path.display(), n + 1, column + 1))?;
        let v: f64 = field
            .parse()
            .map_err(|_| anyhow!("{}: row {}: `{field}` is not a number", path.display(), n + 1))?;
        if !v.is_finite() {
            bail!("{}: row {}: non-finite score", path.display(), n + 1);
        }
        out.push(v);
    }
    Ok(out)
}

pub fn pad_eval(_ctx: &Context, args: PadEvalArgs) -> Result<()> {
    let bona = read_pad_scores(&args.bona_fide)?;
    let attack = read_pad_scores(&args.attacks)?;
    let extra: Vec<f64> = args
        .apcer
        .iter()
        .copied()
        .filter(|a| !DEFAULT_APCER_LEVELS.contains(a))
        .collect();
    if let Some(bad) = extra.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(usage(anyhow!("APCER level {bad} outside [0, 1]")));
    }
    print_json(&pad_metrics(&bona, &attack, &extra)?)
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    encoder: EncoderId,
    /// Enroll every sample of this metadata CSV.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Directory that `image_path` is relative to.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Images to enroll with their file stem as sample id.
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FtmEntry {
    sample_id: String,
    reason: String,
}

#[derive(Serialize)]
struct EnrollOutput {
    enrolled: Vec<String>,
    ftm: Vec<FtmEntry>,
}

pub fn enroll(ctx: &Context, args: EnrollArgs) -> Result<()> {
    let mut samples = Vec::new();
    if let Some(meta_path) = &args.metadata {
        let root = args
            .images
            .clone()
            .unwrap_or_else(|| meta_path.parent().unwrap_or(Path::new(".")).to_path_buf());
        for m in load_metadata_csv(meta_path)? {
            samples.push(Sample::with_metadata(
                read_image(&root.join(&m.image_path), ctx.channel)?,
                m,
            ));
        }
    }
    for f in &args.files {
        samples.push(Sample::new(read_image(f, ctx.channel)?));
    }
    if samples.is_empty() {
        return Err(usage(anyhow!("nothing to enroll: pass --metadata or image files")));
    }
    let gallery = Gallery::open(&args.gallery)?;
    let templates: Vec<_> = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| extract_templates(s, ctx.cfg(), &[args.encoder]).remove(0))
            .collect()
    };
    let mut out = EnrollOutput {
        enrolled: Vec::new(),
        ftm: Vec::new(),
    };
    for (s, t) in samples.into_iter().zip(templates) {
        match t {
            Ok(t) => out.enrolled.push(gallery.enroll(&t, s.metadata)?),
            Err(e) => out.ftm.push(FtmEntry {
                sample_id: s.metadata.sample_id,
                reason: e.to_string(),
            }),
        }
    }
    print_json(&out)
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    encoder: EncoderId,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    input: ImageInput,
}

#[derive(Serialize)]
struct IdentifyOutput {
    ftm: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    ftm_reason: Option<String>,
    candidates: Vec<Candidate>,
    skipped_incompatible: usize,
    skipped_ftm: usize,
}

pub fn identify(ctx: &Context, args: IdentifyArgs) -> Result<()> {
    if args.k == 0 {
        return Err(usage(anyhow!("-k must be at least 1")));
    }
    if !args.gallery.join("index.json").exists() {
        bail!("{} is not a gallery", args.gallery.display());
    }
    let gallery = Gallery::open(&args.gallery)?;
    let sample = args.input.sample(ctx)?;
    let out = match extract_templates(&sample, ctx.cfg(), &[args.encoder]).remove(0) {
        Err(e) => IdentifyOutput {
            ftm: true,
            ftm_reason: Some(e.to_string()),
            candidates: Vec::new(),
            skipped_incompatible: 0,
            skipped_ftm: 0,
        },
        Ok(t) => {
            let found = gallery.identify(&t, args.k, &ctx.cfg().matching)?;
            IdentifyOutput {
                ftm: false,
                ftm_reason: None,
                candidates: found.candidates,
                skipped_incompatible: found.skipped_incompatible,
                skipped_ftm: found.skipped_ftm,
            }
        }
    };
    print_json(&out)
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = pmiris_service::DEFAULT_PORT)]
    port: u16,
    /// Gallery directory (created if missing).
    #[arg(long, default_value = "gallery")]
    gallery: PathBuf,
}

pub fn serve(ctx: &Context, args: ServeArgs) -> Result<()> {
    let gallery = Gallery::open(&args.gallery)?;
    let state = pmiris_service::AppState::new(ctx.cfg().clone(), gallery);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(internal)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))
            .map_err(internal)?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        pmiris_service::serve(listener, state, shutdown).await.map_err(internal)
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImageFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    identities: usize,
    #[arg(long, default_value_t = 3)]
    captures: usize,
    /// Sensor noise sigma, gray levels.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    /// Maximum rotation, degrees.
    #[arg(long, default_value_t = 4.0)]
    rotation: f64,
    /// Fraction of the iris hidden by the eyelid.
    #[arg(long, default_value_t = 0.1)]
    occlusion: f64,
    #[arg(long, value_enum, default_value = "png")]
    format: ImageFormat,
}

#[derive(Serialize)]
struct SynthOutput {
    metadata: String,
    images: usize,
    seed: u64,
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    if args.identities == 0 || args.captures == 0 {
        return Err(usage(anyhow!("--identities and --captures must be positive")));
    }
    let d = Degradation {
        noise_sigma: args.noise,
        max_rotation_deg: args.rotation,
        occlusion: args.occlusion,
    };
    let seed = ctx.seed();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ext = match args.format {
        ImageFormat::Png => "png",
        ImageFormat::Pgm => "pgm",
    };
    let mut meta = Vec::new();
    for (mut m, cap) in dataset(args.identities, args.captures, &d, seed) {
        m.image_path = format!("{}.{ext}", m.sample_id);
        cap.image.save(args.out.join(&m.image_path))?;
        cap.mask_image()
            .save(args.out.join(format!("{}_mask.{ext}", m.sample_id)))?;
        meta.push(m);
    }
    let meta_path = args.out.join("metadata.csv");
    write_metadata_csv(fs::File::create(&meta_path)?, &meta)?;
    print_json(&SynthOutput {
        metadata: meta_path.display().to_string(),
        images: meta.len(),
        seed,
    })
}
