use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::info;
use serde::{Deserialize, Serialize};

use myomap_core::agreement::{agreement_report, bland_altman_by_group, paired_myocardial_means};
use myomap_core::classifiers::{
    default_grid, grid_search, load_grid, predict, write_search_log, ClassifierKind, TrainedClassifier,
};
use myomap_core::cohort::{load_cohort, read_json, save_cohort, validate_cohort, write_json, Cohort, MapEntry, Subset, SubsetFilter};
use myomap_core::features::{FeatureName, FeatureTable};
use myomap_core::phantom::{write_phantom_cohort, PhantomSpec};
use myomap_core::preprocess::{preprocess_pair, PreprocessConfig};
use myomap_core::report::{
    curve_rows, write_csv_rows, BlandAltmanPointRow, DeLongRow, RocSummaryRow, RunRecord,
};
use myomap_core::roc::{delong_test, rank_features_by_auc, roc_curve, CutoffRule, FeatureSelector};
use myomap_core::stats_eval::{compare_methods, ClassificationReport, ComparisonRow};
use myomap_core::VERSION;

use crate::{Cli, Command, Common, Failure};

type Res<T> = std::result::Result<T, Failure>;

/// `--config` file: the shared flags plus module blocks.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConfigFile {
    #[serde(flatten)]
    common: Common,
    preprocess: Option<PreprocessConfig>,
    phantom: Option<PhantomSpec>,
}

struct Ctx {
    command: Command,
    opts: Common,
    preprocess: Option<PreprocessConfig>,
    phantom: Option<PhantomSpec>,
}

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Res<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("--{flag} is required")))
}

pub fn run(cli: Cli) -> Res<()> {
    let file = match &cli.common.config {
        Some(p) => read_json::<ConfigFile>(p).map_err(|e| usage(format!("config: {e}")))?,
        None => ConfigFile::default(),
    };
    let opts = cli.common.clone().or(file.common);
    if let Some(n) = opts.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("--threads: {e}")))?;
    }
    let ctx = Ctx { command: cli.command.clone(), opts, preprocess: file.preprocess, phantom: file.phantom };
    match &cli.command {
        Command::Synth { spec } => synth(&ctx, spec.as_deref()),
        Command::Validate => validate(&ctx),
        Command::Preprocess => preprocess(&ctx),
        Command::Agree => agree(&ctx),
        Command::Features => features(&ctx),
        Command::Roc { input, level } => roc(&ctx, input.as_deref(), *level),
        Command::CutoffClassify { input, rules } => cutoff_classify(&ctx, input.as_deref(), rules),
        Command::Train { input } => train(&ctx, input.as_deref()),
        Command::Eval { input, model } => eval(&ctx, input.as_deref(), model),
        Command::Compare { a, b } => compare(&ctx, a, b),
        Command::BlandAltman => bland_altman(&ctx),
    }
}

impl Ctx {
    fn out(&self) -> Res<&Path> {
        need(&self.opts.out, "out").map(PathBuf::as_path)
    }

    fn subset(&self, default: SubsetFilter) -> Res<SubsetFilter> {
        match &self.opts.subset {
            Some(s) => SubsetFilter::parse(s).map_err(|e| usage(e.to_string())),
            None => Ok(default),
        }
    }

    fn pair(&self) -> Res<(String, String)> {
        let p = need(&self.opts.pair, "pair")?;
        match p.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(usage(format!("--pair expects A:B, got `{p}`"))),
        }
    }

    fn source(&self) -> &str {
        self.opts.source.as_deref().unwrap_or("gt")
    }

    fn cohort(&self) -> Res<Cohort> {
        let m = need(&self.opts.manifest, "manifest")?;
        Ok(load_cohort(m)?)
    }

    fn table(&self, input: Option<&Path>) -> Res<FeatureTable> {
        match input {
            Some(p) => Ok(FeatureTable::load(p)?),
            None => Ok(FeatureTable::from_cohort(&self.cohort()?, self.source())?),
        }
    }

    /// Writes `run.json` next to the outputs.
    fn record(&self, out: &Path, extra: serde_json::Value) -> Res<()> {
        let mut config = serde_json::to_value(&self.opts).map_err(anyhow::Error::from)?;
        config["command_args"] = serde_json::to_value(&self.command).map_err(anyhow::Error::from)?;
        config["details"] = extra;
        if let Some(p) = &self.preprocess {
            config["preprocess"] = serde_json::to_value(p).map_err(anyhow::Error::from)?;
        }
        let rec = RunRecord {
            command: self.command.name().to_string(),
            toolkit_version: VERSION.to_string(),
            seed: self.opts.seed,
            config,
        };
        write_json(&out.join("run.json"), &rec, true)?;
        Ok(())
    }
}

fn synth(ctx: &Ctx, spec_path: Option<&Path>) -> Res<()> {
    let out = ctx.out()?;
    let mut spec = match (spec_path, &ctx.phantom) {
        (Some(p), _) => PhantomSpec::load(p)?,
        (None, Some(s)) => s.clone(),
        (None, None) => PhantomSpec::default(),
    };
    if let Some(seed) = ctx.opts.seed {
        spec.seed = seed;
    }
    let (cohort, manifest) = write_phantom_cohort(&spec, out)?;
    info!("wrote {} subjects / {} maps to {}", cohort.subjects.len(), cohort.n_maps(), manifest.display());
    ctx.record(out, serde_json::json!({ "spec_seed": spec.seed, "subjects": cohort.subjects.len() }))
}

fn validate(ctx: &Ctx) -> Res<()> {
    let cohort = ctx.cohort()?;
    let issues = validate_cohort(&cohort);
    for i in &issues {
        println!("{}\t{}\t{}", i.subject_id, i.map_id.as_deref().unwrap_or("-"), i.rule);
    }
    if let Some(out) = &ctx.opts.out {
        write_json(&out.join("issues.json"), &issues, true)?;
        ctx.record(out, serde_json::json!({ "issues": issues.len() }))?;
    }
    if issues.is_empty() {
        println!("ok: {} subjects, {} maps", cohort.subjects.len(), cohort.n_maps());
        Ok(())
    } else {
        Err(Failure::Data(anyhow!("{} validation issue(s)", issues.len())))
    }
}

#[derive(Serialize, Deserialize)]
struct NormRow {
    map_id: String,
    low: f64,
    high: f64,
    degenerate: bool,
}

fn preprocess(ctx: &Ctx) -> Res<()> {
    let out = ctx.out()?;
    let cfg = ctx.preprocess.clone().unwrap_or_default();
    let cohort = ctx.cohort()?;
    let mut stats = Vec::new();
    let mut result = Cohort { subjects: Vec::with_capacity(cohort.subjects.len()), split: cohort.split.clone() };
    for s in &cohort.subjects {
        let mut subject = s.clone();
        subject.maps.clear();
        for e in &s.maps {
            let sources: Vec<&String> = e.masks.keys().collect();
            let masks: Vec<_> = e.masks.values().collect();
            let (norm, masks) =
                preprocess_pair(&e.map.grid, &masks, &cfg).with_context(|| format!("map `{}`", e.map.map_id))?;
            stats.push(NormRow { map_id: e.map.map_id.clone(), low: norm.low, high: norm.high, degenerate: norm.degenerate });
            let mut map = e.map.clone();
            map.grid = norm.grid;
            let masks: BTreeMap<String, _> = sources.into_iter().cloned().zip(masks).collect();
            subject.maps.push(MapEntry { map, masks });
        }
        result.subjects.push(subject);
    }
    save_cohort(&result, out)?;
    write_csv_rows(&out.join("normalization.csv"), &stats)?;
    info!("preprocessed {} maps into {}", stats.len(), out.display());
    ctx.record(out, serde_json::json!({ "maps": stats.len() }))
}

fn agree(ctx: &Ctx) -> Res<()> {
    let out = ctx.out()?;
    let (a, b) = ctx.pair()?;
    let subset = ctx.subset(SubsetFilter::ALL)?;
    let report = agreement_report(&ctx.cohort()?, &a, &b, subset)?;
    write_json(&out.join("agreement.json"), &report, true)?;
    write_csv_rows(&out.join("agreement.csv"), &report.csv_rows())?;
    for r in &report.rows {
        println!(
            "{:8} n={:4} LV DICE {:.3} MYO DICE {:.3} MAPE {:.2}%",
            r.modality_group.label(),
            r.n_images,
            r.lv_dice.mean,
            r.myo_dice.mean,
            r.myo_mape_mean
        );
    }
    ctx.record(out, serde_json::json!({ "pair": format!("{a}:{b}"), "subset": subset.to_string() }))
}

fn features(ctx: &Ctx) -> Res<()> {
    let out = ctx.out()?;
    let table = FeatureTable::from_cohort(&ctx.cohort()?, ctx.source())?;
    table.save(&out.join("features.csv"))?;
    info!("{} patients", table.len());
    ctx.record(out, serde_json::json!({ "source": ctx.source(), "patients": table.len() }))
}

fn roc(ctx: &Ctx, input: Option<&Path>, level: f64) -> Res<()> {
    let out = ctx.out()?;
    let subset = ctx.subset(SubsetFilter::TRAIN_VALIDATION)?;
    if subset.contains(Subset::Test) {
        return Err(usage(format!("roc must not see test data (subset `{subset}`)")));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(usage(format!("--level {level} outside [0, 1)")));
    }
    let table = ctx.table(input)?;
    let ranking = rank_features_by_auc(&table, subset, &FeatureName::ALL, level)?;
    let summary: Vec<RocSummaryRow> = ranking.iter().map(RocSummaryRow::from).collect();
    write_csv_rows(&out.join("roc_summary.csv"), &summary)?;
    let rules: Vec<&CutoffRule> = ranking.iter().map(|r| &r.rule).collect();
    write_json(&out.join("cutoffs.json"), &rules, true)?;

    let mut curves = Vec::new();
    let mut columns = Vec::new();
    for f in FeatureName::ALL {
        let (x, y) = table.column(f, subset)?;
        if x.is_empty() {
            continue;
        }
        curves.extend(curve_rows(f.as_str(), &roc_curve(&x, &y)?));
        columns.push(f);
    }
    write_csv_rows(&out.join("roc_curves.csv"), &curves)?;

    let rows = table.select(subset)?;
    let mut delong = Vec::new();
    for (i, &fa) in columns.iter().enumerate() {
        for &fb in &columns[i + 1..] {
            let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
            for r in &rows {
                if let (Some(va), Some(vb)) = (r.features.get(fa), r.features.get(fb)) {
                    a.push(va);
                    b.push(vb);
                    y.push(r.features.diseased);
                }
            }
            delong.push(DeLongRow::new(fa.as_str(), fb.as_str(), &delong_test(&a, &b, &y)?));
        }
    }
    write_csv_rows(&out.join("delong.csv"), &delong)?;
    for r in &summary {
        println!(
            "{:6} AUC {:.1}% [{:.1}, {:.1}] cutoff {}",
            r.feature,
            100.0 * r.auc,
            100.0 * r.ci_lo,
            100.0 * r.ci_hi,
            r.cutoff
        );
    }
    ctx.record(out, serde_json::json!({ "subset": subset.to_string(), "level": level }))
}

fn cutoff_classify(ctx: &Ctx, input: Option<&Path>, rules_path: &Path) -> Res<()> {
    let out = ctx.out()?;
    let subset = ctx.subset(SubsetFilter::TEST)?;
    let rules: Vec<CutoffRule> = read_json(rules_path)?;
    let rule = match &ctx.opts.features {
        Some(f) => {
            let name: FeatureName = f.parse().map_err(|e: myomap_core::Error| usage(e.to_string()))?;
            rules
                .iter()
                .find(|r| r.feature == name.as_str())
                .ok_or_else(|| usage(format!("no rule for `{name}` in {}", rules_path.display())))?
        }
        None => rules.first().ok_or_else(|| usage("rules file is empty"))?,
    };
    let table = ctx.table(input)?;
    let outcomes = myomap_core::classifiers::apply_cutoff(&table, rule, subset)?;
    let report = ClassificationReport::from_outcomes(
        "cutoff",
        vec![rule.feature.clone()],
        Some(rule.cutoff),
        subset.to_string(),
        outcomes,
    )?;
    report.save(&out.join("report.json"))?;
    print_report(&report);
    ctx.record(out, serde_json::json!({ "rule": rule, "subset": subset.to_string() }))
}

fn print_report(r: &ClassificationReport) {
    println!(
        "{} [{}] F1 {:.1}% precision {:.1}% recall {:.1}% (tp {} fp {} tn {} fn {})",
        r.approach,
        r.features.join(", "),
        100.0 * r.f1,
        100.0 * r.precision,
        100.0 * r.recall,
        r.confusion.tp,
        r.confusion.fp,
        r.confusion.tn,
        r.confusion.fn_
    );
}

fn feature_sets(spec: &str, table: &FeatureTable) -> Res<Vec<Vec<FeatureName>>> {
    let mut ranking = None;
    let mut sets = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let sel = FeatureSelector::parse(part).map_err(|e| usage(e.to_string()))?;
        if sel.needs_ranking() && ranking.is_none() {
            ranking = Some(rank_features_by_auc(table, SubsetFilter::TRAIN_VALIDATION, &FeatureName::ALL, 0.95)?);
        }
        let set = sel.resolve(ranking.as_deref().unwrap_or(&[]));
        if set.is_empty() {
            return Err(usage(format!("feature selector `{part}` selects nothing")));
        }
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(usage("--features is empty"));
    }
    Ok(sets)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    kind: ClassifierKind,
    feature_sets: Vec<String>,
    grid_size: usize,
    best_index: usize,
    val_f1: f64,
    model: &'a TrainedClassifier,
}

fn train(ctx: &Ctx, input: Option<&Path>) -> Res<()> {
    let out = ctx.out()?;
    let kind: ClassifierKind =
        need(&ctx.opts.classifier, "classifier")?.parse().map_err(|e: myomap_core::Error| usage(e.to_string()))?;
    let seed = *need(&ctx.opts.seed, "seed")?;
    let grid = match ctx.opts.grid.as_deref() {
        None | Some("default") => default_grid(kind),
        Some(p) => {
            let g = load_grid(Path::new(p)).map_err(|e| usage(format!("--grid: {e}")))?;
            if g.iter().any(|h| h.kind() != kind) {
                return Err(usage(format!("--grid contains entries for a classifier other than {kind}")));
            }
            g
        }
    };
    let table = ctx.table(input)?;
    let sets = feature_sets(ctx.opts.features.as_deref().unwrap_or("all"), &table)?;
    let res = grid_search(&table, &sets, &grid, seed)?;
    res.model.save(&out.join("model.json"))?;
    let f = std::fs::File::create(out.join("search_log.csv")).map_err(anyhow::Error::from)?;
    write_search_log(&res.log, f)?;
    let summary = TrainSummary {
        kind,
        feature_sets: sets.iter().map(|s| s.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("+")).collect(),
        grid_size: grid.len(),
        best_index: res.best_index,
        val_f1: res.val_f1,
        model: &res.model,
    };
    println!(
        "{kind}: best {} on [{}] validation F1 {:.1}%",
        res.model.hyperparams,
        summary.feature_sets[res.best_index / grid.len()],
        100.0 * res.val_f1
    );
    ctx.record(
        out,
        serde_json::json!({
            "kind": kind,
            "grid": grid,
            "feature_sets": summary.feature_sets,
            "best_index": res.best_index,
            "val_f1": res.val_f1,
        }),
    )
}

fn eval(ctx: &Ctx, input: Option<&Path>, model_path: &Path) -> Res<()> {
    let out = ctx.out()?;
    let subset = ctx.subset(SubsetFilter::TEST)?;
    let model = TrainedClassifier::load(model_path)?;
    let table = ctx.table(input)?;
    let outcomes = predict(&model, &table, subset)?;
    let report = ClassificationReport::from_outcomes(
        model.kind.as_str(),
        model.feature_names.iter().map(|f| f.to_string()).collect(),
        None,
        subset.to_string(),
        outcomes,
    )?;
    report.save(&out.join("report.json"))?;
    print_report(&report);
    ctx.record(out, serde_json::json!({ "model": model_path, "subset": subset.to_string() }))
}

fn compare(ctx: &Ctx, a: &Path, b: &Path) -> Res<()> {
    let ra = ClassificationReport::load(a)?;
    let rb = ClassificationReport::load(b)?;
    let r = compare_methods(&ra, &rb)?;
    let row = ComparisonRow::new(&ra, &rb, &r);
    println!(
        "{} vs {}: W+ = {} n_eff = {} p = {:.4} ({})",
        row.method_a, row.method_b, row.statistic, row.n_effective, row.p, row.method
    );
    if let Some(out) = &ctx.opts.out {
        write_csv_rows(&out.join("comparison.csv"), &[row])?;
        write_json(&out.join("comparison.json"), &r, true)?;
        ctx.record(out, serde_json::json!({ "a": a, "b": b }))?;
    }
    Ok(())
}

fn bland_altman(ctx: &Ctx) -> Res<()> {
    let out = ctx.out()?;
    let (a, b) = ctx.pair()?;
    let subset = ctx.subset(SubsetFilter::ALL)?;
    let points = paired_myocardial_means(&ctx.cohort()?, &a, &b, subset)?;
    let groups = bland_altman_by_group(&points)?;
    let rows: Vec<BlandAltmanPointRow> = points.iter().map(BlandAltmanPointRow::from).collect();
    write_csv_rows(&out.join("bland_altman_points.csv"), &rows)?;
    write_json(&out.join("bland_altman_limits.json"), &groups, true)?;
    for g in &groups {
        println!(
            "{:8} n={:4} bias {:.2} LoA [{:.2}, {:.2}]",
            g.modality_group.label(),
            g.n,
            g.bias,
            g.loa_low,
            g.loa_high
        );
    }
    ctx.record(out, serde_json::json!({ "pair": format!("{a}:{b}"), "subset": subset.to_string() }))
}
