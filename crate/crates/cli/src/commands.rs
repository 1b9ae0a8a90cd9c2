use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aerodet::arch::{build_model, ArchConfig};
use aerodet::boxes::Bbox;
use aerodet::eval::{evaluate, load_detections, load_ground_truths};
use aerodet::flops::count_model;
use aerodet::loss::{
    ciou_loss, grad_check, iou, parse_box_pairs, random_overlapping_pairs, update_mean, wiou_loss,
    FocusMode, GradCheckReport, LossKind, WiouOutput, WiouState,
};
use aerodet::rng::Rng;
use aerodet::stats::{load_annotations, size_stats, SizeRule};
use aerodet::tide::{tide_report, Thresholds};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use crate::cli::{
    ArchCommand, ConfigArgs, EvalCommand, KindArg, LossCommand, ModeArg, RuleArg, StateArgs,
    StatsCommand,
};
use crate::output::{Emission, Sink};

/// Whether a subcommand's own pass/fail check held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// A published figure with a relative tolerance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Band {
    pub target: f64,
    pub rel_tol: f64,
}

impl Band {
    pub fn lo(&self) -> f64 {
        self.target * (1.0 - self.rel_tol)
    }

    pub fn hi(&self) -> f64 {
        self.target * (1.0 + self.rel_tol)
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo()..=self.hi()).contains(&v)
    }
}

/// Published size of the default detector: 2.3M parameters, 9.0 GFLOPs.
pub const PARAMS_M_ANCHOR: Band = Band {
    target: 2.3,
    rel_tol: 0.15,
};
pub const GFLOPS_ANCHOR: Band = Band {
    target: 9.0,
    rel_tol: 0.15,
};

fn load_config(args: &ConfigArgs) -> Result<ArchConfig> {
    let mut cfg = match &args.config {
        Some(path) => ArchConfig::load(path)?,
        None => ArchConfig::default(),
    };
    if args.p5 && !cfg.include_p5 {
        cfg.include_p5 = true;
        if !cfg.head_strides.contains(&32) {
            cfg.head_strides.push(32);
        }
        cfg.validate()?;
    }
    Ok(cfg)
}

fn config_inputs(args: &ConfigArgs) -> Vec<PathBuf> {
    args.config.iter().cloned().collect()
}

#[derive(Serialize)]
struct Group {
    name: String,
    params: u64,
    macs: u64,
}

#[derive(Serialize)]
struct Anchor {
    band: Band,
    value: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SummaryReport {
    config: ArchConfig,
    total_params: u64,
    params_millions: f64,
    total_macs: u64,
    gflops: f64,
    dysample_gflops: f64,
    se_gflops: f64,
    built_param_count: u64,
    groups: Vec<Group>,
    layers: Vec<aerodet::flops::FlopRow>,
    params_anchor: Anchor,
    gflops_anchor: Anchor,
}

pub fn arch(cmd: ArchCommand, sink: &Sink) -> Result<Verdict> {
    match cmd {
        ArchCommand::Summary { config, check } => arch_summary(&config, check, sink),
        ArchCommand::Forward {
            config,
            seed,
            batch,
        } => arch_forward(&config, seed, batch, sink),
    }
}

fn arch_summary(args: &ConfigArgs, check: bool, sink: &Sink) -> Result<Verdict> {
    let start = Instant::now();
    let cfg = load_config(args)?;
    let flops = count_model(&cfg)?;
    let built = build_model(&cfg)?.param_count() as u64;
    if built != flops.total_params {
        bail!(
            "accountant counts {} parameters but the built model stores {built}",
            flops.total_params
        );
    }
    let params_m = flops.params_millions();
    let params_anchor = Anchor {
        band: PARAMS_M_ANCHOR,
        value: params_m,
        pass: PARAMS_M_ANCHOR.contains(params_m),
    };
    let gflops_anchor = Anchor {
        band: GFLOPS_ANCHOR,
        value: flops.gflops,
        pass: GFLOPS_ANCHOR.contains(flops.gflops),
    };
    let verdict = Verdict::from_bool(params_anchor.pass && gflops_anchor.pass);

    let mut human = String::new();
    writeln!(human, "{:<10} {:>12} {:>16}", "group", "params", "MACs")?;
    for (name, p, m) in flops.by_group() {
        writeln!(human, "{name:<10} {p:>12} {m:>16}")?;
    }
    writeln!(
        human,
        "{:<10} {:>12} {:>16}",
        "total", flops.total_params, flops.total_macs
    )?;
    writeln!(human)?;
    writeln!(human, "input        {0}x{0}", cfg.input_size)?;
    writeln!(human, "heads        {:?}", cfg.head_strides)?;
    writeln!(human, "params       {params_m:.4} M")?;
    writeln!(human, "GFLOPs       {:.4}", flops.gflops)?;
    writeln!(
        human,
        "  DySample   {:.4}",
        flops.gflops_of_kind("dysample")
    )?;
    writeln!(human, "  SE         {:.6}", flops.gflops_of_kind("se"))?;
    for (label, a, unit) in [
        ("params", &params_anchor, " M"),
        ("GFLOPs", &gflops_anchor, ""),
    ] {
        writeln!(
            human,
            "{label:<6} anchor [{:.3}, {:.3}]{unit}: {}",
            a.band.lo(),
            a.band.hi(),
            if a.pass { "PASS" } else { "FAIL" }
        )?;
    }

    let report = SummaryReport {
        dysample_gflops: flops.gflops_of_kind("dysample"),
        se_gflops: flops.gflops_of_kind("se"),
        groups: flops
            .by_group()
            .into_iter()
            .map(|(name, params, macs)| Group { name, params, macs })
            .collect(),
        total_params: flops.total_params,
        params_millions: params_m,
        total_macs: flops.total_macs,
        gflops: flops.gflops,
        built_param_count: built,
        layers: flops.rows,
        config: cfg.clone(),
        params_anchor,
        gflops_anchor,
    };
    sink.emit(Emission {
        subcommand: "arch summary",
        config: json!({ "arch": cfg, "check": check }),
        seed: Some(cfg.seed),
        inputs: config_inputs(args),
        report,
        human,
    })?;
    sink.timing("arch summary", start);
    Ok(if check { verdict } else { Verdict::Pass })
}

#[derive(Serialize)]
struct ForwardReport {
    seed: u64,
    batch: usize,
    input_size: usize,
    param_count: usize,
    param_checksum: String,
    taps: Vec<aerodet::arch::TapRecord>,
}

fn arch_forward(
    args: &ConfigArgs,
    seed: Option<u64>,
    batch: usize,
    sink: &Sink,
) -> Result<Verdict> {
    let start = Instant::now();
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let model = build_model(&cfg)?;
    let x = model.sample_input(batch, cfg.seed);
    let taps = model.tap_manifest(&x)?;
    let mut human = String::new();
    writeln!(human, "{:<12} {:<22} checksum", "tap", "shape")?;
    for t in &taps {
        writeln!(
            human,
            "{:<12} {:<22} {}",
            t.name,
            format!("{:?}", t.shape),
            t.checksum
        )?;
    }
    writeln!(
        human,
        "params {} sha256 {}",
        model.param_count(),
        model.param_checksum()
    )?;
    let report = ForwardReport {
        seed: cfg.seed,
        batch,
        input_size: cfg.input_size,
        param_count: model.param_count(),
        param_checksum: model.param_checksum(),
        taps,
    };
    sink.emit(Emission {
        subcommand: "arch forward",
        config: json!({ "arch": cfg, "batch": batch }),
        seed: Some(cfg.seed),
        inputs: config_inputs(args),
        report,
        human,
    })?;
    sink.timing("arch forward", start);
    Ok(Verdict::Pass)
}

fn wiou_state(s: &StateArgs) -> WiouState {
    WiouState {
        running_mean: s.running_mean,
        delta: s.delta,
        gamma: s.gamma,
        mode: match s.mode {
            ModeArg::PaperAlpha => FocusMode::PaperAlpha,
            ModeArg::ReferenceR => FocusMode::ReferenceR,
        },
        ..WiouState::default()
    }
}

#[derive(Serialize)]
struct PairLoss {
    pred: [f64; 4],
    gt: [f64; 4],
    iou: f64,
    ciou: f64,
    wiou: WiouOutput,
}

#[derive(Serialize)]
struct LossReport {
    state: WiouState,
    pairs: Vec<PairLoss>,
    mean_iou_loss: f64,
    mean_ciou: f64,
    mean_wiou: f64,
    /// Running mean after one update with this batch.
    next_running_mean: f64,
}

fn single_pair(v: Option<Vec<f64>>, name: &str) -> Result<[f64; 4]> {
    let v = v.with_context(|| format!("--{name} is required without --pairs"))?;
    v.try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("--{name} takes 4 numbers, got {}", v.len()))
}

pub fn loss(cmd: LossCommand, sink: &Sink) -> Result<Verdict> {
    match cmd {
        LossCommand::Eval {
            pairs,
            pred,
            gt,
            state,
        } => loss_eval(pairs.as_deref(), pred, gt, &state, sink),
        LossCommand::GradCheck {
            pairs,
            seed,
            kind,
            tol,
            state,
        } => loss_grad_check(pairs, seed, kind, tol, &state, sink),
    }
}

fn loss_eval(
    path: Option<&Path>,
    pred: Option<Vec<f64>>,
    gt: Option<Vec<f64>>,
    state: &StateArgs,
    sink: &Sink,
) -> Result<Verdict> {
    let st = wiou_state(state);
    let boxes = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("failed to read {}", p.display()))?;
            parse_box_pairs(&text, &p.display().to_string())?
        }
        None => vec![(
            Bbox::from_array(single_pair(pred, "pred")?)?,
            Bbox::from_array(single_pair(gt, "gt")?)?,
        )],
    };
    if boxes.is_empty() {
        bail!("no box pairs to evaluate");
    }
    let mut rows = Vec::with_capacity(boxes.len());
    for (a, b) in &boxes {
        rows.push(PairLoss {
            pred: a.as_array(),
            gt: b.as_array(),
            iou: iou(a, b),
            ciou: ciou_loss(a, b),
            wiou: wiou_loss(a, b, &st)?,
        });
    }
    let n = rows.len() as f64;
    let l_iou: Vec<f64> = rows.iter().map(|r| r.wiou.l_iou).collect();
    let next = update_mean(&st, &l_iou)?;
    let report = LossReport {
        state: st,
        mean_iou_loss: l_iou.iter().sum::<f64>() / n,
        mean_ciou: rows.iter().map(|r| r.ciou).sum::<f64>() / n,
        mean_wiou: rows.iter().map(|r| r.wiou.loss).sum::<f64>() / n,
        next_running_mean: next.running_mean,
        pairs: rows,
    };
    let mut human = String::new();
    writeln!(
        human,
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "pair", "IoU", "CIoU", "beta", "focus", "WIoU"
    )?;
    for (i, r) in report.pairs.iter().enumerate() {
        writeln!(
            human,
            "{i:>5} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            r.iou, r.ciou, r.wiou.beta, r.wiou.focus, r.wiou.loss
        )?;
    }
    writeln!(human, "next running mean {:.6}", report.next_running_mean)?;
    sink.emit(Emission {
        subcommand: "loss eval",
        config: json!({ "state": st, "single": path.is_none() }),
        seed: None,
        inputs: path.map(Path::to_path_buf).into_iter().collect(),
        report,
        human,
    })?;
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct GradCheckRun {
    pairs: usize,
    seed: u64,
    tol: f64,
    results: Vec<GradCheckReport>,
    pass: bool,
}

fn loss_grad_check(
    n: usize,
    seed: u64,
    kind: KindArg,
    tol: f64,
    state: &StateArgs,
    sink: &Sink,
) -> Result<Verdict> {
    let start = Instant::now();
    let st = wiou_state(state);
    let kinds: Vec<LossKind> = match kind {
        KindArg::Iou => vec![LossKind::Iou],
        KindArg::Ciou => vec![LossKind::Ciou],
        KindArg::Wiou => vec![LossKind::Wiou],
        KindArg::All => LossKind::ALL.to_vec(),
    };
    let pairs = random_overlapping_pairs(&mut Rng::new(seed), n);
    let results = kinds
        .iter()
        .map(|&k| grad_check(k, &pairs, &st))
        .collect::<aerodet::Result<Vec<_>>>()?;
    let pass = results
        .iter()
        .all(|r| r.max_rel_error <= tol && r.kinks == 0);
    let mut human = String::new();
    writeln!(
        human,
        "{:<6} {:>12} {:>12} {:>6} verdict",
        "loss", "max rel", "mean rel", "kinks"
    )?;
    for r in &results {
        writeln!(
            human,
            "{:<6} {:>12.3e} {:>12.3e} {:>6} {}",
            r.kind.to_string(),
            r.max_rel_error,
            r.mean_rel_error,
            r.kinks,
            if r.max_rel_error <= tol && r.kinks == 0 {
                "PASS"
            } else {
                "FAIL"
            }
        )?;
    }
    sink.emit(Emission {
        subcommand: "loss grad-check",
        config: json!({ "pairs": n, "kinds": kinds, "tol": tol, "state": st }),
        seed: Some(seed),
        inputs: Vec::new(),
        report: GradCheckRun {
            pairs: n,
            seed,
            tol,
            results,
            pass,
        },
        human,
    })?;
    sink.timing("loss grad-check", start);
    Ok(Verdict::from_bool(pass))
}

pub fn eval(cmd: EvalCommand, sink: &Sink) -> Result<Verdict> {
    let start = Instant::now();
    match cmd {
        EvalCommand::Map { files, conf } => {
            let gts = load_ground_truths(&files.gt)?;
            let dets = load_detections(&files.det)?;
            let report = evaluate(&dets, &gts, conf)?;
            let mut human = String::new();
            writeln!(
                human,
                "{:>6} {:>6} {:>9} {:>12}",
                "class", "gt", "AP50", "AP50:95"
            )?;
            for c in &report.per_class {
                let mean = c.ap.iter().sum::<f64>() / c.ap.len() as f64;
                writeln!(
                    human,
                    "{:>6} {:>6} {:>9.4} {:>12.4}",
                    c.class_id, c.num_gt, c.ap[0], mean
                )?;
            }
            writeln!(human, "{:<14}{:.4}", "mAP@0.5", report.map50)?;
            writeln!(human, "{:<14}{:.4}", "mAP@[.5,.95]", report.map50_95)?;
            writeln!(human, "{:<14}{:.4}", format!("P@{conf}"), report.precision)?;
            writeln!(human, "{:<14}{:.4}", format!("R@{conf}"), report.recall)?;
            sink.emit(Emission {
                subcommand: "eval map",
                config: json!({ "conf": conf }),
                seed: None,
                inputs: vec![files.gt, files.det],
                report,
                human,
            })?;
        }
        EvalCommand::Tide { files, fg, bg } => {
            let gts = load_ground_truths(&files.gt)?;
            let dets = load_detections(&files.det)?;
            let report = tide_report(&dets, &gts, Thresholds::new(fg, bg)?)?;
            let mut human = String::new();
            writeln!(human, "base mAP@0.5 {:.2}", report.base_map50)?;
            writeln!(human, "{:<5} {:>7} {:>9}", "error", "count", "dAP")?;
            for r in &report.rows {
                writeln!(
                    human,
                    "{:<5} {:>7} {:>9.2}",
                    r.error.to_string(),
                    r.count,
                    r.penalty
                )?;
            }
            writeln!(human, "residual {:.2}", report.residual)?;
            sink.emit(Emission {
                subcommand: "eval tide",
                config: json!({ "fg": fg, "bg": bg }),
                seed: None,
                inputs: vec![files.gt, files.det],
                report,
                human,
            })?;
        }
    }
    sink.timing("eval", start);
    Ok(Verdict::Pass)
}

pub fn stats(cmd: StatsCommand, sink: &Sink) -> Result<Verdict> {
    let StatsCommand::Annotations {
        path,
        rule,
        thresholds,
    } = cmd;
    let rule = match rule {
        RuleArg::MaxSide => SizeRule::MaxSide,
        RuleArg::Area => SizeRule::Area,
    };
    let anns = load_annotations(&path)?;
    let report = size_stats(&anns, &thresholds, rule)?;
    let mut human = String::new();
    writeln!(human, "instances {} (rule {rule})", report.total)?;
    for s in &report.small {
        writeln!(
            human,
            "below {:>5}: {:>8} {:>7.2}%",
            s.threshold,
            s.count,
            100.0 * s.fraction
        )?;
    }
    writeln!(human, "per class:")?;
    for (c, n) in &report.per_class {
        writeln!(human, "  {c:>4} {n:>8}")?;
    }
    writeln!(human, "area histogram:")?;
    for b in &report.area_histogram {
        let hi = b.hi.map_or_else(|| "inf".to_owned(), |h| h.to_string());
        writeln!(human, "  [{:>8}, {:>8}) {:>8}", b.lo, hi, b.count)?;
    }
    sink.emit(Emission {
        subcommand: "stats annotations",
        config: json!({ "rule": rule, "thresholds": thresholds }),
        seed: None,
        inputs: vec![path],
        report,
        human,
    })?;
    Ok(Verdict::Pass)
}
