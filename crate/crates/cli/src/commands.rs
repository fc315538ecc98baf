//! One function per subcommand. Every text output starts with the resolved
//! settings that produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use caap_core::analysis::{attention_group_stats, default_end_layer};
use caap_core::caap::{attribute, AttributionRequest};
use caap_core::io::image_io::{encode_p2, load_image, load_mask, save_png};
use caap_core::io::mapfile::{heatmap_image, MapFile};
use caap_core::io::{load_model, save_model};
use caap_core::metrics::{evaluate, EvalOptions, Metric, DEFAULT_REFERENCE};
use caap_core::toy::{gen_model, gen_planted_pair, ToySpec};
use caap_core::{
    AttributionMode, BlankSpec, Image, LayerRange, LayerSpec, MetricReport, ModelBundle, SegMask,
    SelectionOp, ViTConfig,
};
use serde::Serialize;

use crate::args::*;
use crate::exit::config_err;

pub const REPORT_FORMAT: &str = "caap-report/1";

type Echo = BTreeMap<String, String>;

fn echo_header(echo: &Echo) -> String {
    echo.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// PNG for `.png` paths; otherwise a P2 graymap with the settings as
/// comment lines.
fn write_image(path: &Path, image: &Image, echo: &Echo) -> Result<()> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        save_png(path, image)?;
        return Ok(());
    }
    let body = encode_p2(image);
    let (magic, rest) = body.split_at(3);
    write_text(path, &format!("{magic}{}{rest}", echo_header(echo)))
}

fn toy_spec(t: &ToyArgs, file: &FileConfig) -> ToySpec {
    let config = ViTConfig {
        layers: t.layers,
        dim: t.dim,
        heads: t.heads,
        grid: t.grid,
        patch_px: t.patch_px,
        channels: t.channels,
        classes: t.classes,
        mlp_ratio: t.mlp_ratio,
        ..ToySpec::DEFAULT_CONFIG
    };
    ToySpec {
        seed: t.seed.or(file.seed).unwrap_or(0),
        config,
        weight_scale: t.weight_scale,
    }
}

pub fn gen_model_cmd(a: &GenModelArgs, file: &FileConfig) -> Result<()> {
    let model = gen_model(&toy_spec(&a.toy, file))?;
    save_model(&a.out, &model)?;
    println!("fingerprint={:016x}", model.fingerprint());
    Ok(())
}

pub fn gen_planted_cmd(a: &GenPlantedArgs, file: &FileConfig) -> Result<()> {
    let spec = toy_spec(&a.toy, file);
    spec.config.validate()?;
    let (x, x0) = gen_planted_pair(&spec, a.patch)?;
    let c = spec.config;
    let echo = Echo::from([
        ("command".into(), "gen-planted".into()),
        ("seed".into(), spec.seed.to_string()),
        ("patch".into(), a.patch.to_string()),
        ("grid".into(), c.grid.to_string()),
        ("patch_px".into(), c.patch_px.to_string()),
        ("channels".into(), c.channels.to_string()),
    ]);
    write_image(&a.out, &x, &echo)?;
    if let Some(p) = &a.blank_out {
        write_image(p, &x0, &echo)?;
    }
    if let Some(p) = &a.mask_out {
        let patches: Vec<bool> = (0..c.num_patches()).map(|i| i == a.patch).collect();
        let mask = SegMask::from_patches(c.grid, c.patch_px, &patches)?;
        write_image(p, &mask_image(&mask), &echo)?;
    }
    Ok(())
}

fn mask_image(mask: &SegMask) -> Image {
    let data = mask
        .pixels()
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    Image::new(mask.width(), mask.height(), 1, data).expect("mask dims are positive")
}

fn required(flag: Option<&PathBuf>, file: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(file)
        .cloned()
        .ok_or_else(|| config_err(format!("--{name} is required (flag or config file)")))
}

fn blank_spec(kind: BlankKind, seed: u64, channels: usize) -> BlankSpec {
    let idx = match kind {
        BlankKind::Black => 0,
        BlankKind::White => 1,
        BlankKind::Mean => 2,
        BlankKind::Noisy => 3,
        BlankKind::Blurnoisy => 4,
    };
    BlankSpec::all_kinds(seed, channels).swap_remove(idx)
}

/// Model, image, and attribution settings after merging flags, the config
/// file, and defaults.
struct Run {
    model: ModelBundle,
    x: Image,
    req: AttributionRequest,
    seed: u64,
    /// Explicit or `auto`, before resolution against the model depth.
    layers: LayerSpec,
    echo: Echo,
}

fn load_run(run: &RunArgs, file: &FileConfig, command: &str) -> Result<Run> {
    let model_path = required(run.model.as_ref(), file.model.as_ref(), "model")?;
    let image_path = required(run.image.as_ref(), file.image.as_ref(), "image")?;
    let model = load_model(&model_path)?;
    let x = load_image(&image_path)?;
    model.check_image(&x)?;
    let cfg = model.config;

    let seed = run.seed.or(file.seed).unwrap_or(0);
    let kind = run.blank.or(file.blank).unwrap_or(BlankKind::White);
    let mode: AttributionMode = match run.mode.as_ref().or(file.mode.as_ref()) {
        Some(s) => s.parse()?,
        None => AttributionMode::default(),
    };
    let select: SelectionOp = match run.select.as_ref().or(file.select.as_ref()) {
        Some(s) => s.parse()?,
        None => SelectionOp::default(),
    };
    let layers: LayerSpec = match run.layers.as_ref().or(file.layers.as_ref()) {
        Some(s) => s.parse()?,
        None => LayerSpec::Auto,
    };
    let range = layers.resolve(cfg.layers)?;
    let class = match run.class.or(file.class) {
        Some(c) if c >= cfg.classes => {
            return Err(config_err(format!(
                "class {c} outside {} classes",
                cfg.classes
            )))
        }
        Some(c) => c,
        None => argmax(&model.predict(&x)?),
    };

    let echo = Echo::from([
        ("command".into(), command.into()),
        ("model".into(), model_path.display().to_string()),
        (
            "model_fingerprint".into(),
            format!("{:016x}", model.fingerprint()),
        ),
        ("image".into(), image_path.display().to_string()),
        ("blank".into(), kind_name(kind).into()),
        ("seed".into(), seed.to_string()),
        ("class".into(), class.to_string()),
        ("mode".into(), mode.name().into()),
        ("select".into(), select.label()),
        ("layers".into(), range.to_string()),
    ]);
    Ok(Run {
        req: AttributionRequest {
            class,
            mode,
            select,
            range,
            blank: blank_spec(kind, seed, cfg.channels),
        },
        model,
        x,
        seed,
        layers,
        echo,
    })
}

fn kind_name(kind: BlankKind) -> &'static str {
    match kind {
        BlankKind::Black => "black",
        BlankKind::White => "white",
        BlankKind::Mean => "mean",
        BlankKind::Noisy => "noisy",
        BlankKind::Blurnoisy => "blurnoisy",
    }
}

/// Lowest index among the maxima.
fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn attribute_cmd(a: &AttributeArgs, file: &FileConfig) -> Result<()> {
    let run = load_run(&a.run, file, "attribute")?;
    let mut echo = run.echo.clone();
    if !run.req.mode.uses_layers() {
        echo.insert("layers".into(), "unused".into());
    }
    let map = attribute(&run.model, &run.x, &run.req)?;
    MapFile {
        map: map.clone(),
        config: echo.clone(),
    }
    .write(&a.out)?;
    if let Some(p) = &a.heatmap {
        write_image(p, &heatmap_image(&map, run.model.config.patch_px)?, &echo)?;
    }
    Ok(())
}

struct MetricPlan {
    opts: EvalOptions,
    echo: Echo,
}

/// Without an explicit list, every metric whose inputs are present.
fn metric_plan(
    m: &MetricArgs,
    file: &FileConfig,
    have_model: bool,
    have_mask: bool,
) -> Result<MetricPlan> {
    let metrics: Vec<Metric> = match m.metrics.as_ref().or(file.metrics.as_ref()) {
        Some(list) => {
            let mut out: Vec<Metric> = Vec::new();
            for s in list {
                let metric: Metric = s.trim().parse()?;
                if !out.contains(&metric) {
                    out.push(metric);
                }
            }
            out
        }
        None => Metric::ALL
            .into_iter()
            .filter(|x| (have_model || !x.needs_model()) && (have_mask || !x.needs_mask()))
            .collect(),
    };
    for x in &metrics {
        if x.needs_model() && !have_model {
            return Err(config_err(format!(
                "metric {} needs --model and --image",
                x.name()
            )));
        }
        if x.needs_mask() && !have_mask {
            return Err(config_err(format!("metric {} needs --mask", x.name())));
        }
    }
    let reference = m.reference.or(file.reference).unwrap_or(DEFAULT_REFERENCE);
    let blur_kernel = m.blur_kernel.or(file.blur_kernel);
    let names: Vec<&str> = Metric::ALL
        .iter()
        .filter(|x| metrics.contains(x))
        .map(|x| x.name())
        .collect();
    let mut echo = Echo::from([("metrics".into(), names.join(","))]);
    if have_model {
        echo.insert("reference".into(), reference.to_string());
        echo.insert(
            "blur_kernel".into(),
            blur_kernel.map_or("auto".into(), |k| k.to_string()),
        );
    }
    Ok(MetricPlan {
        opts: EvalOptions {
            metrics,
            reference,
            blur_kernel,
        },
        echo,
    })
}

#[derive(Serialize)]
struct ReportFile<'a> {
    format: &'static str,
    config: &'a Echo,
    metrics: &'a MetricReport,
}

pub fn eval_cmd(a: &EvalArgs, file: &FileConfig) -> Result<()> {
    let mapfile = MapFile::read(&a.map)?;
    let map = &mapfile.map;
    let model_path = a.model.as_ref().or(file.model.as_ref());
    let image_path = a.image.as_ref().or(file.image.as_ref());
    let model_input = match (model_path, image_path) {
        (Some(m), Some(i)) => {
            let model = load_model(m)?;
            if model.fingerprint() != map.model_fingerprint {
                return Err(config_err(format!(
                    "map was computed with model {:016x}, not {:016x}",
                    map.model_fingerprint,
                    model.fingerprint()
                )));
            }
            let x = load_image(i)?;
            model.check_image(&x)?;
            Some((model, x, m.clone(), i.clone()))
        }
        (None, None) => None,
        _ => return Err(config_err("--model and --image must be given together")),
    };
    let mask = a.mask.as_ref().map(|p| load_mask(p)).transpose()?;
    let plan = metric_plan(&a.metric, file, model_input.is_some(), mask.is_some())?;

    let mut echo = Echo::from([
        ("command".into(), "eval".into()),
        ("map".into(), a.map.display().to_string()),
        ("class".into(), map.class_id.to_string()),
        (
            "model_fingerprint".into(),
            format!("{:016x}", map.model_fingerprint),
        ),
    ]);
    if let Some((_, _, m, i)) = &model_input {
        echo.insert("model".into(), m.display().to_string());
        echo.insert("image".into(), i.display().to_string());
    }
    if let Some(p) = &a.mask {
        echo.insert("mask".into(), p.display().to_string());
    }
    echo.extend(plan.echo);

    let ev = evaluate(
        &map.scores,
        map.class_id,
        model_input.as_ref().map(|(m, x, _, _)| (m, x)),
        mask.as_ref(),
        &plan.opts,
    )?;
    let report = ReportFile {
        format: REPORT_FORMAT,
        config: &echo,
        metrics: &ev.report,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.out, &json)?;
    if let Some(dir) = &a.curves {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let header = echo_header(&echo);
        for (name, curve) in [("deletion", &ev.deletion), ("insertion", &ev.insertion)] {
            if let Some(c) = curve {
                write_text(
                    &dir.join(format!("{name}.csv")),
                    &format!("{header}{}", c.to_csv()),
                )?;
            }
        }
    }
    print!("{}", ev.report.to_kv());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("na".into(), |x| x.to_string())
}

fn report_row(key: &str, r: &MetricReport) -> String {
    format!(
        "{key},{},{},{},{},{},{},{},{}\n",
        fmt_opt(r.del_auc),
        fmt_opt(r.ins_auc),
        fmt_opt(r.ins_minus_del),
        fmt_opt(r.aupr1),
        fmt_opt(r.aupr0),
        r.pg_hit.map_or("na".into(), |x| x.to_string()),
        fmt_opt(r.entropy),
        fmt_opt(r.gini),
    )
}

pub fn ablate_cmd(a: &AblateArgs, file: &FileConfig) -> Result<()> {
    let run = load_run(&a.run, file, "ablate")?;
    let mask = a.mask.as_ref().map(|p| load_mask(p)).transpose()?;
    let plan = metric_plan(&a.metric, file, true, mask.is_some())?;
    let cfg = run.model.config;

    let (column, rows): (&str, Vec<(String, AttributionRequest)>) = match a.axis {
        Axis::Blank => (
            "blank",
            BlankSpec::all_kinds(run.seed, cfg.channels)
                .into_iter()
                .map(|b| {
                    let req = AttributionRequest {
                        blank: b.clone(),
                        ..run.req.clone()
                    };
                    (b.label().to_string(), req)
                })
                .collect(),
        ),
        Axis::Select => (
            "select",
            ["nopad", "box1", "box2", "manhattan1"]
                .into_iter()
                .map(|s| {
                    let select: SelectionOp = s.parse().expect("fixed labels parse");
                    (
                        s.to_string(),
                        AttributionRequest {
                            select,
                            ..run.req.clone()
                        },
                    )
                })
                .collect(),
        ),
        Axis::Layers => {
            if !run.req.mode.uses_layers() {
                return Err(config_err(format!(
                    "mode {} has no layer range to sweep",
                    run.req.mode.name()
                )));
            }
            if cfg.layers < 2 {
                return Err(config_err("the layer sweep needs at least two layers"));
            }
            (
                "l_e",
                (1..=cfg.layers)
                    .map(|e| {
                        let range = LayerRange::new(1, e);
                        (
                            e.to_string(),
                            AttributionRequest {
                                range,
                                ..run.req.clone()
                            },
                        )
                    })
                    .collect(),
            )
        }
    };

    let mut echo = run.echo.clone();
    echo.extend(plan.echo.clone());
    echo.insert("axis".into(), column.into());
    if let Some(p) = &a.mask {
        echo.insert("mask".into(), p.display().to_string());
    }
    match a.axis {
        Axis::Blank => echo.remove("blank"),
        Axis::Select => echo.remove("select"),
        Axis::Layers => echo.insert(
            "layers".into(),
            format!("1..l_e (auto end {})", default_end_layer(cfg.layers)),
        ),
    };
    if !run.req.mode.uses_layers() {
        echo.insert("layers".into(), "unused".into());
    } else if a.axis != Axis::Layers {
        echo.insert("layers".into(), run.layers.resolve(cfg.layers)?.to_string());
    }

    let mut out = echo_header(&echo);
    out.push_str(&format!(
        "{column},del_auc,ins_auc,ins_minus_del,aupr1,aupr0,pg_hit,entropy,gini\n"
    ));
    for (key, req) in rows {
        let map = attribute(&run.model, &run.x, &req)?;
        let ev = evaluate(
            &map.scores,
            req.class,
            Some((&run.model, &run.x)),
            mask.as_ref(),
            &plan.opts,
        )?;
        out.push_str(&report_row(&key, &ev.report));
    }
    write_text(&a.out, &out)
}

pub fn attn_stats_cmd(a: &AttnStatsArgs, file: &FileConfig) -> Result<()> {
    let model_path = required(a.model.as_ref(), file.model.as_ref(), "model")?;
    let image_path = required(a.image.as_ref(), file.image.as_ref(), "image")?;
    let model = load_model(&model_path)?;
    let x = load_image(&image_path)?;
    let masks = a
        .masks
        .iter()
        .map(|p| load_mask(p))
        .collect::<caap_core::Result<Vec<_>>>()?;
    let side = model.config.image_side();
    for m in &masks {
        m.require_size(side)?;
    }
    let cache = model.forward_full(&x)?;
    let stats = attention_group_stats(&cache, &model, &masks)?;
    let mask_list: Vec<String> = a.masks.iter().map(|p| p.display().to_string()).collect();
    let echo = Echo::from([
        ("command".into(), "attn-stats".into()),
        ("model".into(), model_path.display().to_string()),
        (
            "model_fingerprint".into(),
            format!("{:016x}", model.fingerprint()),
        ),
        ("image".into(), image_path.display().to_string()),
        ("masks".into(), mask_list.join(";")),
    ]);
    write_text(&a.out, &format!("{}{}", echo_header(&echo), stats.to_csv()))
}
