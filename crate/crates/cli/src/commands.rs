use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use toml::{Table, Value};
use viewsynth::checkpoint::Checkpoint;
use viewsynth::data::{eligible_centers, mean_abs_error_255, write_kitti_sequence};
use viewsynth::depthnet::{DepthNet, MODEL_NAME};
use viewsynth::evaluation::{evaluate_spacing, spacing_meters, SpacingTable, TableRow};
use viewsynth::gradcheck::{self, CheckResult};
use viewsynth::image::Image;
use viewsynth::inpaint::InpaintNet;
use viewsynth::pipeline::{render_window, DepthSource};
use viewsynth::trainer::{run_depth, run_inpaint, RunConfig, RunSummary, SequenceSet, Stage};
use viewsynth::Error;

use crate::{
    config, BaselineMedian, Cli, Command, DepthArgs, Evaluate, GenData, Overrides, Render, Split,
};

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    /// A check ran to completion and did not pass.
    Failed(String),
}

impl Failure {
    /// Process exit status.
    pub fn code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e {
                Error::Io { .. } | Error::Image { .. } => 2,
                Error::Shape { .. }
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Checkpoint(_) => 3,
                Error::Empty(_) => 4,
                Error::NonFiniteGradient(_) | Error::NonFiniteLoss(_) => 5,
            },
            Failure::Failed(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn progress(msg: &str) {
    eprintln!("{msg}");
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn apply(cfg: &mut RunConfig, o: &Overrides) -> Result<()> {
    if let Some(n) = o.iterations {
        cfg.iterations = Some(n);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(lr) = o.lr {
        cfg.adam.lr = lr;
    }
    cfg.validate()?;
    Ok(())
}

fn load_depth(cfg: &RunConfig, args: &DepthArgs) -> Result<Option<DepthNet<f32>>> {
    if args.gt_depth || cfg.gt_depth {
        return Ok(None);
    }
    let path = args.depth.as_ref().ok_or_else(|| {
        Error::InvalidArgument("a depth checkpoint (--depth) or --gt-depth is required".into())
    })?;
    let net = DepthNet::new(cfg.depth.clone(), 0)?;
    Checkpoint::load(path)?.load_into(MODEL_NAME, &net)?;
    Ok(Some(net))
}

fn source<'a>(cfg: &RunConfig, net: Option<&'a DepthNet<f32>>) -> DepthSource<'a> {
    match net {
        None => DepthSource::GroundTruth,
        Some(net) => DepthSource::Network {
            net,
            mode: cfg.depth_inference,
            min_disparity: cfg.min_disparity,
        },
    }
}

fn load_inpaint(cfg: &RunConfig, path: &Path) -> Result<InpaintNet<f32>> {
    let net = InpaintNet::new(cfg.inpaint.clone(), 0)?;
    Checkpoint::load(path)?.load_into(cfg.inpaint.model_name(), &net)?;
    Ok(net)
}

fn summary(s: &RunSummary) {
    eprintln!(
        "trained {} iterations (from {}) in {:.1} s, loss {} -> {}; checkpoint {}",
        s.iterations,
        s.start_iter,
        s.wall_seconds,
        s.first_loss.map_or("-".into(), |l| format!("{l:.6}")),
        s.final_loss.map_or("-".into(), |l| format!("{l:.6}")),
        s.checkpoint.display()
    );
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainDepth(a) => {
            let mut cfg = config::load(&a.config.files, Stage::Depth)?;
            apply(&mut cfg, &a.overrides)?;
            let data = cfg.data.train_set()?;
            let resume = a.resume.as_ref().map(Checkpoint::load).transpose()?;
            write(&a.out.join("config.toml"), &cfg.to_toml())?;
            let s = run_depth(&cfg, &data, &a.out, resume.as_ref(), &mut |m| progress(m))?;
            summary(&s);
            Ok(())
        }
        Command::TrainInpaint(a) => {
            let mut cfg = config::load(&a.config.files, Stage::Inpaint)?;
            apply(&mut cfg, &a.overrides)?;
            if let Some(s) = a.spacing {
                cfg.spacing = s;
            }
            if a.depth.gt_depth {
                cfg.gt_depth = true;
            }
            cfg.validate()?;
            let data = cfg.data.train_set()?;
            let depth = match (&a.depth.depth, cfg.gt_depth) {
                (Some(p), false) => Some(Checkpoint::load(p)?),
                _ => None,
            };
            let resume = a.resume.as_ref().map(Checkpoint::load).transpose()?;
            write(&a.out.join("config.toml"), &cfg.to_toml())?;
            let s = run_inpaint(
                &cfg,
                &data,
                depth.as_ref(),
                &a.out,
                resume.as_ref(),
                &mut |m| progress(m),
            )?;
            summary(&s);
            Ok(())
        }
        Command::Render(a) => render(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => {
            let mut lines = String::new();
            let mut report = |r: &CheckResult| {
                progress(&r.line());
                lines.push_str(&r.line());
                lines.push('\n');
            };
            let mut results = gradcheck::run(a.filter.as_deref(), a.seed, &mut report)?;
            if a.with_fixture {
                let r = gradcheck::run_suite(&gradcheck::corrupted_fixture(), a.seed)?;
                report(&r);
                results.push(r);
            }
            write(&a.out, &lines)?;
            if results.is_empty() {
                return Err(Error::Empty("no gradient check matches the filter".into()).into());
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Failed(format!(
                    "gradient check failed: {}",
                    failed.join(", ")
                )))
            }
        }
        Command::BaselineMedian(a) => baseline_median(a),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = config::load(&a.config.files, Stage::Depth)?;
    let train = cfg.data.train_set()?;
    let test = cfg.data.test_set()?;
    let mut ids = (Vec::new(), Vec::new());
    let mut size = None;
    for (k, seq) in train.iter().chain(&test).enumerate() {
        let id = k as u32;
        write_kitti_sequence(&a.out, id, seq.as_ref())?;
        if k < train.len() {
            ids.0.push(Value::Integer(id as i64));
        } else {
            ids.1.push(Value::Integer(id as i64));
        }
        if size.is_none() {
            let im = seq.left(0)?;
            size = Some([im.height, im.width]);
        }
        progress(&format!("wrote sequence {id:02} ({} frames)", seq.len()));
    }
    let root = fs::canonicalize(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let mut data = Table::new();
    data.insert("source".into(), Value::String("kitti".into()));
    data.insert("root".into(), Value::String(root.display().to_string()));
    data.insert("train_sequences".into(), Value::Array(ids.0));
    data.insert("test_sequences".into(), Value::Array(ids.1));
    if let Some([h, w]) = size {
        data.insert(
            "crop".into(),
            Value::Array(vec![Value::Integer(h as i64), Value::Integer(w as i64)]),
        );
    }
    let mut top = Table::new();
    top.insert("data".into(), Value::Table(data));
    write(
        &a.out.join("data.toml"),
        &toml::to_string(&top).expect("table serializes"),
    )
}

fn render(a: Render) -> Result<()> {
    let cfg = config::load(&a.config.files, Stage::Inpaint)?;
    let spacing = a.spacing.unwrap_or(cfg.spacing);
    let depth = load_depth(&cfg, &a.depth)?;
    let inpaint = load_inpaint(&cfg, &a.inpaint)?;
    let data: SequenceSet = match a.split {
        Split::Train => cfg.data.train_set()?,
        Split::Test => cfg.data.test_set()?,
    };
    let seq = data.get(a.sequence).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "sequence {} out of range ({} in split)",
            a.sequence,
            data.len()
        ))
    })?;
    let center = match a.frame {
        Some(c) => c,
        None => {
            let r = eligible_centers(seq.len(), spacing);
            if r.is_empty() {
                return Err(Error::Empty(format!("no window fits at spacing {spacing}")).into());
            }
            r.start
        }
    };
    let r = render_window(
        seq.as_ref(),
        center,
        spacing,
        source(&cfg, depth.as_ref()),
        &inpaint,
    )?;
    let out = &a.out;
    r.image.save_png(out.join("render.png"))?;
    r.median.save_png(out.join("median.png"))?;
    r.window.target.save_png(out.join("target.png"))?;
    for (k, v) in r.window.views.iter().enumerate() {
        v.rgb.save_png(out.join(format!("warped_{k}.png")))?;
        let mask = Image::from_vec(
            1,
            v.rgb.height,
            v.rgb.width,
            v.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        mask.save_png(out.join(format!("mask_{k}.png")))?;
    }
    let t = r.window.timings;
    let holes = r.holes.iter().filter(|&&h| h).count() as f64 / r.holes.len().max(1) as f64;
    let line = format!(
        "sequence={} frame={center} spacing={spacing} depth_s={:.4} warp_s={:.4} inpaint_s={:.4} total_s={:.4} mae={:.4} median_mae={:.4} holes={holes:.4}\n",
        a.sequence,
        t.depth,
        t.warp,
        t.inpaint,
        t.total(),
        mean_abs_error_255(&r.image, &r.window.target)?,
        mean_abs_error_255(&r.median, &r.window.target)?,
    );
    progress(line.trim_end());
    write(&out.join("report.txt"), &line)
}

fn evaluate(a: Evaluate) -> Result<()> {
    let cfg = config::load(&a.config.files, Stage::Inpaint)?;
    let depth = load_depth(&cfg, &a.depth)?;
    let src = source(&cfg, depth.as_ref());
    let data = cfg.data.test_set()?;
    let tested_meters = a
        .spacings
        .iter()
        .map(|&s| spacing_meters(&data, s))
        .collect::<viewsynth::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut median = Vec::new();
    let mut frames = String::from(
        "trained_spacing,test_spacing,sequence,frame,error,median_error,hole_fraction\n",
    );
    for (trained, path) in &a.models {
        let net = load_inpaint(&cfg, path)?;
        let mut errors = Vec::new();
        for &s in &a.spacings {
            let r = evaluate_spacing(&data, s, src, Some(&net), &mut |m| {
                progress(&format!("model {trained}: {m}"))
            })?;
            let ours = r.ours.as_ref().expect("network was given");
            errors.push(ours.mean_error);
            if median.len() < a.spacings.len() {
                median.push(r.median.mean_error);
            }
            for f in &r.frames {
                frames.push_str(&format!(
                    "{trained},{s},{},{},{},{},{}\n",
                    f.sequence,
                    f.center,
                    f.error.unwrap_or(f64::NAN),
                    f.median_error,
                    f.hole_fraction
                ));
            }
        }
        rows.push(TableRow {
            trained: *trained,
            trained_meters: spacing_meters(&data, *trained)?,
            errors,
        });
    }
    let table = SpacingTable {
        tested: a.spacings.clone(),
        tested_meters,
        rows,
        median: a.median.then_some(median),
    };
    write(&a.out.join("table.txt"), &table.to_text())?;
    write(&a.out.join("table.csv"), &table.to_csv())?;
    write(&a.out.join("frames.csv"), &frames)?;
    progress(table.to_text().trim_end());
    Ok(())
}

fn baseline_median(a: BaselineMedian) -> Result<()> {
    let cfg = config::load(&a.config.files, Stage::Inpaint)?;
    let depth = load_depth(&cfg, &a.depth)?;
    let src = source(&cfg, depth.as_ref());
    let data = cfg.data.test_set()?;
    let mut csv = String::from("test_spacing,test_meters,mean_error,mean_hole_fraction,frames\n");
    for &s in &a.spacings {
        let r = evaluate_spacing(&data, s, src, None, &mut |m| progress(m))?;
        let m = spacing_meters(&data, s)?.map_or(String::new(), |m| m.to_string());
        csv.push_str(&format!(
            "{s},{m},{},{},{}\n",
            r.median.mean_error,
            r.median.mean_hole_fraction().unwrap_or(0.0),
            r.median.frames()
        ));
    }
    progress(csv.trim_end());
    write(&PathBuf::from(&a.out).join("median.csv"), &csv)
}
