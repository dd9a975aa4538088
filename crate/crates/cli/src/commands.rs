use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use top_core::eval::{self, EvalObject, EvalScan};
use top_core::io;
use top_core::mos::{self, Category, Keyframe, LabeledBox, MotionClass, TrackedBox};
use top_core::objectives::{self, StatePrediction};
use top_core::overlap::{self, AdjacentScan};
use top_core::recon;
use top_core::sim::{self, LinearTrajectory, SceneSpec, SpinningLidarSpec};
use top_core::{OccupancyState, Scan};

use crate::config::RunConfig;
use crate::dataset::{frame_name, Dataset, Outputs};
use crate::error::{CliError, Result};

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{what} {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::data(format!("SchemaError: {what} {}: {e}", path.display())))
}

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: &'a T,
}

fn write_config(outputs: &mut Outputs, dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    outputs.write(dir.join("config.json"), s.as_bytes())
}

/// Overlap and reconstruction files for every scan with `n` neighbors on
/// both sides.
pub fn extract(cfg: &RunConfig, dataset: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::new(dataset);
    let total = ds.scan_count()?;
    let n = cfg.extraction.n_adjacent as usize;
    let poses = ds.load_poses(total)?;
    if total < 2 * n + 1 {
        return Err(CliError::data(format!(
            "InsufficientScans: {total} scans, need at least {} for n = {n}",
            2 * n + 1
        )));
    }
    let times = ds.load_times(total, cfg.extraction.scan_period_s)?;
    let scans: Vec<Scan> = (0..total)
        .map(|k| io::read_scan_bin(&ds.scan_path(k)))
        .collect::<std::result::Result<_, _>>()?;

    let mut outputs = Outputs::new();
    let ov_dir = outputs.dir(&out_dir.join("overlaps"))?;
    let rc_dir = outputs.dir(&out_dir.join("recon"))?;
    let hash = cfg.hash();
    for c in n..total - n {
        let mut current = scans[c].clone();
        current.time = 0.0;
        let adjacents: Vec<AdjacentScan> = (-(n as i64)..=n as i64)
            .filter(|&o| o != 0)
            .map(|o| {
                let k = (c as i64 + o) as usize;
                let mut s = scans[k].clone();
                s.pose = poses[c].relative_to(&poses[k]);
                s.time = times[k] - times[c];
                AdjacentScan {
                    offset: o as i8,
                    scan: s.into_working_frame(),
                }
            })
            .collect();
        let mut ecfg = cfg.extraction.clone();
        ecfg.rng_seed = cfg.scan_seed(c);
        let set = overlap::extract_sequence(&current, &adjacents, &ecfg, &cfg.sensor)?;
        let samples = recon::sample_recon_points(
            &current,
            cfg.recon.occupied_per_beam,
            cfg.recon.free_per_beam,
            &cfg.sensor,
            cfg.scan_seed(c) ^ 0x5245_434f_4e00,
        )?;
        io::write_overlap_set(&outputs.file(ov_dir.join(frame_name(c, "tovp"))), &set, &cfg.sensor, hash)?;
        io::write_recon_samples(&outputs.file(rc_dir.join(frame_name(c, "trec"))), &samples, &cfg.sensor, hash)?;
        let [f, o, u] = set.counts();
        log::info!("scan {c}: {} overlap points, {} recon samples", set.len(), samples.len());
        emit(
            out,
            format!(
                "{c:06}: {} overlap points (free {f}, occupied {o}, unknown {u}), {} recon samples",
                set.len(),
                samples.len()
            ),
        )?;
    }
    write_config(&mut outputs, out_dir, cfg)?;
    outputs.commit();
    Ok(())
}

pub struct SimulateArgs<'a> {
    pub scene: &'a Path,
    pub trajectory: &'a Path,
    pub lidar: Option<&'a Path>,
    pub azimuths: Option<usize>,
    pub out_dir: &'a Path,
}

/// A dataset of simulated scans with poses, times, ground-truth motion
/// labels, empty ego masks, and world-frame boxes of the moving objects.
pub fn simulate(cfg: &RunConfig, args: &SimulateArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(args.scene)
        .map_err(|e| CliError::data(format!("scene {}: {e}", args.scene.display())))?;
    let scene = SceneSpec::from_toml(&text)?;
    let traj: LinearTrajectory = read_toml(args.trajectory, "trajectory")?;
    let mut lidar = match args.lidar {
        Some(p) => read_toml::<SpinningLidarSpec>(p, "lidar")?,
        None => SpinningLidarSpec::hdl32_like(1024),
    };
    if let Some(a) = args.azimuths {
        if a == 0 {
            return Err(CliError::Usage("--azimuths must be positive".into()));
        }
        lidar.azimuth_step_rad = std::f64::consts::TAU / a as f64;
    }
    lidar.validate()?;
    let samples = traj.samples();
    if samples.is_empty() {
        return Err(CliError::data("EmptyTrajectory: trajectory has no poses"));
    }
    if !(traj.scan_period_s > 0.0) {
        return Err(CliError::data("SchemaError: trajectory scan_period_s must be positive"));
    }

    let ds = Dataset::new(args.out_dir);
    let mut outputs = Outputs::new();
    outputs.dir(args.out_dir)?;
    outputs.dir(&args.out_dir.join("scans"))?;
    outputs.dir(&args.out_dir.join("labels"))?;
    outputs.dir(&args.out_dir.join("ego"))?;
    let mut moving_points = 0usize;
    for (k, (t, pose)) in samples.iter().enumerate() {
        let s = sim::simulate_scan(&scene, &lidar, pose, *t);
        let labels = s.motion_labels(&scene);
        moving_points += labels.iter().filter(|m| **m == MotionClass::Moving).count();
        io::write_scan_bin(&outputs.file(ds.scan_path(k)), &s.scan)?;
        io::write_motion_labels(&outputs.file(ds.label_path(k)), &labels)?;
        io::write_flags(&outputs.file(ds.ego_path(k)), &vec![false; s.scan.len()])?;
    }
    let poses: Vec<_> = samples.iter().map(|(_, p)| *p).collect();
    let times: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
    io::write_poses(&outputs.file(ds.poses_path()), &poses)?;
    outputs.write(ds.times_path(), io::format_times(&times).as_bytes())?;

    let tracks: Vec<TrackedBox> = scene
        .moving_boxes
        .iter()
        .enumerate()
        .map(|(m, b)| TrackedBox {
            instance_id: b.instance_id.clone().unwrap_or_else(|| format!("moving_{m}")),
            category: b.category.unwrap_or(Category::Vehicle),
            keyframes: times
                .iter()
                .enumerate()
                .map(|(k, &t)| Keyframe {
                    bbox: b.at(t),
                    timestamp: t,
                    frame: Some(k as u32),
                })
                .collect(),
        })
        .collect();
    outputs.write(ds.boxes_path(), io::format_boxes_jsonl(&tracks).as_bytes())?;
    write_config(&mut outputs, args.out_dir, cfg)?;
    emit(
        out,
        format!(
            "{} scans, {} beams per sweep, {moving_points} moving points",
            samples.len(),
            lidar.beam_count()
        ),
    )?;
    outputs.commit();
    Ok(())
}

fn frame_boxes(cfg: &RunConfig, tracks: &[TrackedBox], frame: usize, pose: &top_core::Pose) -> Vec<(usize, LabeledBox)> {
    mos::boxes_for_frame(tracks, frame as u32, pose, &cfg.thresholds)
}

/// Per-point motion labels from tracked boxes.
pub fn label(cfg: &RunConfig, dataset: &Path, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::new(dataset);
    let total = ds.scan_count()?;
    let poses = ds.load_poses(total)?;
    let tracks = io::read_boxes_jsonl(&ds.boxes_path())?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| dataset.join("labels"));
    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    let mut counts = [0usize; 3];
    for k in 0..total {
        let scan = io::read_scan_bin(&ds.scan_path(k))?;
        let boxes: Vec<LabeledBox> = frame_boxes(cfg, &tracks, k, &poses[k]).into_iter().map(|(_, b)| b).collect();
        let labels = mos::label_points(&scan, &boxes, cfg.label.box_margin_m);
        for l in &labels {
            counts[l.code() as usize] += 1;
        }
        io::write_motion_labels(&outputs.file(dir.join(frame_name(k, "label"))), &labels)?;
    }
    emit(
        out,
        format!(
            "{total} scans labeled: {} static, {} moving, {} unknown points",
            counts[0], counts[1], counts[2]
        ),
    )?;
    outputs.commit();
    Ok(())
}

fn load_eval_input(
    cfg: &RunConfig,
    ds: &Dataset,
    predictions: Option<&Path>,
    labels: Option<&Path>,
    with_predictions: bool,
) -> Result<Vec<EvalScan>> {
    let total = ds.scan_count()?;
    let tracks = if ds.boxes_path().exists() {
        io::read_boxes_jsonl(&ds.boxes_path())?
    } else {
        Vec::new()
    };
    let poses = if tracks.is_empty() {
        Vec::new()
    } else {
        ds.load_poses(total)?
    };
    let margin = cfg.label.box_margin_m;
    let mut scans = Vec::with_capacity(total);
    for k in 0..total {
        let scan = io::read_scan_bin(&ds.scan_path(k))?;
        let n = scan.len();
        let label_path = match labels {
            Some(d) => d.join(frame_name(k, "label")),
            None => ds.label_path(k),
        };
        let ground_truth = io::read_motion_labels(&label_path, Some(n))?;
        let predicted_moving = if with_predictions {
            let p = match predictions {
                Some(d) => d.join(frame_name(k, "pred")),
                None => ds.prediction_path(k),
            };
            io::read_flags(&p, Some(n))?
        } else {
            vec![false; n]
        };
        let ego = ds.ego_path(k);
        let ego_mask = if ego.exists() {
            io::read_flags(&ego, Some(n))?
        } else {
            vec![false; n]
        };
        let moving_objects = if tracks.is_empty() {
            Vec::new()
        } else {
            frame_boxes(cfg, &tracks, k, &poses[k])
                .into_iter()
                .filter(|(_, b)| b.motion == MotionClass::Moving)
                .map(|(t, b)| {
                    let mut bbox = b.bbox;
                    bbox.size += top_core::Vec3::repeat(2.0 * margin);
                    EvalObject {
                        instance_id: tracks[t].instance_id.clone(),
                        bbox,
                    }
                })
                .collect()
        };
        scans.push(EvalScan {
            points: scan.points,
            predicted_moving,
            ground_truth,
            ego_mask,
            moving_objects,
        });
    }
    Ok(scans)
}

pub struct EvalArgs<'a> {
    pub dataset: &'a Path,
    pub predictions: Option<&'a Path>,
    pub labels: Option<&'a Path>,
    pub report: Option<&'a Path>,
}

/// Recall_obj and both IoU variants, as a JSON report.
pub fn evaluate(cfg: &RunConfig, args: &EvalArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let ds = Dataset::new(args.dataset);
    let input = load_eval_input(cfg, &ds, args.predictions, args.labels, true)?;
    let report = eval::evaluate(&input)?;
    let doc = WithConfig { config: cfg, body: &report };
    match args.report {
        Some(p) => {
            let mut outputs = Outputs::new();
            io::write_json(&outputs.file(p.to_path_buf()), &doc)?;
            outputs.commit();
            let fmt = |m: &eval::Metric| {
                if m.empty {
                    "undefined".to_string()
                } else {
                    format!("{:.4}", m.percent)
                }
            };
            emit(out, format!("recall_obj: {}", fmt(&report.recall_obj)))?;
            emit(out, format!("iou_wo_ego: {}", fmt(&report.iou_wo_ego)))?;
            emit(out, format!("iou_conventional: {}", fmt(&report.iou_conventional)))?;
        }
        None => emit(out, serde_json::to_string_pretty(&doc).expect("report serializes"))?,
    }
    Ok(())
}

pub struct StatsArgs<'a> {
    pub dataset: Option<&'a Path>,
    pub counts: Option<&'a Path>,
    pub quantiles: &'a [f64],
    pub csv: Option<&'a Path>,
}

fn parse_counts(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("counts {}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| t.parse::<u64>().map_err(|e| CliError::data(format!("counts: {t:?}: {e}"))))
        .collect()
}

/// Object size distribution of moving objects.
pub fn stats(cfg: &RunConfig, args: &StatsArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let counts = match (args.counts, args.dataset) {
        (Some(c), None) => parse_counts(c)?,
        (None, Some(d)) => {
            let ds = Dataset::new(d);
            eval::moving_object_point_counts(&load_eval_input(cfg, &ds, None, None, false)?)
        }
        _ => return Err(CliError::Usage("pass exactly one of --counts or --dataset".into())),
    };
    let cdf = eval::object_size_cdf(&counts);
    emit(out, format!("objects: {}, points: {}", cdf.total_objects, cdf.total_points))?;
    emit(out, "size\tobject_fraction\tpoint_fraction")?;
    for p in &cdf.curve {
        emit(out, format!("{}\t{:.6}\t{:.6}", p.size, p.object_fraction, p.point_fraction))?;
    }
    for line in cdf.quantile_lines(args.quantiles) {
        emit(out, line)?;
    }
    if let Some(csv) = args.csv {
        let mut s = String::from("size,object_fraction,point_fraction\n");
        for p in &cdf.curve {
            s.push_str(&format!("{},{},{}\n", p.size, p.object_fraction, p.point_fraction));
        }
        let mut outputs = Outputs::new();
        outputs.write(csv.to_path_buf(), s.as_bytes())?;
        outputs.commit();
    }
    Ok(())
}

pub struct LossArgs<'a> {
    pub overlap: Option<&'a Path>,
    pub overlap_predictions: Option<&'a Path>,
    pub recon: Option<&'a Path>,
    pub recon_predictions: Option<&'a Path>,
    pub per_beam: Option<usize>,
}

fn predictions(path: &Path) -> Result<Vec<StatePrediction>> {
    Ok(io::read_probabilities(path)?.into_iter().map(StatePrediction::new).collect())
}

fn paired<'a>(a: Option<&'a Path>, b: Option<&'a Path>, what: &str) -> Result<Option<(&'a Path, &'a Path)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage(format!("--{what} and --{what}-pred must be given together"))),
    }
}

/// Reference losses of given predictions against stored labels.
pub fn loss_check(cfg: &RunConfig, args: &LossArgs<'_>, out: &mut dyn Write) -> Result<()> {
    let ov = paired(args.overlap, args.overlap_predictions, "overlap")?;
    let rc = paired(args.recon, args.recon_predictions, "recon")?;
    if ov.is_none() && rc.is_none() {
        return Err(CliError::Usage("nothing to check: pass --overlap and/or --recon".into()));
    }
    let w = &cfg.loss.weights;
    let (mut lo, mut lr) = (None, None);
    if let Some((file, pred)) = ov {
        let (_, set) = io::read_overlap_set(file)?;
        let states: Vec<OccupancyState> = set.points.iter().map(|p| p.state).collect();
        let confs: Vec<f64> = set.points.iter().map(|p| p.confidence).collect();
        let l = objectives::overlap_loss(&states, &confs, &predictions(pred)?, w)?;
        lo = Some(l);
        emit(out, format!("overlap_loss: {l:.9}"))?;
    }
    if let Some((file, pred)) = rc {
        let (_, samples) = io::read_recon_samples(file)?;
        let per_beam = args
            .per_beam
            .unwrap_or((cfg.recon.occupied_per_beam + cfg.recon.free_per_beam) as usize);
        let n_points = samples
            .iter()
            .map(|s| s.current_point_index)
            .collect::<BTreeSet<_>>()
            .len();
        let states: Vec<OccupancyState> = samples.iter().map(|s| s.state).collect();
        let l = objectives::recon_loss(&states, &predictions(pred)?, w, n_points, per_beam)?;
        lr = Some(l);
        emit(out, format!("recon_loss: {l:.9}"))?;
    }
    if let (Some(a), Some(b)) = (lo, lr) {
        emit(out, format!("total_loss: {:.9}", objectives::total_loss(a, b)))?;
    }
    Ok(())
}
