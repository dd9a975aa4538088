//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use top_core::eval::{self, EvalObject, EvalScan};
use top_core::geometry;
use top_core::model::{self, OccupancyState, Pose, Scan, SensorConfig};
use top_core::mos::{self, Category, MotionClass, OrientedBox, ThresholdTable};
use top_core::objectives::{self, ClassWeights, StatePrediction};
use top_core::overlap::{self, Aabb, AdjacentScan, ExtractionConfig, OverlapPoint, OverlapSet};
use top_core::recon;
use top_core::sim::{self, LinearTrajectory, OracleFrame, SceneSpec, SpinningLidarSpec};
use top_core::Vec3;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn scan_at(origin: Vec3, points: Vec<Vec3>, time: f64) -> Scan {
    Scan {
        points,
        sensor_origin: origin,
        time,
        ..Default::default()
    }
}

fn unbounded() -> ExtractionConfig {
    ExtractionConfig {
        bounds: Aabb::unbounded(),
        ..Default::default()
    }
}

/// Brute-force coplanarity, written directly from the definitions.
fn oracle_coplanar(d_i: &Vec3, a: &Vec3, d_j: &Vec3, theta: f64) -> bool {
    let n = d_i.cross(&(a / a.norm()));
    let n = n / n.norm();
    let angle = n.dot(d_j).clamp(-1.0, 1.0).acos() - std::f64::consts::FRAC_PI_2;
    angle.abs() <= theta / 2.0
}

/// Brute-force overlap locations of one coplanar pair, in sample order, and
/// the smallest current range a kept sample may have.
fn oracle_locations(p_i: &Vec3, a: &Vec3, p_j: &Vec3, theta: f64) -> (Vec<Vec3>, f64) {
    let d_i = p_i.normalize();
    let d_j = (p_j - a).normalize();
    let m = d_i.cross(&d_j);
    if m.norm() < 1e-9 {
        return (vec![], 0.0);
    }
    let q = d_i * (a.cross(&d_j).dot(&m) / m.dot(&m));
    if q.dot(&d_i) <= 0.0 || (q - a).dot(&d_j) <= 0.0 {
        return (vec![], 0.0);
    }
    let alpha = d_i.dot(&d_j).clamp(-1.0, 1.0).acos();
    if alpha > theta {
        return (vec![q], 0.0);
    }
    let (s, t) = ((alpha / 2.0).sin(), (theta / 2.0).tan());
    let start = (q.norm() * (s + t) - (q - a).norm() * t) / (s + 2.0 * t);
    if start <= 0.0 {
        return (vec![], 0.0);
    }
    let o1 = *p_i;
    let o2 = d_i * p_j.dot(&d_i);
    (vec![o1, o2, (o1 + o2) / 2.0, (o1 + q) / 2.0, (o2 + q) / 2.0], start)
}

fn criterion_1() -> Outcome {
    let sensor = SensorConfig::default();
    let theta = sensor.divergence_angle_rad;
    let band = -sensor.occupied_confidence_threshold.ln() / sensor.decay_rate_per_meter;
    let cfg = unbounded();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let started = Instant::now();
    let (mut total_pairs, mut total_points) = (0usize, 0usize);
    for trial in 0..100 {
        let a = random_unit(&mut rng) * rng.random_range(0.2..3.0);
        let n_cur = rng.random_range(50..=250);
        let n_adj = 500 - n_cur;
        let cur: Vec<Vec3> = (0..n_cur)
            .map(|_| random_unit(&mut rng) * rng.random_range(2.0..40.0))
            .collect();
        let mut adj = Vec::with_capacity(n_adj);
        while adj.len() < n_adj {
            let kind = rng.random_range(0..3);
            let i = rng.random_range(0..n_cur);
            let d_i = cur[i].normalize();
            let p = match kind {
                // Aimed at a point of a current centerline.
                0 => {
                    let target = d_i * rng.random_range(1.0..45.0);
                    a + (target - a).normalize() * rng.random_range(1.0..50.0)
                }
                // Nearly parallel to a current beam, inside its plane with the
                // adjacent origin.
                1 => {
                    let n = d_i.cross(&a).normalize();
                    let u = n.cross(&d_i);
                    let tilt = rng.random_range(-1.2..1.2) * theta;
                    let off = rng.random_range(-0.4..0.4) * theta;
                    let d = (d_i + u * tilt + n * off).normalize();
                    a + d * rng.random_range(2.0..40.0)
                }
                _ => a + random_unit(&mut rng) * rng.random_range(1.0..50.0),
            };
            adj.push(p);
        }
        let current = scan_at(Vec3::zeros(), cur.clone(), 0.0);
        let adjacent = scan_at(a, adj.clone(), 0.5);

        let mut expected_pairs = Vec::new();
        let mut expected: BTreeMap<(u32, u32, u8), Vec3> = BTreeMap::new();
        for (i, p_i) in cur.iter().enumerate() {
            let d_i = p_i.normalize();
            for (j, p_j) in adj.iter().enumerate() {
                let d_j = (p_j - a).normalize();
                if !oracle_coplanar(&d_i, &a, &d_j, theta) {
                    continue;
                }
                expected_pairs.push((i as u32, j as u32));
                let (locations, min_range) = oracle_locations(p_i, &a, p_j, theta);
                for (rank, o) in locations.into_iter().enumerate() {
                    let r = o.dot(&d_i);
                    if r > 0.0 && r >= min_range && r <= p_i.norm() + band && (o - a).dot(&d_j) > 0.0 {
                        expected.insert((i as u32, j as u32, rank as u8), o);
                    }
                }
            }
        }
        let pairs = overlap::coplanar_pairs(&current, &adjacent, &sensor, cfg.cell_size(&sensor))
            .map_err(|e| e.to_string())?;
        check(
            pairs == expected_pairs,
            format!(
                "trial {trial}: {} indexed pairs vs {} brute-force pairs",
                pairs.len(),
                expected_pairs.len()
            ),
        )?;
        let got = overlap::extract_scan_pair(&current, &adjacent, 1, &cfg, &sensor).map_err(|e| e.to_string())?;
        check(
            got.len() == expected.len(),
            format!("trial {trial}: {} overlap points vs {} expected", got.len(), expected.len()),
        )?;
        for p in &got {
            let key = (p.current_point_index, p.adjacent_point_index, p.sample_rank);
            let want = expected
                .get(&key)
                .ok_or_else(|| format!("trial {trial}: unexpected overlap {key:?}"))?;
            check(
                (p.position - want).norm() <= 1e-9,
                format!("trial {trial}: {key:?} off by {:.3e} m", (p.position - want).norm()),
            )?;
        }
        total_pairs += pairs.len();
        total_points += got.len();
    }
    let secs = started.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "100 scan pairs, {total_pairs} coplanar pairs and {total_points} overlap points identical to brute force ({secs:.1} s)"
    ))
}

fn criterion_2() -> Outcome {
    let sensor = SensorConfig::default();
    let theta = sensor.divergence_angle_rad;
    let t = (theta / 2.0).tan();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 10_000 {
        let alpha = rng.random_range(1e-6..theta);
        let q = rng.random_range(0.5..120.0);
        let qa = q + rng.random_range(-3.0..3.0);
        let Ok(start) = geometry::segment_start_range(q, qa, alpha, &sensor) else {
            continue;
        };
        n += 1;
        let s = (alpha / 2.0).sin();
        // Second equation solved for the adjacent start distance, then both
        // equations checked.
        let b_j = ((q - start) * s - start * t) / t;
        let lhs1 = q - start;
        let rhs1 = qa - b_j;
        let lhs2 = (q - start) * s;
        let rhs2 = start * t + b_j * t;
        let r1 = (lhs1 - rhs1).abs() / lhs1.abs().max(rhs1.abs());
        let r2 = (lhs2 - rhs2).abs() / lhs2.abs().max(rhs2.abs());
        worst = worst.max(r1).max(r2);
    }
    let sym = geometry::segment_start_range(100.0, 100.0, theta, &sensor).map_err(|e| e.to_string())?;
    check((sym - 100.0 / 3.0).abs() < 1e-3, format!("symmetric case gave {sym}"))?;
    check(worst < 1e-9, format!("worst relative residual {worst:.3e}"))?;
    Ok(format!("10^4 configurations, worst relative residual {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let sensor = SensorConfig::default();
    let c = model::confidence(&sensor, 10.0 + 0.105361, 10.0).map_err(|e| e.to_string())?;
    check((c - 0.9).abs() <= 1e-6, format!("confidence {c}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let cfg = SensorConfig {
            decay_rate_per_meter: rng.random_range(0.1..10.0),
            occupied_confidence_threshold: rng.random_range(0.05..0.99),
            ..sensor
        };
        let reported = rng.random_range(0.1..80.0);
        let range = reported + rng.random_range(-5.0..5.0);
        let band = -cfg.occupied_confidence_threshold.ln() / cfg.decay_rate_per_meter;
        let edge = reported + band;
        if (range - edge).abs() < 1e-9 {
            continue;
        }
        let want = if range < reported {
            OccupancyState::Free
        } else if range <= edge {
            OccupancyState::Occupied
        } else {
            OccupancyState::Unknown
        };
        let got = model::occupancy_state(&cfg, range, reported).map_err(|e| e.to_string())?;
        check(got == want, format!("range {range}, reported {reported}: {got:?} != {want:?}"))?;
    }
    Ok(format!("confidence {c:.7}; partition holds on 10^4 random triples"))
}

struct Sequence {
    scene: SceneSpec,
    samples: Vec<(f64, Pose)>,
    scans: Vec<Scan>,
}

fn simulate_sequence(scene_file: &str, trajectory: LinearTrajectory, lidar: &SpinningLidarSpec) -> Sequence {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let text = std::fs::read_to_string(root.join(scene_file)).expect("scene file");
    let scene = SceneSpec::from_toml(&text).expect("valid scene");
    let samples = trajectory.samples();
    let scans = samples
        .iter()
        .map(|(t, pose)| sim::simulate_scan(&scene, lidar, pose, *t).scan)
        .collect();
    Sequence { scene, samples, scans }
}

/// Current scan `c` at the origin and its neighbors placed in its frame.
fn window(seq: &Sequence, c: usize, n: usize) -> (Scan, Vec<AdjacentScan>) {
    let mut current = seq.scans[c].clone();
    current.pose = Pose::identity();
    current.time = 0.0;
    let adjacents = (c - n..=c + n)
        .filter(|&k| k != c)
        .map(|k| {
            let mut s = seq.scans[k].clone();
            s.pose = seq.samples[c].1.relative_to(&seq.samples[k].1);
            s.time = seq.samples[k].0 - seq.samples[c].0;
            AdjacentScan {
                offset: (k as i64 - c as i64) as i8,
                scan: s.into_working_frame(),
            }
        })
        .collect();
    (current, adjacents)
}

fn trajectory(velocity: Vec3, yaw_rate: f64) -> LinearTrajectory {
    LinearTrajectory {
        start: Vec3::zeros(),
        velocity,
        yaw: 0.0,
        yaw_rate,
        scan_period_s: 0.5,
        count: 13,
        start_time: 0.0,
    }
}

fn criterion_4() -> Outcome {
    let sensor = SensorConfig::default();
    let lidar = SpinningLidarSpec::hdl32_like(1024);
    let cfg = ExtractionConfig::default();
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut inconsistent = 0;
    // A stationary sensor in a static room only re-observes its own hits, so
    // every overlap sits on a state boundary; the walking run is the one that
    // exercises the room.
    for (name, label, velocity, yaw_rate) in [
        ("room.toml", "room (still)", Vec3::zeros(), 0.0),
        ("room.toml", "room (walking)", Vec3::new(0.6, 0.3, 0.0), 0.08),
        ("corridor.toml", "corridor", Vec3::zeros(), 0.0),
        ("wall.toml", "wall", Vec3::new(5.0, 0.0, 0.0), 0.0),
    ] {
        let seq = simulate_sequence(name, trajectory(velocity, yaw_rate), &lidar);
        let (current, adjacents) = window(&seq, 6, 6);
        let set = overlap::extract_sequence(&current, &adjacents, &cfg, &sensor).map_err(|e| e.to_string())?;
        let frame = OracleFrame {
            world_from_current: seq.samples[6].1,
            time_origin: seq.samples[6].0,
        };
        let report = sim::oracle_compare(&set, &adjacents, &seq.scene, &frame, &sensor, 0.02).map_err(|e| e.to_string())?;
        match report.agreement {
            Some(agreement) => {
                lines.push(format!(
                    "{label} {:.3}% of {} ({} near a boundary)",
                    100.0 * agreement,
                    report.compared,
                    report.near_boundary
                ));
                if agreement < 0.99 {
                    failures.push(format!("{label}: {:.3}% (confusion {:?})", 100.0 * agreement, report.confusion));
                }
            }
            None if label == "room (still)" => {
                lines.push(format!("{label} all {} points on a boundary", report.near_boundary));
            }
            None => failures.push(format!("{label}: nothing compared of {} points", set.len())),
        }
        if name == "corridor.toml" {
            inconsistent = sim::temporal_inconsistencies(&set, 0.05, 10).len();
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(failures.is_empty(), failures.join("; "))?;
    check(inconsistent > 0, "no location labeled free at one time and occupied at another")?;
    check(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{}; moving box shows free/occupied at the same location ({secs:.1} s)",
        lines.join(", ")
    ))
}

fn criterion_5() -> Outcome {
    let mk = |state, k: usize| OverlapPoint {
        position: Vec3::new(k as f64, 0.0, 0.0),
        time: 0.5,
        state,
        confidence: 1.0,
        current_point_index: k as u32,
        adjacent_scan_offset: 1,
        adjacent_point_index: 0,
        sample_rank: 0,
    };
    let mut points = Vec::new();
    for (state, count) in [
        (OccupancyState::Occupied, 100),
        (OccupancyState::Free, 10_000),
        (OccupancyState::Unknown, 1_000),
    ] {
        for _ in 0..count {
            points.push(mk(state, points.len()));
        }
    }
    let set = OverlapSet::new(points);
    let mut results = Vec::new();
    for threads in [1, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        results.push(pool.install(|| overlap::balance_classes(&set, 42)));
    }
    let counts = results[0].counts();
    check(
        counts == [500, 100, 100],
        format!("free/occupied/unknown = {counts:?}"),
    )?;
    check(results.windows(2).all(|w| w[0] == w[1]), "differs across thread counts")?;
    Ok("100/500/100 occupied/free/unknown, identical for 1, 2, 8 threads".into())
}

fn criterion_6() -> Outcome {
    let sensor = SensorConfig::default();
    let lidar = SpinningLidarSpec::hdl32_like(512);
    let seq = simulate_sequence("room.toml", trajectory(Vec3::zeros(), 0.0), &lidar);
    let scan = &seq.scans[0];
    let samples = recon::sample_recon_points(
        scan,
        recon::DEFAULT_OCCUPIED_PER_BEAM,
        recon::DEFAULT_FREE_PER_BEAM,
        &sensor,
        5,
    )
    .map_err(|e| e.to_string())?;
    check(
        samples.len() == scan.len() * 30,
        format!("{} samples for {} beams", samples.len(), scan.len()),
    )?;
    let mut per_beam = vec![[0usize; 3]; scan.len()];
    for s in &samples {
        let i = s.current_point_index as usize;
        per_beam[i][s.state.index()] += 1;
        let beam = model::beam_from_point(scan, i).map_err(|e| e.to_string())?;
        let r = model::range_along_beam(&beam, &s.position);
        let state = model::occupancy_state(&sensor, r, beam.range).map_err(|e| e.to_string())?;
        check(state == s.state, format!("beam {i}: sample at {r} re-labels as {state:?}"))?;
    }
    check(
        per_beam.iter().all(|c| *c == [25, 5, 0]),
        "per-beam split is not 5 occupied + 25 free",
    )?;
    Ok(format!("{} beams x 30 samples, all states re-verified", scan.len()))
}

fn naive_loss(states: &[OccupancyState], weights: &[f64], preds: &[StatePrediction], w: &ClassWeights, norm: f64) -> f64 {
    let class_w = [w.free, w.occupied, w.unknown];
    let mut total = 0.0;
    for (k, s) in states.iter().enumerate() {
        for c in 0..3 {
            let y = if s.index() == c { 1.0 } else { 0.0 };
            if y > 0.0 {
                total += -weights[k] * class_w[c] * y * preds[k].probabilities[c].ln();
            }
        }
    }
    total / norm
}

fn criterion_7() -> Outcome {
    let w = ClassWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let states: Vec<OccupancyState> = (0..n).map(|_| OccupancyState::ALL[rng.random_range(0..3)]).collect();
        let confs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=1.0)).collect();
        let preds: Vec<StatePrediction> = (0..n)
            .map(|_| {
                let raw: [f64; 3] = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
                let sum: f64 = raw.iter().sum();
                StatePrediction::new(raw.map(|x| x / sum))
            })
            .collect();
        let got = objectives::overlap_loss(&states, &confs, &preds, &w).map_err(|e| e.to_string())?;
        let want = naive_loss(&states, &confs, &preds, &w, n as f64);
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));

        let per_beam = 1 + n % 5;
        let m = n - n % per_beam;
        if m > 0 {
            let got = objectives::recon_loss(&states[..m], &preds[..m], &w, m / per_beam, per_beam)
                .map_err(|e| e.to_string())?;
            let want = naive_loss(&states[..m], &vec![1.0; m], &preds[..m], &w, m as f64);
            worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
    }
    check(worst <= 1e-12, format!("worst relative error {worst:.3e}"))?;
    let hand = objectives::overlap_loss(
        &[OccupancyState::Occupied],
        &[1.0],
        &[StatePrediction::new([0.2, 0.5, 0.3])],
        &w,
    )
    .map_err(|e| e.to_string())?;
    check(hand == -5.0 * 0.5f64.ln(), format!("hand case {hand}"))?;
    check(format!("{hand:.6}") == "3.465736", format!("hand case prints {hand:.6}"))?;
    Ok(format!("10^3 batches, worst relative error {worst:.2e}; hand case {hand:.6}"))
}

fn line_scan(gt: &[MotionClass], pred: &[bool], ego: &[bool], objects: Vec<EvalObject>) -> EvalScan {
    EvalScan {
        points: (0..gt.len()).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect(),
        predicted_moving: pred.to_vec(),
        ground_truth: gt.to_vec(),
        ego_mask: ego.to_vec(),
        moving_objects: objects,
    }
}

fn span(id: &str, from: usize, to: usize) -> EvalObject {
    EvalObject {
        instance_id: id.into(),
        bbox: OrientedBox {
            center: Vec3::new((from + to) as f64 / 2.0, 0.0, 0.0),
            size: Vec3::new((to - from) as f64 + 0.5, 1.0, 1.0),
            yaw: 0.0,
        },
    }
}

fn criterion_8() -> Outcome {
    use MotionClass::{Moving, Static};
    let gt = [Moving, Moving, Moving, Moving, Moving, Moving];
    let pred = [true, true, true, false, false, false];
    let s = line_scan(&gt, &pred, &[false; 6], vec![span("A", 0, 1), span("B", 2, 5)]);
    let recall = eval::recall_obj(&[s]).map_err(|e| e.to_string())?;
    check(recall.percent == 62.5, format!("recall_obj {}", recall.percent))?;

    let mut gt = vec![Moving; 10];
    gt.extend([Static; 5]);
    gt.extend([Moving; 100]);
    let mut pred = vec![true; 5];
    pred.extend([false; 5]);
    pred.extend([true; 5]);
    pred.extend([true; 100]);
    let mut ego = vec![false; 15];
    ego.extend([true; 100]);
    let s = line_scan(&gt, &pred, &ego, vec![]);
    let r = eval::evaluate(&[s]).map_err(|e| e.to_string())?;
    let (wo, conv) = (r.iou_wo_ego.percent, r.iou_conventional.percent);
    check((wo - 100.0 * 5.0 / 15.0).abs() < 1e-9, format!("IoU w/o ego {wo}"))?;
    check((conv - 100.0 * 105.0 / 115.0).abs() < 1e-9, format!("conventional IoU {conv}"))?;
    check(conv > wo, "ego points did not inflate the conventional IoU")?;
    Ok(format!(
        "recall_obj 62.5%; IoU w/o ego {wo:.2}% vs conventional {conv:.2}%"
    ))
}

fn criterion_9() -> Outcome {
    let table = ThresholdTable::default();
    let cases = [
        (Category::Human, 0.375, 0.6),
        (Category::Cycle, 0.375, 1.0),
        (Category::Vehicle, 0.5, 1.0),
    ];
    for (cat, sta, mov) in cases {
        let at = |v: f64| mos::classify_motion(v, cat, &table);
        check(at(sta) == MotionClass::UnknownMotion, format!("{cat:?} at {sta}"))?;
        check(at(mov) == MotionClass::UnknownMotion, format!("{cat:?} at {mov}"))?;
        check(at(sta - 1e-9) == MotionClass::Static, format!("{cat:?} just below {sta}"))?;
        check(at(mov + 1e-9) == MotionClass::Moving, format!("{cat:?} just above {mov}"))?;
    }
    Ok("six threshold boundaries are unknown; strict inequalities on both sides".into())
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenes = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let ds = tmp.path().join("ds");
    let mut sink = Vec::new();
    let code = top_cli::run(
        [
            "top",
            "simulate",
            "--scene",
            scenes.join("wall.toml").to_str().unwrap(),
            "--trajectory",
            scenes.join("drive.traj.toml").to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
        ],
        &mut sink,
    );
    check(code == 0, format!("simulate exited {code}"))?;
    let mut outputs = Vec::new();
    let mut times = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = tmp.path().join(format!("out{threads}"));
        let started = Instant::now();
        let code = top_cli::run(
            [
                "top",
                "extract",
                "--threads",
                threads,
                "--n",
                "6",
                "--dataset",
                ds.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            &mut sink,
        );
        times.push(started.elapsed().as_secs_f64());
        check(code == 0, format!("extract with {threads} threads exited {code}"))?;
        outputs.push(dir_bytes(&out));
    }
    let files = outputs[0].len();
    check(files == 3, format!("expected overlap, recon, and config files, found {files}"))?;
    check(outputs.windows(2).all(|w| w[0] == w[1]), "outputs differ across thread counts")?;
    let worst = times.iter().cloned().fold(0.0, f64::max);
    check(worst < 30.0, format!("slowest run took {worst:.1} s"))?;
    let bytes: usize = outputs[0].values().map(Vec::len).sum();
    Ok(format!(
        "32x1024, 13 scans, n=6: byte-identical for 1/2/8 threads ({bytes} bytes); runs {:.1}/{:.1}/{:.1} s",
        times[0], times[1], times[2]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("geometry oracle equivalence", criterion_1),
        ("segment start residuals", criterion_2),
        ("occupancy model", criterion_3),
        ("simulator oracle agreement", criterion_4),
        ("class balance exactness", criterion_5),
        ("reconstruction sampling", criterion_6),
        ("loss oracle", criterion_7),
        ("metrics", criterion_8),
        ("labeling thresholds", criterion_9),
        ("determinism and performance", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1} s]", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
