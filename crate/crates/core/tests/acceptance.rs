//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::{Duration, Instant};

use common::{check_golden, config, golden_dir, read_data, single_object_scene};
use graspsim::detector::{detect, dominant_colors, kmeans, partition_sse, BBox, ColorPalette, DetectorNoise};
use graspsim::dialogue::Mode;
use graspsim::geometry::{
    deproject, image_grasp_to_world, project, CameraIntrinsics, ImageGrasp, RigidTransform,
};
use graspsim::graspmap::{best_world_grasp, GraspSynthParams};
use graspsim::nlu::Lexicons;
use graspsim::scene::{
    render_depth, render_rgb, ObjectClass, Pose2, Scene, SceneObject, SensorNoise, Shape, Table,
};
use graspsim::service::{
    parse_script, run_session, run_transcript, EventKind, NoiseConfig, SessionConfig,
};
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROUND_TRIP_POINTS: usize = 10_000;
const ROUND_TRIP_REL_TOL: f64 = 1e-9;
const CHAIN_TRIPLES: usize = 100;
const CHAIN_TOL: f64 = 1e-9;
const TRANSFORM_BUDGET: Duration = Duration::from_secs(5);

const SCENES: u64 = 200;
const SCENE_SEED_BASE: u64 = 1000;
const LOCALIZATION_TOL_M: f64 = 0.015;
const LOCALIZATION_RATE: f64 = 0.95;
const LOCALIZATION_BUDGET: Duration = Duration::from_secs(60);
/// Friction-cone half angle for box faces in the antipodal check.
const ANTIPODAL_CONE_DEG: f64 = 20.0;

const HANDOVER_RATE: f64 = 0.90;
const HANDOVER_BUDGET: Duration = Duration::from_secs(120);

const KMEANS_TRIALS: u64 = 50;
const KMEANS_MAX_POINTS: usize = 16;
const KMEANS_SSE_SLACK: f64 = 0.05;

const DETERMINISM_SEEDS: [u64; 4] = [0, 1, 42, 9001];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn default_camera() -> (RigidTransform, CameraIntrinsics) {
    (RigidTransform::top_down(0.3, 0.0, 0.5), CameraIntrinsics::default())
}

// Transform chain

/// Independent rotation matrix for Rz(yaw) * Ry(pitch) * Rx(roll).
fn oracle_rotation(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

fn oracle_wrap(mut a: f64) -> f64 {
    while a >= FRAC_PI_2 {
        a -= PI;
    }
    while a < -FRAC_PI_2 {
        a += PI;
    }
    a
}

fn transform_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = CameraIntrinsics::default();
    let mut worst_round_trip = 0.0f64;
    for _ in 0..ROUND_TRIP_POINTS {
        let z = rng.gen_range(0.05..5.0);
        let p = Vector3::new(rng.gen_range(-2.0..2.0) * z, rng.gen_range(-2.0..2.0) * z, z);
        let (u, v) = project(&k, &p).unwrap();
        let q = deproject(&k, u, v, z).unwrap();
        worst_round_trip = worst_round_trip.max((q - p).norm() / p.norm());
    }

    let mut worst_chain = 0.0f64;
    for _ in 0..CHAIN_TRIPLES {
        let fx = rng.gen_range(50.0..1000.0);
        let fy = rng.gen_range(50.0..1000.0);
        let k = CameraIntrinsics::new(fx, fy, rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0), 640, 480).unwrap();
        let (roll, pitch, yaw) = (rng.gen_range(-PI..PI), rng.gen_range(-1.5..1.5), rng.gen_range(-PI..PI));
        let t = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.5)];
        let t_rc = RigidTransform::from_parts(
            Rotation3::from_euler_angles(roll, pitch, yaw),
            Vector3::new(t[0], t[1], t[2]),
        );
        let g = ImageGrasp {
            u: rng.gen_range(0.0..640.0),
            v: rng.gen_range(0.0..480.0),
            phi_img: rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
            w_img: rng.gen_range(1.0..80.0),
            q: rng.gen_range(0.0..1.0),
            depth: rng.gen_range(0.2..2.0),
        };
        let w = image_grasp_to_world(&k, &t_rc, &g).unwrap();

        let pc = [(g.u - k.cx) * g.depth / k.fx, (g.v - k.cy) * g.depth / k.fy, g.depth];
        let r = oracle_rotation(roll, pitch, yaw);
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = r[i][0] * pc[0] + r[i][1] * pc[1] + r[i][2] * pc[2] + t[i];
        }
        let phi = oracle_wrap(g.phi_img + r[1][0].atan2(r[0][0]));
        let width = g.w_img * g.depth / k.fx;
        let scale = 1.0 + (p[0].powi(2) + p[1].powi(2) + p[2].powi(2)).sqrt();
        let dphi = (w.phi - phi).abs().min(PI - (w.phi - phi).abs());
        let err = [
            (w.x - p[0]).abs() / scale,
            (w.y - p[1]).abs() / scale,
            (w.z - p[2]).abs() / scale,
            dphi,
            (w.w - width).abs() / (1.0 + width),
            (w.q - g.q).abs(),
        ];
        worst_chain = err.iter().fold(worst_chain, |a, b| a.max(*b));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_round_trip <= ROUND_TRIP_REL_TOL && worst_chain <= CHAIN_TOL && elapsed < TRANSFORM_BUDGET,
        format!(
            "round-trip max rel err {worst_round_trip:.2e} (tol {ROUND_TRIP_REL_TOL:.0e}), chain max err {worst_chain:.2e} (tol {CHAIN_TOL:.0e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// Grasp localization

/// Independent antipodal check. Round objects accept any closing direction;
/// boxes need the closing direction inside the friction cone of a face pair.
/// Jaws must open wider than the object along the closing direction and the
/// grasp center must lie on the footprint.
fn antipodal_ok(o: &SceneObject, x: f64, y: f64, phi: f64, w: f64) -> bool {
    let (dx, dy) = (x - o.pose.x, y - o.pose.y);
    let (c, s) = (o.pose.yaw.cos(), o.pose.yaw.sin());
    let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
    match o.shape {
        Shape::Sphere | Shape::Cylinder => {
            let r = o.dims[0] / 2.0;
            lx.hypot(ly) <= r && w >= o.dims[0]
        }
        Shape::Box => {
            let inside = lx.abs() <= o.dims[0] / 2.0 && ly.abs() <= o.dims[1] / 2.0;
            let rel = phi - o.pose.yaw;
            let (cr, sr) = (rel.cos().abs(), rel.sin().abs());
            let cone = ANTIPODAL_CONE_DEG.to_radians().cos();
            // Closing along local x needs |cos| near 1, along local y |sin| near 1.
            let span = if cr >= cone {
                Some(o.dims[0])
            } else if sr >= cone {
                Some(o.dims[1])
            } else {
                None
            };
            let corner_extent = o.dims[0] * cr + o.dims[1] * sr;
            inside && span.is_some() && w >= corner_extent
        }
    }
}

fn grasp_localization() -> Outcome {
    let start = Instant::now();
    let (cam, k) = default_camera();
    let params = GraspSynthParams::default();
    let (mut located, mut antipodal, mut both) = (0, 0, 0);
    let mut worst = 0.0f64;
    for i in 0..SCENES {
        let scene = single_object_scene(SCENE_SEED_BASE + i);
        let o = &scene.objects[0];
        let depth = render_depth(&scene, &cam, &k, &SensorNoise::none()).unwrap();
        let Ok(g) = best_world_grasp(&depth, &params, &k, &cam) else {
            continue;
        };
        let err = (g.x - o.pose.x).hypot(g.y - o.pose.y);
        worst = worst.max(err);
        let near = err <= LOCALIZATION_TOL_M;
        let anti = antipodal_ok(o, g.x, g.y, g.phi, g.w);
        located += near as u32;
        antipodal += anti as u32;
        both += (near && anti) as u32;
    }
    let elapsed = start.elapsed();
    let rate = both as f64 / SCENES as f64;
    outcome(
        rate >= LOCALIZATION_RATE && elapsed < LOCALIZATION_BUDGET,
        format!(
            "{both}/{SCENES} within {:.1} cm and antipodal ({located} located, {antipodal} antipodal, worst {:.2} cm), rate {rate:.3} >= {LOCALIZATION_RATE}, {:.1}s",
            LOCALIZATION_TOL_M * 100.0,
            worst * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

// End-to-end handover

fn scene_config(mode: Mode, scene: Scene, seed: u64) -> SessionConfig {
    SessionConfig {
        mode,
        scene,
        seed,
        noise: NoiseConfig::default(),
        camera: Default::default(),
        lexicon: Lexicons::default(),
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (mut ok, mut undefined) = (0, 0);
    let mut reasons = std::collections::BTreeMap::<String, u32>::new();
    for i in 0..SCENES {
        let scene = single_object_scene(SCENE_SEED_BASE + i);
        let class = scene.objects[0].class_label;
        let cfg = scene_config(Mode::Mode1, scene, i);
        let script = format!("say Take the {class}\n");
        let (events, _) = run_session(&cfg, &parse_script(&script).unwrap()).unwrap();
        let state = events.iter().find(|e| e.kind == EventKind::SceneState);
        match state {
            Some(s) if s.payload["success"] == serde_json::json!(true) => ok += 1,
            Some(s) => match s.payload["failure_reason"].as_str() {
                Some(r) => *reasons.entry(r.to_string()).or_default() += 1,
                None => undefined += 1,
            },
            None => match events.iter().find(|e| e.kind == EventKind::Error) {
                Some(e) => *reasons.entry(e.payload["code"].as_str().unwrap_or("?").to_string()).or_default() += 1,
                None => undefined += 1,
            },
        }
    }
    let elapsed = start.elapsed();
    let rate = ok as f64 / SCENES as f64;
    outcome(
        rate >= HANDOVER_RATE && undefined == 0 && elapsed < HANDOVER_BUDGET,
        format!(
            "{ok}/{SCENES} handovers, rate {rate:.3} >= {HANDOVER_RATE}, failures {reasons:?}, {undefined} without reason, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// Zero-depth path

fn zero_depth() -> Outcome {
    let t = run_transcript(&config("zero_depth"), &read_data("zero_depth.script")).unwrap();
    let golden = std::fs::read_to_string(golden_dir().join("zero_depth.transcript")).unwrap();
    let kinds: Vec<&str> = t.lines().map(|l| l.split('|').nth(1).unwrap()).collect();
    let errors: Vec<&str> = t.lines().filter(|l| l.contains("|Error|")).collect();
    let redetects = kinds.iter().filter(|k| **k == "Detections").count() - 1;
    let failure_line = t
        .lines()
        .rev()
        .find(|l| l.contains("|RobotSay|"))
        .is_some_and(|l| l.contains("I could not see it clearly. Let me adjust and try again."));
    let pass = t == golden
        && errors.len() == 2
        && errors.iter().all(|e| e.contains("DepthZero"))
        && redetects == 1
        && failure_line;
    outcome(
        pass,
        format!(
            "golden match {}, DepthZero faults {}, automatic redetects {redetects}, failure line {failure_line}",
            t == golden,
            errors.len()
        ),
    )
}

// Color recognition

/// Exhaustive minimum SSE over partitions into at most `k` groups, by
/// branch and bound over restricted-growth labelings.
fn optimal_sse(points: &[[f64; 3]], k: usize, upper: f64) -> f64 {
    struct Search<'a> {
        points: &'a [[f64; 3]],
        k: usize,
        sums: Vec<[f64; 3]>,
        counts: Vec<usize>,
        best: f64,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, used: usize, sse: f64) {
            if sse >= self.best {
                return;
            }
            if i == self.points.len() {
                self.best = sse;
                return;
            }
            let p = self.points[i];
            let limit = (used + 1).min(self.k);
            for c in 0..limit {
                let n = self.counts[c] as f64;
                let delta = if n == 0.0 {
                    0.0
                } else {
                    let m = [self.sums[c][0] / n, self.sums[c][1] / n, self.sums[c][2] / n];
                    n / (n + 1.0) * ((p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2) + (p[2] - m[2]).powi(2))
                };
                for d in 0..3 {
                    self.sums[c][d] += p[d];
                }
                self.counts[c] += 1;
                self.go(i + 1, used.max(c + 1), sse + delta);
                self.counts[c] -= 1;
                for d in 0..3 {
                    self.sums[c][d] -= p[d];
                }
            }
        }
    }
    let mut s = Search {
        points,
        k,
        sums: vec![[0.0; 3]; k],
        counts: vec![0; k],
        best: upper * (1.0 + 1e-12) + 1e-9,
    };
    s.go(0, 0, 0.0);
    s.best
}

fn kmeans_vs_optimum() -> (bool, String) {
    let palette = ColorPalette::default();
    let anchors: Vec<[u8; 3]> = palette.entries().iter().map(|(_, c)| *c).collect();
    let mut worst = 0.0f64;
    for trial in 0..KMEANS_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let n = rng.gen_range(3..=KMEANS_MAX_POINTS);
        let k = rng.gen_range(1..=3usize);
        let bases: Vec<[u8; 3]> = (0..rng.gen_range(1..=4)).map(|_| anchors[rng.gen_range(0..anchors.len())]).collect();
        let points: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let b = bases[rng.gen_range(0..bases.len())];
                let j = rng.gen_range(0.0..30.0);
                [0, 1, 2].map(|c| (b[c] as f64 + rng.gen_range(-j..=j)).clamp(0.0, 255.0))
            })
            .collect();
        let r = kmeans(&points, k, trial);
        let got = partition_sse(&points, &r.assignment, r.centroids.len());
        let opt = optimal_sse(&points, k, got);
        let ratio = if opt > 0.0 { got / opt - 1.0 } else if got > 1e-9 { f64::INFINITY } else { 0.0 };
        worst = worst.max(ratio);
    }
    (worst <= KMEANS_SSE_SLACK, format!("k-means worst excess SSE {:.2}% over {KMEANS_TRIALS} trials (tol {:.0}%)", worst * 100.0, KMEANS_SSE_SLACK * 100.0))
}

fn object(class: ObjectClass, shape: Shape, dims: [f64; 3], x: f64, y: f64, yaw: f64, color: [u8; 3]) -> SceneObject {
    SceneObject {
        id: 0,
        class_label: class,
        shape,
        dims,
        pose: Pose2 { x, y, yaw },
        color,
        container: false,
        placed_in: None,
    }
}

fn pure_colors() -> (bool, String) {
    let (cam, k) = default_camera();
    let palette = ColorPalette::default();
    let (mut right, mut total) = (0, 0);
    let mut wrong = Vec::new();
    for (name, rgb) in palette.entries() {
        for (shape, class, dims) in [
            (Shape::Sphere, ObjectClass::Apple, [0.06; 3]),
            (Shape::Cylinder, ObjectClass::Cup, [0.06, 0.06, 0.08]),
            (Shape::Box, ObjectClass::Block, [0.06, 0.05, 0.04]),
        ] {
            let mut scene = Scene::empty(Table::default());
            scene.objects.push(object(class, shape, dims, 0.3, 0.0, 0.0, *rgb));
            let dets = detect(&scene, &cam, &k, &DetectorNoise::none()).unwrap();
            total += 1;
            if dets.len() == 1 && dets[0].colors.first().is_some_and(|c| &c.name == name) {
                right += 1;
            } else {
                wrong.push(format!("{name}/{shape:?}"));
            }
        }
    }
    (right == total, format!("pure colors {right}/{total} named first{}", if wrong.is_empty() { String::new() } else { format!(" (wrong: {wrong:?})") }))
}

fn banana_green_margin() -> (bool, String) {
    let (cam, k) = default_camera();
    let mut scene = Scene::empty(Table::default());
    scene.objects.push(object(ObjectClass::Banana, Shape::Box, [0.12, 0.035, 0.03], 0.3, 0.0, 0.6, [255, 215, 0]));
    let dets = detect(&scene, &cam, &k, &DetectorNoise::none()).unwrap();
    let rgb = render_rgb(&scene, &cam, &k).unwrap();
    let b: BBox = dets[0].bbox;
    let direct = dominant_colors(&rgb, &b, 3, &ColorPalette::default(), 3).unwrap();
    let names = dets[0].color_names().join(", ");
    let ok = dets[0].has_color("Green") && dets[0].has_color("Yellow") && direct.iter().any(|c| c.name == "Green");
    (ok, format!("banana colors [{names}]"))
}

fn color_recognition() -> Outcome {
    let parts = [kmeans_vs_optimum(), pure_colors(), banana_green_margin()];
    outcome(
        parts.iter().all(|p| p.0),
        parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "),
    )
}

// Golden transcripts and determinism

const GOLDEN_SCRIPTS: [&str; 4] = ["mode1", "mode2a", "mode2b", "mode3"];

fn golden_transcripts() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let mut all = String::new();
    for name in GOLDEN_SCRIPTS {
        let t = run_transcript(&config(name), &read_data(&format!("{name}.script"))).unwrap();
        let same = std::panic::catch_unwind(|| check_golden(&format!("{name}.transcript"), &t)).is_ok();
        pass &= same;
        details.push(format!("{name} {}", if same { "identical" } else { "DIFFERS" }));
        all.push_str(&t);
    }
    for phrase in [
        "I will help you to grasp",
        "Here you are. What else",
        "want to get this object",
        "input the object number",
    ] {
        if !all.contains(phrase) {
            pass = false;
            details.push(format!("missing {phrase:?}"));
        }
    }
    let mode3 = run_transcript(&config("mode3"), &read_data("mode3.script")).unwrap();
    let order: Vec<String> = mode3
        .lines()
        .filter(|l| l.contains("|WaypointDone|"))
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l.splitn(3, '|').nth(2)?).ok())
        .map(|v| v["label"].as_str().unwrap_or("").to_string())
        .collect();
    let expected = ["Home", "PreGrasp", "Descend", "Close", "Lift", "PrePlace", "Descend", "Open", "ReturnHome"];
    let order_ok = order == expected;
    pass &= order_ok;
    details.push(format!("pick-place order {}", if order_ok { "reach-pick-place-home" } else { "WRONG" }));
    outcome(pass, details.join(", "))
}

fn determinism() -> Outcome {
    let mut runs = 0;
    let mut pass = true;
    for name in GOLDEN_SCRIPTS.iter().chain(&["zero_depth"]) {
        for seed in DETERMINISM_SEEDS {
            let mut cfg = config(name);
            cfg.seed = seed;
            // Noise makes the seed matter.
            cfg.noise.sensor.jitter_sigma = 0.001;
            cfg.noise.detector.jitter_sigma = 1.0;
            let inputs = parse_script(&read_data(&format!("{name}.script"))).unwrap();
            let (a, sa) = run_session(&cfg, &inputs).unwrap();
            let (b, sb) = run_session(&cfg, &inputs).unwrap();
            let ta: Vec<String> = a.iter().map(|e| e.transcript_line()).collect();
            let tb: Vec<String> = b.iter().map(|e| e.transcript_line()).collect();
            pass &= ta == tb && sa.to_json() == sb.to_json();
            runs += 1;
        }
    }
    outcome(pass, format!("{runs} (config, script, seed) pairs replayed twice, transcripts and final scenes identical: {pass}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("transform correctness", transform_correctness),
        ("grasp localization", grasp_localization),
        ("end-to-end grasp execution", end_to_end),
        ("zero-depth path", zero_depth),
        ("color recognition", color_recognition),
        ("golden transcripts", golden_transcripts),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as u32;
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() as u32 - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
