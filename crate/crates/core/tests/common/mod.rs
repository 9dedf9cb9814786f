#![allow(dead_code)]

use std::path::PathBuf;

use graspsim::scene::{ObjectClass, Pose2, Scene, SceneObject, Shape, Table};
use graspsim::service::SessionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn read_data(name: &str) -> String {
    std::fs::read_to_string(data_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn config(name: &str) -> SessionConfig {
    SessionConfig::from_json(&read_data(&format!("{name}.json"))).unwrap()
}

/// Compares `actual` with a committed golden file. Set GRASPSIM_BLESS=1 to
/// rewrite the file instead.
pub fn check_golden(file: &str, actual: &str) {
    let path = golden_dir().join(file);
    if std::env::var_os("GRASPSIM_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if expected != actual {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .unwrap_or(expected.lines().count().min(actual.lines().count()));
        panic!(
            "{file} differs at line {}:\nexpected: {:?}\nactual:   {:?}",
            line + 1,
            expected.lines().nth(line),
            actual.lines().nth(line)
        );
    }
}

/// Single convex object near the camera axis, sized so the sensor sees it
/// with at least a few pixels of clearance on every side.
pub fn single_object_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (shape, class) = match rng.gen_range(0..6) {
        0 => (Shape::Sphere, ObjectClass::Apple),
        1 => (Shape::Sphere, ObjectClass::Orange),
        2 => (Shape::Cylinder, ObjectClass::Bottle),
        3 => (Shape::Cylinder, ObjectClass::Cup),
        4 => (Shape::Box, ObjectClass::Block),
        _ => (Shape::Box, ObjectClass::Banana),
    };
    let dims = match shape {
        Shape::Sphere => {
            let d = rng.gen_range(0.03..0.07);
            [d, d, d]
        }
        Shape::Cylinder => {
            let d = rng.gen_range(0.03..0.07);
            [d, d, rng.gen_range(0.03..0.08)]
        }
        Shape::Box => {
            let short = rng.gen_range(0.03..0.05);
            let long = short + rng.gen_range(0.01..0.025);
            [long, short, rng.gen_range(0.03..0.06)]
        }
    };
    let color = [rng.gen_range(150..=255), rng.gen_range(0..=80), rng.gen_range(0..=255)];
    let object = SceneObject {
        id: 0,
        class_label: class,
        shape,
        dims,
        pose: Pose2 {
            x: 0.3 + rng.gen_range(-0.15..0.15),
            y: rng.gen_range(-0.15..0.15),
            yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        },
        color,
        container: false,
        placed_in: None,
    };
    let mut scene = Scene::empty(Table::default());
    scene.seed = seed;
    scene.objects.push(object);
    scene.validate().unwrap();
    scene
}
