#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use gradecast::rng::Seed;
use rand::Rng as _;

/// A small building-style CSV: one categorical column, numeric columns, a
/// binary flag and a 1..3 grade that depends on them.
pub fn write_toy_csv(path: &Path, n: usize, seed: u64) {
    let mut rng = Seed(seed).rng();
    let mut s = String::from("row,material,age,area,height,floors,has_flag,damage_grade\n");
    for i in 0..n {
        let grade = match i % 7 {
            0..=3 => 2,
            4 | 5 => 3,
            _ => 1,
        };
        let material = match (grade, rng.random_range(0..10)) {
            (1, 0..=7) => "brick",
            (2, 0..=6) => "mud",
            (3, 0..=7) => "stone",
            _ => ["brick", "mud", "stone"][rng.random_range(0..3)],
        };
        let g = grade as f64;
        let age = (g * 15.0 + rng.random_range(-12.0..12.0f64)).max(0.0).round();
        let area = (12.0 - 2.0 * g + rng.random_range(-3.0..3.0f64)).round();
        let height = (3.0 + g + rng.random_range(-1.5..1.5f64)).round();
        let floors = 1 + rng.random_range(0..3);
        let flag = u8::from(grade == 3 && rng.random_range(0..3) > 0);
        let _ = writeln!(s, "{i},{material},{age},{area},{height},{floors},{flag},{grade}");
    }
    std::fs::write(path, s).unwrap();
}

pub const TOY_SCHEMA: &str = r#"{
    "columns": [
        {"name": "material", "kind": "categorical"},
        {"name": "age", "kind": "numeric"},
        {"name": "area", "kind": "numeric"},
        {"name": "height", "kind": "numeric"},
        {"name": "floors", "kind": "numeric"},
        {"name": "has_flag", "kind": "binary"}
    ],
    "target": "damage_grade"
}"#;
