//! ASCII PLY with `x y z` (double) and `red green blue` (uchar) vertex
//! properties. Other vertex properties are ignored on read.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::init::{ColoredPoint, ColoredPointCloud};

pub fn ply_string(cloud: &ColoredPointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    for a in ["x", "y", "z"] {
        writeln!(out, "property double {a}").unwrap();
    }
    for c in ["red", "green", "blue"] {
        writeln!(out, "property uchar {c}").unwrap();
    }
    out.push_str("end_header\n");
    for p in &cloud.points {
        let [r, g, b] = p.color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        let [x, y, z] = p.position;
        writeln!(out, "{x} {y} {z} {r} {g} {b}").unwrap();
    }
    out
}

pub fn parse_ply(text: &str) -> std::result::Result<ColoredPointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    for line in lines.by_ref() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => ascii = *fmt == "ascii",
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        n.parse::<usize>()
                            .map_err(|e| format!("bad vertex count: {e}"))?,
                    );
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    if !ascii {
        return Err("only ASCII PLY is supported".into());
    }
    let count = count.ok_or("no vertex element")?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| format!("missing vertex property '{name}'"))
    };
    let xyz = [col("x")?, col("y")?, col("z")?];
    let rgb = [col("red")?, col("green")?, col("blue")?];
    let mut points = Vec::with_capacity(count);
    for (n, line) in lines
        .filter(|l| !l.trim().is_empty())
        .take(count)
        .enumerate()
    {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| format!("vertex {n}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if vals.len() != props.len() {
            return Err(format!(
                "vertex {n}: expected {} values, found {}",
                props.len(),
                vals.len()
            ));
        }
        points.push(ColoredPoint {
            position: xyz.map(|i| vals[i]),
            color: rgb.map(|i| vals[i] / 255.0),
        });
    }
    if points.len() != count {
        return Err(format!("expected {count} vertices, found {}", points.len()));
    }
    ColoredPointCloud::new(points).map_err(|e| e.to_string())
}

pub fn write_ply(path: &Path, cloud: &ColoredPointCloud) -> Result<()> {
    std::fs::write(path, ply_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<ColoredPointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|m| Error::parse(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_positions_exact_colours_quantised() {
        let cloud = ColoredPointCloud::new(vec![
            ColoredPoint {
                position: [0.1, -2.5e-7, 1e10 / 3.0],
                color: [1.0, 0.0, 128.0 / 255.0],
            },
            ColoredPoint {
                position: [-1.0, 0.0, 3.0],
                color: [0.3, 0.6, 0.9],
            },
        ])
        .unwrap();
        let back = parse_ply(&ply_string(&cloud)).unwrap();
        assert_eq!(back.points[0], cloud.points[0]);
        assert_eq!(back.points[1].position, cloud.points[1].position);
        for c in 0..3 {
            assert!((back.points[1].color[c] - cloud.points[1].color[c]).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn reads_float_properties_in_any_order() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 1\nproperty uchar red\nproperty float x\nproperty uchar green\nproperty float y\nproperty float nx\nproperty uchar blue\nproperty float z\nend_header\n255 1.5 0 2 9 51 -3\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points[0].position, [1.5, 2.0, -3.0]);
        assert_eq!(c.points[0].color, [1.0, 0.0, 0.2]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_ply("nope").is_err());
        assert!(
            parse_ply("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
                .is_err()
        );
        assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 1 1 1\n").is_err());
    }
}
