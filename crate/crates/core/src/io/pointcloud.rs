//! Text point-cloud readers and writers: XYZ, OFF and ASCII PLY.
//!
//! Parsers are whitespace tolerant but strict on declared counts. Meshes are
//! reduced to their vertices. Coordinates are written with 17 significant
//! digits so a write-read cycle reproduces every `f64` exactly.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{OdfError, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Off,
    PlyAscii,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" | "pts" => Some(CloudFormat::Xyz),
            "off" => Some(CloudFormat::Off),
            "ply" => Some(CloudFormat::PlyAscii),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(CloudFormat::Xyz),
            "off" => Ok(CloudFormat::Off),
            "ply" | "ply_ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(format!("unknown cloud format '{other}' (xyz|off|ply_ascii)")),
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudFormat::Xyz => "xyz",
            CloudFormat::Off => "off",
            CloudFormat::PlyAscii => "ply_ascii",
        })
    }
}

/// Non-empty lines with their 1-based line numbers.
struct Lines<'a> {
    path: String,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
    skip_comments: bool,
}

impl<'a> Lines<'a> {
    fn new(path: &str, text: &'a str, skip_comments: bool) -> Self {
        Self {
            path: path.to_string(),
            inner: text.lines().enumerate(),
            last: 0,
            skip_comments,
        }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let t = line.trim();
            if t.is_empty() || (self.skip_comments && t.starts_with('#')) {
                continue;
            }
            return Some((i + 1, t));
        }
        None
    }

    /// Next line, or an error positioned just past the end of the file.
    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.next_line() {
            Some(l) => Ok(l),
            None => Err(self.error(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    fn error(&self, line: usize, msg: impl Into<String>) -> OdfError {
        OdfError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

fn parse_numbers(lines: &Lines, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| lines.error(line_no, format!("invalid number '{tok}'")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(lines.error(line_no, format!("non-finite value '{tok}'")))
                    }
                })
        })
        .collect()
}

pub fn read_point_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    let name = path.display().to_string();
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        OdfError::Parse {
            path: name.clone(),
            line,
            msg: "file is not ASCII/UTF-8 text".into(),
        }
    })?;
    parse_point_cloud(&name, text, format)
}

/// Parses cloud text; `name` is used in error messages.
pub fn parse_point_cloud(name: &str, text: &str, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::Xyz => parse_xyz(name, text),
        CloudFormat::Off => parse_off(name, text),
        CloudFormat::PlyAscii => parse_ply(name, text),
    }
}

fn parse_xyz(name: &str, text: &str) -> Result<PointCloud> {
    let mut lines = Lines::new(name, text, true);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut width = None;
    while let Some((no, line)) = lines.next_line() {
        let vals = parse_numbers(&lines, no, line)?;
        if vals.len() != 3 && vals.len() != 6 {
            return Err(lines.error(no, format!("expected 3 or 6 columns, found {}", vals.len())));
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(lines.error(no, format!("expected {w} columns, found {}", vals.len())))
            }
            _ => {}
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if vals.len() == 6 {
            colors.push([vals[3], vals[4], vals[5]]);
        }
    }
    if points.is_empty() {
        return Err(lines.error(lines.last.max(1), "no points"));
    }
    let mut cloud = PointCloud::new(points);
    if !colors.is_empty() {
        cloud.colors = Some(colors);
    }
    Ok(cloud)
}

fn parse_off(name: &str, text: &str) -> Result<PointCloud> {
    let mut lines = Lines::new(name, text, true);
    let (no, first) = lines.expect("OFF header")?;
    // ModelNet files sometimes glue the counts onto the keyword: "OFF8 6 0".
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| lines.error(no, "missing OFF keyword"))?
        .trim();
    let (count_no, count_line) = if rest.is_empty() {
        lines.expect("vertex/face/edge counts")?
    } else {
        (no, rest)
    };
    let counts: Vec<usize> = count_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| lines.error(count_no, format!("invalid count '{t}'")))
        })
        .collect::<Result<_>>()?;
    if counts.len() != 3 {
        return Err(lines.error(count_no, "expected 3 counts (vertices faces edges)"));
    }
    let (n_vertices, n_faces) = (counts[0], counts[1]);
    let mut points = Vec::with_capacity(n_vertices);
    for i in 0..n_vertices {
        let (no, line) = lines.expect(&format!("vertex {} of {n_vertices}", i + 1))?;
        let vals = parse_numbers(&lines, no, line)?;
        if vals.len() != 3 {
            return Err(lines.error(no, format!("vertex needs 3 coordinates, found {}", vals.len())));
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
    }
    for i in 0..n_faces {
        let (no, line) = lines.expect(&format!("face {} of {n_faces}", i + 1))?;
        let mut toks = line.split_whitespace();
        let k: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| lines.error(no, "invalid face vertex count"))?;
        let ids: Vec<usize> = toks
            .take(k)
            .map(|t| t.parse().map_err(|_| lines.error(no, format!("invalid vertex id '{t}'"))))
            .collect::<Result<_>>()?;
        if ids.len() != k {
            return Err(lines.error(no, format!("face declares {k} vertices, found {}", ids.len())));
        }
        if let Some(bad) = ids.iter().find(|&&v| v >= n_vertices) {
            return Err(lines.error(no, format!("face references vertex {bad} of {n_vertices}")));
        }
    }
    if points.is_empty() {
        return Err(lines.error(count_no, "no vertices"));
    }
    Ok(PointCloud::new(points))
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    ty: String,
    list: bool,
}

fn parse_ply(name: &str, text: &str) -> Result<PointCloud> {
    let mut lines = Lines::new(name, text, false);
    let (no, magic) = lines.expect("ply magic")?;
    if magic != "ply" {
        return Err(lines.error(no, "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let (no, line) = lines.expect("end_header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(lines.error(
                        no,
                        format!("unsupported PLY format '{}', only ascii is read", toks.get(1).unwrap_or(&"")),
                    ));
                }
                saw_format = true;
            }
            "comment" | "obj_info" => {}
            "element" => {
                if toks.len() != 3 {
                    return Err(lines.error(no, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| lines.error(no, format!("invalid element count '{}'", toks[2])))?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| lines.error(no, "property before any element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(lines.error(no, "malformed list property"));
                    }
                    PlyProperty {
                        name: toks[4].to_string(),
                        ty: toks[3].to_string(),
                        list: true,
                    }
                } else {
                    if toks.len() != 3 {
                        return Err(lines.error(no, "malformed property line"));
                    }
                    PlyProperty {
                        name: toks[2].to_string(),
                        ty: toks[1].to_string(),
                        list: false,
                    }
                };
                el.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(lines.error(no, format!("unknown header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(lines.error(lines.last, "missing format line"));
    }

    let mut points = Vec::new();
    let mut colors = Vec::new();
    for el in &elements {
        let is_vertex = el.name == "vertex";
        let find = |n: &str| el.properties.iter().position(|p| p.name == n && !p.list);
        let xyz = [find("x"), find("y"), find("z")];
        let rgb = [find("red"), find("green"), find("blue")];
        let has_rgb = rgb.iter().all(Option::is_some);
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(lines.error(lines.last, "vertex element lacks x/y/z properties"));
        }
        for i in 0..el.count {
            let (no, line) = lines.expect(&format!("{} {} of {}", el.name, i + 1, el.count))?;
            let vals = parse_numbers(&lines, no, line)?;
            // Walk the properties to validate the token count, lists included.
            let mut pos = 0;
            let mut fixed = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                if p.list {
                    let k = *vals
                        .get(pos)
                        .ok_or_else(|| lines.error(no, "missing list length"))? as usize;
                    pos += 1 + k;
                    fixed.push(f64::NAN);
                } else {
                    fixed.push(*vals.get(pos).ok_or_else(|| lines.error(no, format!("missing property '{}'", p.name)))?);
                    pos += 1;
                }
            }
            if pos != vals.len() {
                return Err(lines.error(no, format!("expected {pos} values, found {}", vals.len())));
            }
            if is_vertex {
                let get = |k: Option<usize>| fixed[k.expect("checked")];
                points.push(Point3::new(get(xyz[0]), get(xyz[1]), get(xyz[2])));
                if has_rgb {
                    let scale = |k: Option<usize>| {
                        let p = &el.properties[k.expect("checked")];
                        let v = fixed[k.expect("checked")];
                        if p.ty.starts_with("float") || p.ty.starts_with("double") {
                            v
                        } else {
                            v / 255.0
                        }
                    };
                    colors.push([scale(rgb[0]), scale(rgb[1]), scale(rgb[2])]);
                }
            }
        }
    }
    if let Some((no, _)) = lines.next_line() {
        return Err(lines.error(no, "trailing data after declared elements"));
    }
    if points.is_empty() {
        return Err(lines.error(lines.last, "no vertices"));
    }
    let mut cloud = PointCloud::new(points);
    if !colors.is_empty() {
        cloud.colors = Some(colors);
    }
    Ok(cloud)
}

/// Formats `v` with 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_point_cloud(cloud: &PointCloud, format: CloudFormat) -> String {
    let mut out = String::new();
    let coords = |p: &Point3| format!("{} {} {}", num(p.x), num(p.y), num(p.z));
    match format {
        CloudFormat::Xyz => {
            for (i, p) in cloud.points.iter().enumerate() {
                out.push_str(&coords(p));
                if let Some(c) = &cloud.colors {
                    out.push_str(&format!(" {} {} {}", num(c[i][0]), num(c[i][1]), num(c[i][2])));
                }
                out.push('\n');
            }
        }
        CloudFormat::Off => {
            out.push_str(&format!("OFF\n{} 0 0\n", cloud.len()));
            for p in &cloud.points {
                out.push_str(&coords(p));
                out.push('\n');
            }
        }
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            out.push_str(&format!("element vertex {}\n", cloud.len()));
            out.push_str("property double x\nproperty double y\nproperty double z\n");
            if cloud.colors.is_some() {
                out.push_str("property double red\nproperty double green\nproperty double blue\n");
            }
            out.push_str("end_header\n");
            for (i, p) in cloud.points.iter().enumerate() {
                out.push_str(&coords(p));
                if let Some(c) = &cloud.colors {
                    out.push_str(&format!(" {} {} {}", num(c[i][0]), num(c[i][1]), num(c[i][2])));
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_point_cloud(cloud, format).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn parse(text: &str, format: CloudFormat) -> Result<PointCloud> {
        parse_point_cloud("mem", text, format)
    }

    fn err_line(r: Result<PointCloud>) -> usize {
        match r {
            Err(OdfError::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_two_points() {
        let c = parse("0 0 0\n1 0 0\n", CloudFormat::Xyz).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn xyz_whitespace_and_comments() {
        let c = parse("# header\n  0\t0  0 \n\n1 2 3\n", CloudFormat::Xyz).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn xyz_bad_column() {
        assert_eq!(err_line(parse("0 0 0\n1 0\n", CloudFormat::Xyz)), 2);
        assert_eq!(err_line(parse("0 0 0\n1 a 0\n", CloudFormat::Xyz)), 2);
    }

    #[test]
    fn off_missing_vertex_line() {
        let mut text = String::from("OFF\n8 0 0\n");
        for i in 0..7 {
            text.push_str(&format!("{i} 0 0\n"));
        }
        // Header on lines 1-2, vertices on 3..=9; the 8th vertex belongs on line 10.
        assert_eq!(err_line(parse(&text, CloudFormat::Off)), 10);
    }

    #[test]
    fn off_glued_counts_and_faces() {
        let text = "OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let c = parse(text, CloudFormat::Off).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(err_line(parse("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", CloudFormat::Off)), 6);
    }

    #[test]
    fn ply_with_colors_and_faces() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 1 1 0 255 51\n2 0 1\n";
        let c = parse(text, CloudFormat::PlyAscii).unwrap();
        assert_eq!(c.len(), 2);
        let colors = c.colors.unwrap();
        assert_eq!(colors[0], [1.0, 0.0, 0.0]);
        assert_eq!(colors[1], [0.0, 1.0, 0.2]);
    }

    #[test]
    fn ply_binary_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        assert_eq!(err_line(parse(text, CloudFormat::PlyAscii)), 2);
    }

    #[test]
    fn ply_short_body() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert_eq!(err_line(parse(text, CloudFormat::PlyAscii)), 9);
    }

    #[test]
    fn round_trip_exact() {
        let mut r = rng::seeded(42);
        let mut cloud = PointCloud::new(
            (0..256)
                .map(|_| Point3::new(r.random::<f64>() - 0.5, r.random::<f64>() * 1e-7, r.random::<f64>() * 3e5))
                .collect(),
        );
        for format in [CloudFormat::Xyz, CloudFormat::Off, CloudFormat::PlyAscii] {
            let back = parse(&format_point_cloud(&cloud, format), format).unwrap();
            assert_eq!(back.points, cloud.points, "{format}");
        }
        cloud.colors = Some((0..256).map(|i| [i as f64 / 255.0, 0.5, 1.0 / 3.0]).collect());
        for format in [CloudFormat::Xyz, CloudFormat::PlyAscii] {
            let back = parse(&format_point_cloud(&cloud, format), format).unwrap();
            assert_eq!(back, cloud);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.2, 0.3), Point3::new(1.0 / 3.0, 2.0, -5.5)]);
        write_point_cloud(&path, &cloud, CloudFormat::Xyz).unwrap();
        assert_eq!(read_point_cloud(&path, CloudFormat::Xyz).unwrap(), cloud);
        assert_eq!(CloudFormat::from_path(&path), Some(CloudFormat::Xyz));
    }
}
