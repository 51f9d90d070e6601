//! Point-cloud files and dataset manifests.
//!
//! Clouds are stored as ASCII PLY (`x y z [nx ny nz]` vertex properties) or
//! as whitespace-separated XYZ text with 3 or 6 columns. Floats are written
//! in shortest round-trip form, so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, UnitQuat, Vec3};
use crate::synth::FragmentPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Xyz,
}

impl CloudFormat {
    /// `.ply` or `.xyz`/`.txt`; anything else is unsupported.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "ply" => Ok(CloudFormat::Ply),
            "xyz" | "txt" => Ok(CloudFormat::Xyz),
            _ => Err(Error::UnsupportedFormat(format!("{}: unknown extension", path.display()))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(path, line_no, format!("not a number: {tok:?}")))
        })
        .collect()
}

fn assemble(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> PointCloud {
    PointCloud { points, normals }
}

/// Parses ASCII PLY text. Only the `vertex` element is read; other
/// properties (colors, ...) are ignored.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        Some((n, _)) => return Err(parse_err(path, n, "missing 'ply' magic")),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    // (element name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => saw_format = true,
            ["format", other, _] => return Err(Error::UnsupportedFormat(format!("{}: PLY format {other}", path.display()))),
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, n, format!("bad element count {count:?}")))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let Some(el) = elements.last_mut() else {
                    return Err(parse_err(path, n, "property before element"));
                };
                if el.0 == "vertex" {
                    return Err(Error::UnsupportedFormat(format!("{}: list property on vertex", path.display())));
                }
                el.2.push(toks.last().unwrap_or(&"").to_string());
            }
            ["property", _ty, name] => {
                let Some(el) = elements.last_mut() else {
                    return Err(parse_err(path, n, "property before element"));
                };
                el.2.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(path, n, format!("malformed header line: {line:?}"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, text.lines().count().max(1), "missing end_header"));
    }
    if !saw_format {
        return Err(parse_err(path, 2, "missing format line"));
    }
    let Some(vpos) = elements.iter().position(|e| e.0 == "vertex") else {
        return Err(parse_err(path, 1, "no vertex element"));
    };
    let props = &elements[vpos].2;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
        return Err(parse_err(path, 1, "vertex element lacks x/y/z"));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let skip: usize = elements[..vpos].iter().map(|e| e.1).sum();
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty()).skip(skip);
    let count = elements[vpos].1;
    let mut points = Vec::with_capacity(count);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(count));
    for k in 0..count {
        let Some((n, line)) = body.next() else {
            return Err(parse_err(path, text.lines().count(), format!("expected {count} vertices, found {k}")));
        };
        let v = parse_floats(path, n, line)?;
        if v.len() != props.len() {
            return Err(parse_err(path, n, format!("expected {} values, found {}", props.len(), v.len())));
        }
        points.push(Vec3::new(v[x], v[y], v[z]));
        if let (Some(ns), Some([a, b, c])) = (normals.as_mut(), normal_cols) {
            ns.push(Vec3::new(v[a], v[b], v[c]));
        }
    }
    Ok(assemble(points, normals))
}

/// Parses XYZ text: 3 or 6 columns per line, consistent across the file.
/// Blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v = parse_floats(path, i + 1, t)?;
        if v.len() != 3 && v.len() != 6 {
            return Err(parse_err(path, i + 1, format!("expected 3 or 6 columns, found {}", v.len())));
        }
        if *width.get_or_insert(v.len()) != v.len() {
            return Err(parse_err(path, i + 1, "column count changes mid-file"));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            normals.push(Vec3::new(v[3], v[4], v[5]));
        }
    }
    let normals = (width == Some(6)).then_some(normals);
    Ok(assemble(points, normals))
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    s.push_str("end_header\n");
    write_rows(&mut s, cloud);
    s
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::new();
    write_rows(&mut s, cloud);
    s
}

fn write_rows(s: &mut String, cloud: &PointCloud) {
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = cloud.normals.as_ref().map(|ns| ns[i]) {
            let _ = write!(s, " {} {} {}", n.x, n.y, n.z);
        }
        s.push('\n');
    }
}

/// Loads a cloud, choosing the parser from the file extension.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let format = CloudFormat::from_path(path)?;
    let text = fs::read_to_string(path)?;
    match format {
        CloudFormat::Ply => parse_ply(&text, path),
        CloudFormat::Xyz => parse_xyz(&text, path),
    }
}

pub fn save_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    if let Some(ns) = &cloud.normals {
        if ns.len() != cloud.len() {
            return Err(Error::ShapeMismatch("normal count differs from point count".into()));
        }
    }
    let text = match CloudFormat::from_path(path)? {
        CloudFormat::Ply => format_ply(cloud),
        CloudFormat::Xyz => format_xyz(cloud),
    };
    fs::write(path, text)?;
    Ok(())
}

/// One manifest row. Paths are relative to the manifest's directory; the
/// pose maps `file_b` into the frame of `file_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: usize,
    pub file_a: String,
    pub file_b: String,
    pub overlap: f64,
    pub noise_sigma: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl ManifestEntry {
    pub fn transform(&self) -> Result<RigidTransform> {
        let q = UnitQuat::canonicalize([self.qw, self.qx, self.qy, self.qz])?;
        Ok(RigidTransform::new(q, Vec3::new(self.tx, self.ty, self.tz)))
    }
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes every pair as `pair_XXXX_{a,b}.ply` plus `manifest.csv` into `dir`.
pub fn write_dataset(pairs: &[FragmentPair], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest)?;
    for p in pairs {
        let file_a = format!("pair_{:04}_a.ply", p.id);
        let file_b = format!("pair_{:04}_b.ply", p.id);
        save_point_cloud(&p.cloud_a, &dir.join(&file_a))?;
        save_point_cloud(&p.cloud_b, &dir.join(&file_b))?;
        let [qw, qx, qy, qz] = p.gt_transform.rotation.to_array();
        let [tx, ty, tz] = p.gt_transform.translation;
        w.serialize(ManifestEntry {
            pair_id: p.id,
            file_a,
            file_b,
            overlap: p.overlap,
            noise_sigma: p.noise_sigma,
            qw,
            qx,
            qy,
            qz,
            tx,
            ty,
            tz,
        })?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Loads a dataset written by [`write_dataset`]. `dir` may be the directory
/// or the manifest file itself.
pub fn read_dataset(dir: &Path) -> Result<Vec<FragmentPair>> {
    let manifest = if dir.is_dir() { dir.join(MANIFEST_FILE) } else { dir.to_path_buf() };
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(&manifest)?
        .into_iter()
        .map(|e| {
            Ok(FragmentPair {
                id: e.pair_id,
                cloud_a: load_point_cloud(&base.join(&e.file_a))?,
                cloud_b: load_point_cloud(&base.join(&e.file_b))?,
                gt_transform: e.transform()?,
                overlap: e.overlap,
                noise_sigma: e.noise_sigma,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_pair, SceneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, normals: bool, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random(), rng.random::<f64>() * 1e-7))
            .collect();
        let ns = normals.then(|| (0..n).map(|_| crate::geometry::random_unit_vector(&mut rng)).collect());
        PointCloud { points: pts, normals: ns }
    }

    #[test]
    fn round_trips_are_lossless() {
        let dir = tempfile::tempdir().unwrap();
        for (name, normals) in [("a.ply", true), ("b.ply", false), ("c.xyz", true), ("d.txt", false)] {
            let c = random_cloud(200, normals, 3);
            let path = dir.path().join(name);
            save_point_cloud(&c, &path).unwrap();
            let back = load_point_cloud(&path).unwrap();
            assert_eq!(back, c, "{name}");
            assert_eq!(back.normals.is_some(), normals);
        }
    }

    #[test]
    fn malformed_header_names_the_line() {
        let p = Path::new("bad.ply");
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nbogus line here\nend_header\n0\n";
        match parse_ply(text, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        match parse_ply("plx\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        let bad_value = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n1 x 3\n";
        match parse_ply(bad_value, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binary_and_unknown_formats_are_unsupported() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(parse_ply(text, Path::new("x.ply")), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_point_cloud(Path::new("cloud.obj")), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn extra_properties_and_elements_are_tolerated() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 3 255\n4 5 6 0\n3 0 1 1\n";
        let c = parse_ply(text, Path::new("x.ply")).unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
        assert!(c.normals.is_none());
    }

    #[test]
    fn xyz_rejects_ragged_rows() {
        match parse_xyz("1 2 3\n1 2 3 0 0 1\n", Path::new("r.xyz")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            points_per_fragment: 300,
            ..SceneSpec::default()
        };
        let pairs: Vec<FragmentPair> = (0..3)
            .map(|i| {
                let mut p = generate_synthetic_pair(&spec, 0.5, 0.01, i).unwrap();
                p.id = i as usize;
                p
            })
            .collect();
        write_dataset(&pairs, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in pairs.iter().zip(&back) {
            assert_eq!(a.cloud_a, b.cloud_a);
            assert_eq!(a.cloud_b, b.cloud_b);
            assert_eq!(a.gt_transform.translation, b.gt_transform.translation);
            assert!(a.gt_transform.rotation_error(&b.gt_transform) < 1e-12);
            assert_eq!((a.id, a.overlap, a.noise_sigma), (b.id, b.overlap, b.noise_sigma));
        }
    }
}
