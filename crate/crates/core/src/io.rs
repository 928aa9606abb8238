//! File formats: CSV clouds, poses, IMU samples and twists; binary PLY
//! export; TOML configuration files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::cloud::{PointCloud, TimedPoint};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::simulator::{ImuSample, ImuStream};
use crate::trajectory::Twist;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Self {
            names: headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect(),
        }
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.find(name)
            .ok_or_else(|| format_err(format!("missing column `{name}`")))
    }

    fn require_all<const N: usize>(&self, names: [&str; N]) -> Result<[usize; N]> {
        let mut out = [0; N];
        for (o, n) in out.iter_mut().zip(names) {
            *o = self.require(n)?;
        }
        Ok(out)
    }

    fn optional_all<const N: usize>(&self, names: [&str; N]) -> Option<[usize; N]> {
        self.require_all(names).ok()
    }
}

fn field(record: &csv::StringRecord, col: usize, line: u64) -> Result<Option<f64>> {
    let raw = record.get(col).map(str::trim).unwrap_or("");
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| format_err(format!("line {line}: `{raw}` is not a number")))
}

fn required(record: &csv::StringRecord, col: usize, line: u64) -> Result<f64> {
    field(record, col, line)?.ok_or_else(|| format_err(format!("line {line}: empty required field")))
}

fn vec3(record: &csv::StringRecord, cols: [usize; 3], line: u64) -> Result<Vec3> {
    Ok(Vec3::new(
        required(record, cols[0], line)?,
        required(record, cols[1], line)?,
        required(record, cols[2], line)?,
    ))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Reads a cloud with columns `x,y,z,t` and optionally `nx,ny,nz`,
/// `curvature`, `sigma`, `weight`, `excluded`, in any order.
pub fn read_cloud<R: Read>(input: R, frame_id: &str) -> Result<PointCloud> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let xyz = cols.require_all(["x", "y", "z"])?;
    let t = cols.require("t")?;
    let normal = cols.optional_all(["nx", "ny", "nz"]);
    let curvature = cols.find("curvature");
    let sigma = cols.find("sigma");
    let weight = cols.find("weight");
    let excluded = cols.find("excluded");

    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let mut p = TimedPoint::new(vec3(&record, xyz, line)?, required(&record, t, line)?);
        if let Some(n) = normal {
            let has = n.iter().all(|&c| record.get(c).is_some_and(|v| !v.trim().is_empty()));
            if has {
                p.normal = Some(vec3(&record, n, line)?);
            }
        }
        if let Some(c) = curvature {
            p.curvature = field(&record, c, line)?;
        }
        if let Some(c) = sigma {
            p.skew_sigma = field(&record, c, line)?;
        }
        if let Some(c) = weight {
            p.weight = field(&record, c, line)?;
        }
        if let Some(c) = excluded {
            p.excluded = field(&record, c, line)?.is_some_and(|v| v != 0.0);
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, frame_id))
}

pub fn read_cloud_file(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let frame = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    read_cloud(File::open(path)?, frame)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `x,y,z,t`, then `nx,ny,nz` and `curvature` when any point carries
/// them, then `sigma,weight` when any point carries either, then `excluded`
/// when any point is excluded. Values use round-trip decimal formatting.
pub fn write_cloud<W: Write>(output: W, cloud: &PointCloud) -> Result<()> {
    let normals = cloud.points.iter().any(|p| p.normal.is_some());
    let curvature = cloud.points.iter().any(|p| p.curvature.is_some());
    let weights = cloud.points.iter().any(|p| p.weight.is_some() || p.skew_sigma.is_some());
    let excluded = cloud.points.iter().any(|p| p.excluded);

    let mut header = vec!["x", "y", "z", "t"];
    if normals {
        header.extend(["nx", "ny", "nz"]);
    }
    if curvature {
        header.push("curvature");
    }
    if weights {
        header.extend(["sigma", "weight"]);
    }
    if excluded {
        header.push("excluded");
    }
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(&header)?;
    for p in &cloud.points {
        let mut row = vec![
            p.position.x.to_string(),
            p.position.y.to_string(),
            p.position.z.to_string(),
            p.timestamp.to_string(),
        ];
        if normals {
            match p.normal {
                Some(n) => row.extend([n.x.to_string(), n.y.to_string(), n.z.to_string()]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        if curvature {
            row.push(opt(p.curvature));
        }
        if weights {
            row.push(opt(p.skew_sigma));
            row.push(opt(p.weight));
        }
        if excluded {
            row.push(u8::from(p.excluded).to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_cloud_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_cloud(BufWriter::new(File::create(path)?), cloud)
}

/// Timestamped poses, header `t,qw,qx,qy,qz,x,y,z`.
pub fn write_poses<W: Write>(output: W, poses: &[(f64, Pose)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["t", "qw", "qx", "qy", "qz", "x", "y", "z"])?;
    for (t, pose) in poses {
        let q = pose.wxyz();
        let v = pose.translation;
        wtr.write_record([*t, q[0], q[1], q[2], q[3], v.x, v.y, v.z].map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_poses<R: Read>(input: R) -> Result<Vec<(f64, Pose)>> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let [t, qw, qx, qy, qz] = cols.require_all(["t", "qw", "qx", "qy", "qz"])?;
    let xyz = cols.require_all(["x", "y", "z"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let q = [qw, qx, qy, qz]
            .iter()
            .map(|&c| required(&record, c, line))
            .collect::<Result<Vec<_>>>()?;
        if q.iter().map(|v| v * v).sum::<f64>() <= 0.0 {
            return Err(format_err(format!("line {line}: zero quaternion")));
        }
        let pose = Pose::from_wxyz(q[0], q[1], q[2], q[3], vec3(&record, xyz, line)?);
        out.push((required(&record, t, line)?, pose));
    }
    Ok(out)
}

/// IMU samples, header `t,wx,wy,wz,ax,ay,az`.
pub fn write_imu<W: Write>(output: W, imu: &ImuStream) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["t", "wx", "wy", "wz", "ax", "ay", "az"])?;
    for s in &imu.samples {
        let (g, a) = (s.gyro, s.accel);
        wtr.write_record([s.timestamp, g.x, g.y, g.z, a.x, a.y, a.z].map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_imu<R: Read>(input: R) -> Result<ImuStream> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let t = cols.require("t")?;
    let w = cols.require_all(["wx", "wy", "wz"])?;
    let a = cols.require_all(["ax", "ay", "az"])?;
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        samples.push(ImuSample {
            timestamp: required(&record, t, line)?,
            gyro: vec3(&record, w, line)?,
            accel: vec3(&record, a, line)?,
        });
    }
    let stream = ImuStream { samples };
    stream.validate()?;
    Ok(stream)
}

/// Body twists, header `t,vx,vy,vz,wx,wy,wz`.
pub fn write_twists<W: Write>(output: W, twists: &[Twist]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    wtr.write_record(["t", "vx", "vy", "vz", "wx", "wy", "wz"])?;
    for tw in twists {
        let (v, w) = (tw.linear, tw.angular);
        wtr.write_record([tw.timestamp, v.x, v.y, v.z, w.x, w.y, w.z].map(|x| x.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_twists<R: Read>(input: R) -> Result<Vec<Twist>> {
    let mut rdr = reader(input);
    let cols = Columns::new(rdr.headers()?);
    let t = cols.require("t")?;
    let v = cols.require_all(["vx", "vy", "vz"])?;
    let w = cols.require_all(["wx", "wy", "wz"])?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        out.push(Twist::new(
            required(&record, t, line)?,
            vec3(&record, v, line)?,
            vec3(&record, w, line)?,
        ));
    }
    Ok(out)
}

/// Binary little-endian PLY with double `x,y,z,t` and float `weight` per vertex.
/// Points without a weight are written with the weight they act with (1, or 0 if excluded).
pub fn write_ply<W: Write>(mut output: W, cloud: &PointCloud) -> Result<()> {
    write!(
        output,
        "ply\nformat binary_little_endian 1.0\ncomment frame {}\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nproperty double t\n\
         property float weight\nend_header\n",
        cloud.frame_id,
        cloud.len()
    )?;
    let mut buf = Vec::with_capacity(cloud.len() * 36);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.timestamp] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(p.effective_weight() as f32).to_le_bytes());
    }
    output.write_all(&buf)?;
    output.flush()?;
    Ok(())
}

pub fn write_ply_file(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_ply(BufWriter::new(File::create(path)?), cloud)
}

/// Parses a TOML document into `T`.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| format_err(e.to_string()))
}

pub fn read_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    parse_toml(&std::fs::read_to_string(path)?)
}

pub fn to_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| format_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_round_trip() {
        let mut a = TimedPoint::new(Vec3::new(0.1, -2.5, 3.0), 0.012);
        a.normal = Some(Vec3::new(0.0, 0.6, 0.8));
        a.weight = Some(0.25);
        a.skew_sigma = Some(0.031);
        let b = TimedPoint::new(Vec3::new(1.0 / 3.0, 0.0, -1e-7), 0.05);
        let cloud = PointCloud::new(vec![a, b], "scan");
        let mut buf = Vec::new();
        write_cloud(&mut buf, &cloud).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z,t,nx,ny,nz,sigma,weight\n"));
        let back = read_cloud(buf.as_slice(), "scan").unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn plain_cloud_header_and_errors() {
        let back = read_cloud("t,z,y,x\n0.5,3,2,1\n".as_bytes(), "c").unwrap();
        assert_eq!(back.points[0].position, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(back.points[0].timestamp, 0.5);
        assert!(matches!(read_cloud("x,y,z\n1,2,3\n".as_bytes(), "c"), Err(Error::Format(_))));
        assert!(matches!(read_cloud("x,y,z,t\n1,a,3,0\n".as_bytes(), "c"), Err(Error::Format(_))));
    }

    #[test]
    fn pose_imu_twist_round_trip() {
        let poses = vec![
            (0.0, Pose::identity()),
            (0.1, Pose::from_vectors(&Vec3::new(0.1, 0.2, -0.3), &Vec3::new(1.0, 2.0, 3.0))),
        ];
        let mut buf = Vec::new();
        write_poses(&mut buf, &poses).unwrap();
        let back = read_poses(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].1.translation, poses[1].1.translation);
        assert!((back[1].1.rotation.angle_to(&poses[1].1.rotation)) < 1e-15);

        let imu = ImuStream {
            samples: vec![
                ImuSample { timestamp: 0.0, gyro: Vec3::zeros(), accel: Vec3::new(0.0, 0.0, 9.81) },
                ImuSample { timestamp: 0.01, gyro: Vec3::x(), accel: Vec3::y() },
            ],
        };
        let mut buf = Vec::new();
        write_imu(&mut buf, &imu).unwrap();
        assert_eq!(read_imu(buf.as_slice()).unwrap(), imu);

        let twists = vec![Twist::new(0.0, Vec3::x(), Vec3::z())];
        let mut buf = Vec::new();
        write_twists(&mut buf, &twists).unwrap();
        assert_eq!(read_twists(buf.as_slice()).unwrap(), twists);
    }

    #[test]
    fn ply_layout() {
        let mut p = TimedPoint::new(Vec3::new(1.0, 2.0, 3.0), 0.04);
        p.weight = Some(0.5);
        let cloud = PointCloud::new(vec![p], "m");
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud).unwrap();
        let end = b"end_header\n";
        let pos = buf.windows(end.len()).position(|w| w == end).unwrap() + end.len();
        let body = &buf[pos..];
        assert_eq!(body.len(), 36);
        assert_eq!(f64::from_le_bytes(body[8..16].try_into().unwrap()), 2.0);
        assert_eq!(f32::from_le_bytes(body[32..36].try_into().unwrap()), 0.5);
    }

    #[test]
    fn pose_toml_forms() {
        #[derive(serde::Deserialize, serde::Serialize)]
        struct Wrap {
            pose: Pose,
        }
        let w: Wrap = parse_toml("[pose]\ntranslation = [1.0, 2.0, 3.0]\nrotation_vector = [0.0, 0.0, 1.5707963267948966]\n").unwrap();
        let p = w.pose.transform_point(&Vec3::x());
        assert!((p - Vec3::new(1.0, 3.0, 3.0)).norm() < 1e-12);
        let text = to_toml(&w).unwrap();
        let again: Wrap = parse_toml(&text).unwrap();
        assert_eq!(again.pose, w.pose);
        assert!(parse_toml::<Wrap>("[pose]\nquaternion = [0.0, 0.0, 0.0, 0.0]\n").is_err());
    }
}
