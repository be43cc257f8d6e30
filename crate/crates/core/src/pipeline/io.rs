//! Scan and trajectory I/O.
//!
//! Scans: KITTI `.bin` (little-endian f32 x,y,z,intensity records), ASCII
//! PLY with x/y/z vertex properties, and a plain-text `x y z` format used by
//! the simulator. Trajectories: KITTI 12-number row-major `[R|t]` lines, with
//! `#`-prefixed header lines carrying the run configuration.

use crate::geom::{Mat3, Pose, Vec3};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: truncated record at byte {offset} (file is not a whole number of 16-byte x/y/z/intensity records)")]
    TruncatedBinary { path: String, offset: u64 },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: unsupported PLY ({message})")]
    UnsupportedPly { path: String, message: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanFormat {
    KittiBin,
    PlyAscii,
    Xyz,
}

impl ScanFormat {
    /// Infers the format from the file extension; `.bin` → KITTI, `.ply` →
    /// ASCII PLY, everything else plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::KittiBin,
            Some("ply") => Self::PlyAscii,
            _ => Self::Xyz,
        }
    }
}

/// Loads a scan as sensor-frame Cartesian points.
pub fn load_scan(path: &Path, format: ScanFormat) -> Result<Vec<Vec3>, IoError> {
    match format {
        ScanFormat::KittiBin => load_kitti_bin(path),
        ScanFormat::PlyAscii => load_ply_ascii(path),
        ScanFormat::Xyz => load_xyz(path),
    }
}

pub fn load_kitti_bin(path: &Path) -> Result<Vec<Vec3>, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| file_err(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(IoError::TruncatedBinary {
            path: path.display().to_string(),
            offset: (bytes.len() - bytes.len() % 16) as u64,
        });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|rec| {
            let f = |i: usize| {
                f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]) as f64
            };
            Vec3::new(f(0), f(4), f(8))
        })
        .collect())
}

pub fn load_ply_ascii(path: &Path) -> Result<Vec<Vec3>, IoError> {
    let unsupported = |message: &str| IoError::UnsupportedPly {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let reader = BufReader::new(fs::File::open(path).map_err(|e| file_err(path, e))?);
    let mut lines = reader.lines().enumerate();

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    // Column indices of x, y, z among the vertex properties.
    let mut coords = [None::<usize>; 3];
    let mut property_count = 0usize;
    let mut header_lines = 0usize;

    for (idx, line) in lines.by_ref() {
        let line = line.map_err(|e| file_err(path, e))?;
        header_lines = idx + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("ply") | Some("comment") | None => {}
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(unsupported("only ascii format is handled"));
                }
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                in_vertex_element = name == "vertex";
                if in_vertex_element {
                    let count = tok.next().and_then(|c| c.parse().ok());
                    vertex_count = Some(count.ok_or_else(|| unsupported("bad vertex count"))?);
                } else if vertex_count.is_some() {
                    return Err(unsupported("elements after vertex are not handled"));
                }
            }
            Some("property") if in_vertex_element => {
                let name = tok.nth(1).unwrap_or("");
                match name {
                    "x" => coords[0] = Some(property_count),
                    "y" => coords[1] = Some(property_count),
                    "z" => coords[2] = Some(property_count),
                    _ => {}
                }
                property_count += 1;
            }
            Some("property") => {}
            Some("end_header") => break,
            Some(other) => {
                return Err(unsupported(&format!("unexpected header keyword {other:?}")))
            }
        }
    }

    let count = vertex_count.ok_or_else(|| unsupported("no vertex element"))?;
    let [Some(cx), Some(cy), Some(cz)] = coords else {
        return Err(unsupported("vertex element lacks x/y/z properties"));
    };

    let mut points = Vec::with_capacity(count);
    for (idx, line) in lines.take(count) {
        let line = line.map_err(|e| file_err(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let get = |c: usize| -> Result<f64, IoError> {
            fields
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| IoError::Malformed {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("expected numeric field {c}"),
                })
        };
        points.push(Vec3::new(get(cx)?, get(cy)?, get(cz)?));
    }
    if points.len() != count {
        return Err(IoError::Malformed {
            path: path.display().to_string(),
            line: header_lines + points.len(),
            message: format!("expected {count} vertices, file ended after {}", points.len()),
        });
    }
    Ok(points)
}

pub fn load_xyz(path: &Path) -> Result<Vec<Vec3>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, std::num::ParseFloatError>>()
            .map_err(|e| IoError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if nums.len() != 3 {
            return Err(IoError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 3 numbers, got {}", nums.len()),
            });
        }
        points.push(Vec3::new(nums[0], nums[1], nums[2]));
    }
    Ok(points)
}

pub fn save_xyz(path: &Path, points: &[Vec3]) -> Result<(), IoError> {
    let mut out = String::with_capacity(points.len() * 24);
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

/// One KITTI pose line: the top 3×4 of the homogeneous transform, row-major.
pub fn pose_to_kitti_line(pose: &Pose) -> String {
    let r = &pose.rotation;
    let t = &pose.translation;
    format!(
        "{} {} {} {} {} {} {} {} {} {} {} {}",
        r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
        r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
        r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
    )
}

/// Writes the trajectory with the run configuration echoed into `#` header
/// lines, so every output file records how it was produced.
pub fn write_trajectory(
    path: &Path,
    poses: &[Pose],
    config_echo: Option<&str>,
) -> Result<(), IoError> {
    let mut out = String::new();
    if let Some(echo) = config_echo {
        for line in echo.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    for pose in poses {
        out.push_str(&pose_to_kitti_line(pose));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Pose>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, std::num::ParseFloatError>>()
            .map_err(|e| IoError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if nums.len() != 12 {
            return Err(IoError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 12 numbers, got {}", nums.len()),
            });
        }
        let rotation = Mat3::new(
            nums[0], nums[1], nums[2],
            nums[4], nums[5], nums[6],
            nums[8], nums[9], nums[10],
        );
        poses.push(Pose::new(rotation, Vec3::new(nums[3], nums[7], nums[11])));
    }
    Ok(poses)
}

/// Writes the per-frame diagnostics next to a trajectory output.
pub fn write_diagnostics(
    path: &Path,
    summaries: &[crate::estimator::FrameSummary],
) -> Result<(), IoError> {
    let mut out = String::new();
    for s in summaries {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| file_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_exp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kitti_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        let pts = [
            Vec3::new(1.5, -2.25, 3.0),
            Vec3::new(0.125, 4.5, -6.75),
        ];
        let mut bytes = Vec::new();
        for p in &pts {
            for v in [p.x as f32, p.y as f32, p.z as f32, 0.5f32] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&path, &bytes).unwrap();
        let loaded = load_scan(&path, ScanFormat::KittiBin).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in pts.iter().zip(&loaded) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn kitti_bin_truncated_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, vec![0u8; 40]).unwrap();
        match load_kitti_bin(&path) {
            Err(IoError::TruncatedBinary { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("expected TruncatedBinary, got {other:?}"),
        }
    }

    #[test]
    fn ply_ascii_with_extra_properties() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
             property float intensity\nproperty float x\nproperty float y\nproperty float z\n\
             end_header\n0.9 1 2 3\n0.1 4 5 6\n",
        )
        .unwrap();
        let pts = load_scan(&path, ScanFormat::PlyAscii).unwrap();
        assert_eq!(pts, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_rejects_binary_and_short_files() {
        let dir = tempfile::tempdir().unwrap();
        let binary = dir.path().join("b.ply");
        fs::write(&binary, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        assert!(matches!(
            load_ply_ascii(&binary),
            Err(IoError::UnsupportedPly { .. })
        ));
        let short = dir.path().join("s.ply");
        fs::write(
            &short,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        )
        .unwrap();
        assert!(matches!(load_ply_ascii(&short), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen::<f64>() * 10.0, rng.gen(), -rng.gen::<f64>()))
            .collect();
        save_xyz(&path, &pts).unwrap();
        let back = load_scan(&path, ScanFormat::from_path(&path)).unwrap();
        assert_eq!(pts, back);
    }

    #[test]
    fn trajectory_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poses: Vec<Pose> = (0..20)
            .map(|_| {
                Pose::new(
                    so3_exp(&Vec3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    )),
                    Vec3::new(rng.gen::<f64>() * 100.0, rng.gen(), rng.gen()),
                )
            })
            .collect();
        write_trajectory(&path, &poses, Some("seed = 3\nvoxel_size = 2.0")).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# seed = 3\n# voxel_size = 2.0\n"));
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), poses.len());
        for (a, b) in poses.iter().zip(&back) {
            assert_relative_eq!(a.rotation, b.rotation, epsilon = 1e-15);
            assert_relative_eq!(a.translation, b.translation, epsilon = 1e-15);
        }
    }

    #[test]
    fn trajectory_rejects_wrong_arity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(IoError::Malformed { line: 1, .. })
        ));
    }
}
