//! Text formats for scenes and camera sets.
//!
//! Scene file:
//!
//! ```text
//! adpsplit-scene v1
//! extent <f64>
//! <mu x y z> <scale x y z> <quat w i j k> <opacity> <sh_dc r g b> [<sh_rest r g b>...]
//! ```
//!
//! Camera file:
//!
//! ```text
//! adpsplit-cameras v1
//! <r_c2w row-major, 9 values> <center x y z> <fx> <fy> <px> <py> <width> <height>
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every `f64` bit for bit. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Vector3};

use super::{Camera, Gaussian3D, Scene};
use crate::error::{Error, Result};

pub const SCENE_HEADER: &str = "adpsplit-scene v1";
pub const CAMERA_HEADER: &str = "adpsplit-cameras v1";

const GAUSSIAN_FIELDS: usize = 14;
const CAMERA_FIELDS: usize = 18;

pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = String::new();
    writeln!(out, "{SCENE_HEADER}").unwrap();
    writeln!(out, "extent {}", scene.extent).unwrap();
    for g in &scene.gaussians {
        let mut fields: Vec<f64> = Vec::with_capacity(GAUSSIAN_FIELDS + 3 * g.sh_rest.len());
        fields.extend(g.mu.iter());
        fields.extend(g.scale.iter());
        fields.extend([g.rot.w, g.rot.i, g.rot.j, g.rot.k]);
        fields.push(g.opacity);
        fields.extend(g.sh_dc.iter());
        for c in &g.sh_rest {
            fields.extend(c.iter());
        }
        push_record(&mut out, &fields);
    }
    out
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scene_to_string(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

pub fn parse_scene(text: &str, path: &Path) -> Result<Scene> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = content_lines(text);
    expect_header(&mut lines, SCENE_HEADER, path)?;
    let (ln, extent_line) = lines.next().ok_or_else(|| perr(2, "missing extent line".into()))?;
    let extent = match extent_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["extent", v] => parse_f64(v).map_err(|m| perr(ln, m))?,
        _ => return Err(perr(ln, format!("expected `extent <value>`, got `{extent_line}`"))),
    };

    let mut gaussians = Vec::new();
    for (ln, line) in lines {
        let vals = parse_fields(line).map_err(|m| perr(ln, m))?;
        if vals.len() < GAUSSIAN_FIELDS || !(vals.len() - GAUSSIAN_FIELDS).is_multiple_of(3) {
            return Err(perr(
                ln,
                format!("gaussian record has {} fields, expected 14 + 3k", vals.len()),
            ));
        }
        let v3 = |o: usize| Vector3::new(vals[o], vals[o + 1], vals[o + 2]);
        let g = Gaussian3D {
            mu: v3(0),
            scale: v3(3),
            rot: Quaternion::new(vals[6], vals[7], vals[8], vals[9]),
            opacity: vals[10],
            sh_dc: v3(11),
            sh_rest: (GAUSSIAN_FIELDS..vals.len()).step_by(3).map(v3).collect(),
        };
        g.validate().map_err(|msg| Error::InvalidGaussian {
            index: gaussians.len(),
            msg,
        })?;
        gaussians.push(g);
    }
    let scene = Scene { gaussians, extent };
    scene.validate()?;
    Ok(scene)
}

pub fn cameras_to_string(cameras: &[Camera]) -> String {
    let mut out = String::new();
    writeln!(out, "{CAMERA_HEADER}").unwrap();
    for c in cameras {
        let m = &c.r_c2w;
        let mut fields: Vec<f64> = Vec::with_capacity(CAMERA_FIELDS);
        for r in 0..3 {
            for col in 0..3 {
                fields.push(m[(r, col)]);
            }
        }
        fields.extend(c.center.iter());
        fields.extend([c.fx, c.fy, c.px, c.py, c.width as f64, c.height as f64]);
        push_record(&mut out, &fields);
    }
    out
}

pub fn save_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cameras_to_string(cameras)).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = content_lines(text);
    expect_header(&mut lines, CAMERA_HEADER, path)?;
    let mut cameras = Vec::new();
    for (ln, line) in lines {
        let v = parse_fields(line).map_err(|m| perr(ln, m))?;
        if v.len() != CAMERA_FIELDS {
            return Err(perr(ln, format!("camera record has {} fields, expected 18", v.len())));
        }
        let size = |x: f64| -> std::result::Result<usize, String> {
            if x >= 1.0 && x.fract() == 0.0 && x < 1e9 {
                Ok(x as usize)
            } else {
                Err(format!("invalid image size {x}"))
            }
        };
        let cam = Camera {
            r_c2w: Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]),
            center: Vector3::new(v[9], v[10], v[11]),
            fx: v[12],
            fy: v[13],
            px: v[14],
            py: v[15],
            width: size(v[16]).map_err(|m| perr(ln, m))?,
            height: size(v[17]).map_err(|m| perr(ln, m))?,
        };
        cam.validate().map_err(|msg| Error::InvalidCamera {
            index: cameras.len(),
            msg,
        })?;
        cameras.push(cam);
    }
    Ok(cameras)
}

fn push_record(out: &mut String, fields: &[f64]) {
    let mut first = true;
    for v in fields {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn expect_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
    path: &Path,
) -> Result<()> {
    match lines.next() {
        Some((_, l)) if l == header => Ok(()),
        Some((ln, l)) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: ln,
            msg: format!("expected header `{header}`, got `{l}`"),
        }),
        None => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("empty file, expected header `{header}`"),
        }),
    }
}

fn parse_fields(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace().map(parse_f64).collect()
}

fn parse_f64(tok: &str) -> std::result::Result<f64, String> {
    let v: f64 = tok.parse().map_err(|_| format!("invalid number `{tok}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number `{tok}`"))
    }
}
