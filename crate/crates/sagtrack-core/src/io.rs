//! Textual file formats: model, camera rig, image SoG, pose records and
//! scene specs.
//!
//! All formats are line oriented; blank lines and `#` comments are ignored
//! and every file starts with a version tag. Floats are written in Rust's
//! shortest round-trip form, so serialize -> parse is the identity. Parse
//! errors name the offending file and line.
//!
//! Model file (`sagmodel 1`):
//! ```text
//! bone <name> <parent|-> ox oy oz r11 .. r33
//! dof <name> <bone> revolute|prismatic|global-translation ax ay az lmin lmax
//! gauss <bone> mx my mz cxx cxy cxz cyy cyz czz h s v weight
//! landmark <name> <bone> lx ly lz
//! ```
//!
//! Camera file (`sagcams 1`): per camera a `camera` line followed by
//! `K` (9 numbers row-major), `R` (9), `t` (3) and `size w h` lines.
//!
//! Image SoG file (`sagsog 1 <w> <h>`): one Gaussian per line,
//! `cx cy sigma h s v`.
//!
//! Pose records: CSV with a `frame,<dof names...>` header and one row of DOF
//! values per frame.
//!
//! Scene spec (`sagscene 1`): `model`, `cameras` and `trajectory` paths
//! (relative to the spec file), optional `seed`, `noise_px`, `noise_color`
//! and `dropout`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::CameraModel;
use crate::error::{Result, SagError};
use crate::gaussian::Gaussian2D;
use crate::imagesog::{precompute_self_overlap, ImageSoG};
use crate::kinematics::{Bone, Dof, DofKind, Landmark, ModelGaussian, Pose, SkeletonModel};
use crate::synth::{NoiseConfig, SyntheticScene};

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> SagError {
    SagError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> SagError {
    SagError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Numbered, comment-stripped lines of a file.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

struct Fields<'a> {
    file: &'a str,
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'a str, line: usize, text: &'a str) -> Self {
        Self {
            file,
            line,
            tokens: text.split_whitespace(),
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str> {
        self.tokens
            .next()
            .ok_or_else(|| parse_err(self.file, self.line, format!("missing {what}")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let tok = self.word(what)?;
        tok.parse::<f64>()
            .map_err(|_| parse_err(self.file, self.line, format!("bad number for {what}: '{tok}'")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let tok = self.word(what)?;
        tok.parse::<u64>()
            .map_err(|_| parse_err(self.file, self.line, format!("bad integer for {what}: '{tok}'")))
    }

    fn vector3(&mut self, what: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64(what)?, self.f64(what)?, self.f64(what)?))
    }

    fn matrix3(&mut self, what: &str) -> Result<Matrix3<f64>> {
        let mut vals = [0.0; 9];
        for v in &mut vals {
            *v = self.f64(what)?;
        }
        Ok(Matrix3::from_row_slice(&vals))
    }

    fn finish(mut self) -> Result<()> {
        if let Some(extra) = self.tokens.next() {
            return Err(parse_err(
                self.file,
                self.line,
                format!("unexpected trailing token '{extra}'"),
            ));
        }
        Ok(())
    }
}

fn expect_version<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    file: &str,
    tag: &str,
) -> Result<(usize, Vec<String>)> {
    let (line_no, line) = lines
        .next()
        .ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some(tag) {
        return Err(parse_err(file, line_no, format!("expected '{tag} <version>' header")));
    }
    match toks.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(1) => {}
        _ => return Err(parse_err(file, line_no, "unsupported format version")),
    }
    Ok((line_no, toks.map(str::to_string).collect()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// model files
// ---------------------------------------------------------------------------

pub fn format_model(model: &SkeletonModel) -> String {
    let mut out = String::from("sagmodel 1\n");
    for bone in &model.bones {
        let parent = bone
            .parent
            .map(|p| model.bones[p].name.clone())
            .unwrap_or_else(|| "-".to_string());
        let _ = write!(out, "bone {} {}", bone.name, parent);
        for v in bone.offset.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {}", fmt_f64(bone.rest_rotation[(r, c)]));
            }
        }
        out.push('\n');
    }
    for dof in &model.dofs {
        let kind = match dof.kind {
            DofKind::Revolute => "revolute",
            DofKind::Prismatic => "prismatic",
            DofKind::GlobalTranslation => "global-translation",
        };
        let _ = write!(out, "dof {} {} {kind}", dof.name, model.bones[dof.bone].name);
        for v in dof.axis.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        let _ = writeln!(out, " {} {}", fmt_f64(dof.limits.0), fmt_f64(dof.limits.1));
    }
    for g in &model.gaussians {
        let _ = write!(out, "gauss {}", model.bones[g.bone].name);
        for v in g.mean.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        let c = &g.covariance;
        for v in [c.m11, c.m12, c.m13, c.m22, c.m23, c.m33] {
            let _ = write!(out, " {}", fmt_f64(v));
        }
        for v in g.color.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        let _ = writeln!(out, " {}", fmt_f64(g.weight));
    }
    for lm in &model.landmarks {
        let _ = write!(out, "landmark {} {}", lm.name, model.bones[lm.bone].name);
        for v in lm.offset.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn parse_model(text: &str, file: &str) -> Result<SkeletonModel> {
    let mut lines = content_lines(text);
    expect_version(&mut lines, file, "sagmodel")?;
    let mut model = SkeletonModel {
        bones: Vec::new(),
        dofs: Vec::new(),
        gaussians: Vec::new(),
        landmarks: Vec::new(),
    };
    let bone_index = |model: &SkeletonModel, name: &str, file: &str, line: usize| -> Result<usize> {
        model
            .bones
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| parse_err(file, line, format!("unknown bone '{name}'")))
    };
    for (line_no, line) in lines {
        let mut f = Fields::new(file, line_no, line);
        match f.word("record kind")? {
            "bone" => {
                let name = f.word("bone name")?.to_string();
                let parent_name = f.word("parent name")?;
                let parent = if parent_name == "-" {
                    None
                } else {
                    Some(bone_index(&model, parent_name, file, line_no)?)
                };
                let offset = f.vector3("bone offset")?;
                let rest_rotation = f.matrix3("rest rotation")?;
                f.finish()?;
                if model.bones.iter().any(|b| b.name == name) {
                    return Err(parse_err(file, line_no, format!("duplicate bone '{name}'")));
                }
                model.bones.push(Bone {
                    name,
                    parent,
                    offset,
                    rest_rotation,
                });
            }
            "dof" => {
                let name = f.word("dof name")?.to_string();
                let bone = bone_index(&model, f.word("bone name")?, file, line_no)?;
                let kind = match f.word("dof kind")? {
                    "revolute" => DofKind::Revolute,
                    "prismatic" => DofKind::Prismatic,
                    "global-translation" => DofKind::GlobalTranslation,
                    other => {
                        return Err(parse_err(
                            file,
                            line_no,
                            format!("unknown dof kind '{other}'"),
                        ))
                    }
                };
                let axis = f.vector3("dof axis")?;
                let limits = (f.f64("lower limit")?, f.f64("upper limit")?);
                f.finish()?;
                model.dofs.push(Dof {
                    name,
                    bone,
                    kind,
                    axis,
                    limits,
                });
            }
            "gauss" => {
                let bone = bone_index(&model, f.word("bone name")?, file, line_no)?;
                let mean = f.vector3("gaussian mean")?;
                let (xx, xy, xz) = (f.f64("cov xx")?, f.f64("cov xy")?, f.f64("cov xz")?);
                let (yy, yz, zz) = (f.f64("cov yy")?, f.f64("cov yz")?, f.f64("cov zz")?);
                let covariance = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
                let color = f.vector3("color")?;
                let weight = f.f64("weight")?;
                f.finish()?;
                model.gaussians.push(ModelGaussian {
                    bone,
                    mean,
                    covariance,
                    color,
                    weight,
                });
            }
            "landmark" => {
                let name = f.word("landmark name")?.to_string();
                let bone = bone_index(&model, f.word("bone name")?, file, line_no)?;
                let offset = f.vector3("landmark offset")?;
                f.finish()?;
                model.landmarks.push(Landmark { name, bone, offset });
            }
            other => {
                return Err(parse_err(
                    file,
                    line_no,
                    format!("unknown record kind '{other}'"),
                ))
            }
        }
    }
    model
        .validate()
        .map_err(|e| parse_err(file, 0, format!("invalid model: {e}")))?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &SkeletonModel) -> Result<()> {
    std::fs::write(path, format_model(model)).map_err(|e| io_err(path, e))
}

pub fn read_model(path: &Path) -> Result<SkeletonModel> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_model(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// camera files
// ---------------------------------------------------------------------------

pub fn format_cameras(cams: &[CameraModel]) -> String {
    let mut out = String::from("sagcams 1\n");
    for cam in cams {
        out.push_str("camera\n");
        out.push_str("K");
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {}", fmt_f64(cam.k[(r, c)]));
            }
        }
        out.push_str("\nR");
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {}", fmt_f64(cam.r[(r, c)]));
            }
        }
        out.push_str("\nt");
        for v in cam.t.iter() {
            let _ = write!(out, " {}", fmt_f64(*v));
        }
        let _ = writeln!(out, "\nsize {} {}", cam.width, cam.height);
    }
    out
}

pub fn parse_cameras(text: &str, file: &str) -> Result<Vec<CameraModel>> {
    let mut lines = content_lines(text);
    expect_version(&mut lines, file, "sagcams")?;
    struct Partial {
        line: usize,
        k: Option<Matrix3<f64>>,
        r: Option<Matrix3<f64>>,
        t: Option<Vector3<f64>>,
        size: Option<(u32, u32)>,
    }
    let mut cams = Vec::new();
    let mut current: Option<Partial> = None;
    let close = |p: Option<Partial>, cams: &mut Vec<CameraModel>| -> Result<()> {
        if let Some(p) = p {
            let missing = |what: &str| parse_err(file, p.line, format!("camera missing {what}"));
            let k = p.k.ok_or_else(|| missing("K"))?;
            let r = p.r.ok_or_else(|| missing("R"))?;
            let t = p.t.ok_or_else(|| missing("t"))?;
            let (w, h) = p.size.ok_or_else(|| missing("size"))?;
            let cam = CameraModel::new(k, r, t, w, h)
                .map_err(|e| parse_err(file, p.line, format!("invalid camera: {e}")))?;
            cams.push(cam);
        }
        Ok(())
    };
    for (line_no, line) in lines {
        let mut f = Fields::new(file, line_no, line);
        match f.word("record kind")? {
            "camera" => {
                f.finish()?;
                close(current.take(), &mut cams)?;
                current = Some(Partial {
                    line: line_no,
                    k: None,
                    r: None,
                    t: None,
                    size: None,
                });
            }
            key @ ("K" | "R" | "t" | "size") => {
                let p = current
                    .as_mut()
                    .ok_or_else(|| parse_err(file, line_no, "field outside a camera block"))?;
                match key {
                    "K" => p.k = Some(f.matrix3("K entries")?),
                    "R" => p.r = Some(f.matrix3("R entries")?),
                    "t" => p.t = Some(f.vector3("t entries")?),
                    _ => {
                        let w = f.u64("width")? as u32;
                        let h = f.u64("height")? as u32;
                        p.size = Some((w, h));
                    }
                }
                f.finish()?;
            }
            other => {
                return Err(parse_err(
                    file,
                    line_no,
                    format!("unknown record kind '{other}'"),
                ))
            }
        }
    }
    close(current.take(), &mut cams)?;
    if cams.is_empty() {
        return Err(parse_err(file, 0, "no cameras in file"));
    }
    Ok(cams)
}

pub fn write_cameras(path: &Path, cams: &[CameraModel]) -> Result<()> {
    std::fs::write(path, format_cameras(cams)).map_err(|e| io_err(path, e))
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraModel>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_cameras(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// image SoG files
// ---------------------------------------------------------------------------

pub fn format_imagesog(sog: &ImageSoG) -> String {
    let mut out = format!("sagsog 1 {} {}\n", sog.source_size.0, sog.source_size.1);
    for g in &sog.gaussians {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            fmt_f64(g.mean.x),
            fmt_f64(g.mean.y),
            fmt_f64(g.covariance.m11.sqrt()),
            fmt_f64(g.color.x),
            fmt_f64(g.color.y),
            fmt_f64(g.color.z)
        );
    }
    out
}

pub fn parse_imagesog(text: &str, file: &str) -> Result<ImageSoG> {
    let mut lines = content_lines(text);
    let (header_line, rest) = expect_version(&mut lines, file, "sagsog")?;
    if rest.len() != 2 {
        return Err(parse_err(file, header_line, "header must be 'sagsog 1 <w> <h>'"));
    }
    let parse_dim = |s: &String| -> Result<u32> {
        s.parse::<u32>()
            .map_err(|_| parse_err(file, header_line, format!("bad image dimension '{s}'")))
    };
    let (w, h) = (parse_dim(&rest[0])?, parse_dim(&rest[1])?);
    let mut gaussians = Vec::new();
    for (line_no, line) in lines {
        let mut f = Fields::new(file, line_no, line);
        let cx = f.f64("cx")?;
        let cy = f.f64("cy")?;
        let sigma = f.f64("sigma")?;
        let color = f.vector3("color")?;
        f.finish()?;
        let g = Gaussian2D::isotropic(Vector2::new(cx, cy), sigma, color)
            .map_err(|e| parse_err(file, line_no, format!("invalid gaussian: {e}")))?;
        gaussians.push(g);
    }
    precompute_self_overlap(ImageSoG {
        gaussians,
        self_overlap: Vec::new(),
        source_size: (w, h),
    })
}

pub fn write_imagesog(path: &Path, sog: &ImageSoG) -> Result<()> {
    std::fs::write(path, format_imagesog(sog)).map_err(|e| io_err(path, e))
}

pub fn read_imagesog(path: &Path) -> Result<ImageSoG> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_imagesog(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// pose records (CSV)
// ---------------------------------------------------------------------------

pub fn format_poses(model: &SkeletonModel, poses: &[Pose]) -> String {
    let mut out = String::from("frame");
    for dof in &model.dofs {
        let _ = write!(out, ",{}", dof.name);
    }
    out.push('\n');
    for (i, pose) in poses.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in pose.theta.iter() {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a pose CSV; returns the DOF names from the header and the poses in
/// row order.
pub fn parse_poses(text: &str, file: &str) -> Result<(Vec<String>, Vec<Pose>)> {
    let mut lines = content_lines(text);
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(file, 1, "empty pose file"))?;
    let mut cols = header.split(',').map(str::trim);
    if cols.next() != Some("frame") {
        return Err(parse_err(file, line_no, "header must start with 'frame'"));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    if names.is_empty() {
        return Err(parse_err(file, line_no, "no DOF columns in header"));
    }
    let mut poses = Vec::new();
    for (line_no, line) in lines {
        let mut cols = line.split(',').map(str::trim);
        let frame_tok = cols
            .next()
            .ok_or_else(|| parse_err(file, line_no, "missing frame index"))?;
        frame_tok
            .parse::<usize>()
            .map_err(|_| parse_err(file, line_no, format!("bad frame index '{frame_tok}'")))?;
        let values = cols
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| parse_err(file, line_no, format!("bad DOF value '{tok}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != names.len() {
            return Err(parse_err(
                file,
                line_no,
                format!("expected {} DOF values, got {}", names.len(), values.len()),
            ));
        }
        poses.push(Pose::from_vec(values));
    }
    Ok((names, poses))
}

pub fn write_poses(path: &Path, model: &SkeletonModel, poses: &[Pose]) -> Result<()> {
    std::fs::write(path, format_poses(model, poses)).map_err(|e| io_err(path, e))
}

pub fn read_poses(path: &Path) -> Result<(Vec<String>, Vec<Pose>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_poses(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// scene specs
// ---------------------------------------------------------------------------

/// A parsed scene spec with paths resolved against the spec file location.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub model_path: PathBuf,
    pub cameras_path: PathBuf,
    pub trajectory_path: PathBuf,
    pub seed: u64,
    pub noise: Option<NoiseConfig>,
    /// Image-Gaussian granularity per projected model Gaussian (see
    /// [`SyntheticScene::subdivide`]).
    pub subdivide: u32,
    /// Solve cell radii so the truth pose exactly meets every occlusion cap
    /// (see [`SyntheticScene::balanced_caps`]).
    pub balanced_caps: bool,
}

pub fn parse_scene(text: &str, file: &str, base_dir: &Path) -> Result<SceneSpec> {
    let mut lines = content_lines(text);
    expect_version(&mut lines, file, "sagscene")?;
    let mut model_path = None;
    let mut cameras_path = None;
    let mut trajectory_path = None;
    let mut seed = 0u64;
    let mut subdivide = 1u32;
    let mut balanced_caps = false;
    let (mut noise_px, mut noise_color, mut dropout) = (0.0f64, 0.0f64, 0.0f64);
    for (line_no, line) in lines {
        let mut f = Fields::new(file, line_no, line);
        match f.word("record kind")? {
            "model" => model_path = Some(base_dir.join(f.word("model path")?)),
            "cameras" => cameras_path = Some(base_dir.join(f.word("cameras path")?)),
            "trajectory" => trajectory_path = Some(base_dir.join(f.word("trajectory path")?)),
            "seed" => seed = f.u64("seed")?,
            "subdivide" => subdivide = f.u64("subdivide")? as u32,
            "balanced_caps" => balanced_caps = f.u64("balanced_caps")? != 0,
            "noise_px" => noise_px = f.f64("noise_px")?,
            "noise_color" => noise_color = f.f64("noise_color")?,
            "dropout" => dropout = f.f64("dropout")?,
            other => {
                return Err(parse_err(file, line_no, format!("unknown scene key '{other}'")))
            }
        }
        f.finish()?;
    }
    let require = |opt: Option<PathBuf>, what: &str| {
        opt.ok_or_else(|| parse_err(file, 0, format!("scene is missing the '{what}' entry")))
    };
    let noise = if noise_px > 0.0 || noise_color > 0.0 || dropout > 0.0 {
        Some(NoiseConfig {
            mean_jitter_px: noise_px,
            color_jitter: noise_color,
            dropout,
        })
    } else {
        None
    };
    Ok(SceneSpec {
        model_path: require(model_path, "model")?,
        cameras_path: require(cameras_path, "cameras")?,
        trajectory_path: require(trajectory_path, "trajectory")?,
        seed,
        noise,
        subdivide,
        balanced_caps,
    })
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scene(&text, &path.display().to_string(), base)
}

/// Loads a scene spec and all files it references.
pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let spec = read_scene_spec(path)?;
    let model = read_model(&spec.model_path)?;
    let cameras = read_cameras(&spec.cameras_path)?;
    let (_, trajectory) = read_poses(&spec.trajectory_path)?;
    let scene = SyntheticScene {
        model,
        trajectory,
        cameras,
        noise: spec.noise,
        seed: spec.seed,
        subdivide: spec.subdivide,
        balanced_caps: spec.balanced_caps,
    };
    scene.validate()?;
    Ok(scene)
}
