use std::fs;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraModel, CameraPose};
use crate::image::Image;

use super::sampling::{SceneExample, View};

pub const MANIFEST_NAME: &str = "cameras.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Input,
    Target,
}

/// One line of a camera manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestView {
    pub role: ViewRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world `[R | t]`, row-major.
    pub c2w: [[f64; 4]; 3],
}

impl ManifestView {
    pub fn from_camera(role: ViewRole, image: Option<String>, camera: &CameraModel) -> Self {
        let (r, t) = (camera.pose.rotation, camera.pose.translation);
        let k = camera.intrinsics;
        Self {
            role,
            image,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            c2w: [0, 1, 2].map(|i| [r[i][0], r[i][1], r[i][2], t[i]]),
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        let rotation = self.c2w.map(|row| [row[0], row[1], row[2]]);
        let translation = [self.c2w[0][3], self.c2w[1][3], self.c2w[2][3]];
        let intrinsics = CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        intrinsics.validate()?;
        Ok(CameraModel {
            pose: CameraPose::new(rotation, translation)?,
            intrinsics,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraManifest {
    pub views: Vec<ManifestView>,
}

impl CameraManifest {
    pub fn cameras(&self, role: ViewRole) -> Result<Vec<CameraModel>> {
        self.views
            .iter()
            .filter(|v| v.role == role)
            .map(ManifestView::camera)
            .collect()
    }
}

fn parse_error(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_manifest(path: &Path) -> Result<CameraManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CameraManifest =
        serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))?;
    for (i, v) in manifest.views.iter().enumerate() {
        v.camera()
            .map_err(|e| parse_error(path, 0, format!("view {i}: {e}")))?;
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &CameraManifest) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(manifest).map_err(|e| parse_error(path, 0, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(image.to_u8());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary `P6` with maxval 255; `#` comments allowed in the header.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut line = 1;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                if bytes[pos] == b'\n' {
                    line += 1;
                }
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::io(
                path,
                io::Error::new(io::ErrorKind::UnexpectedEof, "truncated PPM header"),
            ));
        }
        fields.push((
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
            line,
        ));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let (magic, magic_line) = &fields[0];
    if magic != "P6" {
        return Err(parse_error(
            path,
            *magic_line,
            format!("expected P6 magic, found `{magic}`"),
        ));
    }
    let number = |i: usize| -> Result<usize> {
        let (s, l) = &fields[i];
        s.parse()
            .map_err(|_| parse_error(path, *l, format!("expected a number, found `{s}`")))
    };
    let (width, height, maxval) = (number(1)?, number(2)?, number(3)?);
    if maxval != 255 {
        return Err(parse_error(
            path,
            fields[3].1,
            format!("only maxval 255 is supported, found {maxval}"),
        ));
    }
    let need = width * height * 3;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < need {
        return Err(Error::io(
            path,
            io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("PPM payload has {} of {need} bytes", payload.len()),
            ),
        ));
    }
    Image::from_u8(height, width, &payload[..need])
}

fn png_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(
        path,
        io::Error::new(io::ErrorKind::InvalidData, e.to_string()),
    )
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer
            .write_image_data(&image.to_u8())
            .map_err(|e| png_error(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Any 8/16-bit gray, gray-alpha, RGB or RGBA PNG; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| png_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_error(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| png_error(path, e))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_error(path, "unexpanded palette image")),
    };
    let rgb: Vec<u8> = buf[..info.buffer_size()]
        .chunks_exact(channels)
        .flat_map(|px| {
            if channels < 3 {
                [px[0]; 3]
            } else {
                [px[0], px[1], px[2]]
            }
        })
        .collect();
    Image::from_u8(info.height as usize, info.width as usize, &rgb)
}

/// Reads a `.ppm` or `.png` file by extension.
pub fn read_image(path: &Path) -> Result<Image> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ppm") => read_ppm(path),
        Some("png") => read_png(path),
        _ => Err(Error::io(
            path,
            io::Error::new(io::ErrorKind::Unsupported, "image must be .ppm or .png"),
        )),
    }
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(path, image),
        _ => write_ppm(path, image),
    }
}

pub fn write_example(example: &SceneExample, dir: &Path, format: ImageFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::new();
    for (role, prefix, list) in [
        (ViewRole::Input, "input", &example.inputs),
        (ViewRole::Target, "target", &example.targets),
    ] {
        for (i, v) in list.iter().enumerate() {
            let name = format!("{prefix}_{i:02}.{}", format.extension());
            write_image(&dir.join(&name), &v.image)?;
            views.push(ManifestView::from_camera(role, Some(name), &v.camera));
        }
    }
    write_manifest(&dir.join(MANIFEST_NAME), &CameraManifest { views })
}

pub fn read_example(dir: &Path) -> Result<SceneExample> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = read_manifest(&manifest_path)?;
    let mut example = SceneExample {
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    for (i, v) in manifest.views.iter().enumerate() {
        let name = v
            .image
            .as_ref()
            .ok_or_else(|| parse_error(&manifest_path, 0, format!("view {i} has no image")))?;
        let path = dir.join(name);
        let image = read_image(&path)?;
        if image.width() != v.width || image.height() != v.height {
            return Err(parse_error(
                &manifest_path,
                0,
                format!(
                    "{name} is {}×{} but its camera says {}×{}",
                    image.width(),
                    image.height(),
                    v.width,
                    v.height
                ),
            ));
        }
        let view = View {
            image,
            camera: v.camera()?,
        };
        match v.role {
            ViewRole::Input => example.inputs.push(view),
            ViewRole::Target => example.targets.push(view),
        }
    }
    Ok(example)
}

/// Directory name of the `index`-th example.
pub fn example_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

pub fn write_dataset(examples: &[SceneExample], dir: &Path) -> Result<()> {
    write_dataset_as(examples, dir, ImageFormat::Ppm)
}

pub fn write_dataset_as(examples: &[SceneExample], dir: &Path, format: ImageFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, ex) in examples.iter().enumerate() {
        write_example(ex, &dir.join(example_dir_name(i)), format)?;
    }
    Ok(())
}

/// Every subdirectory holding a manifest, in name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SceneExample>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_NAME).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::io(
            dir,
            io::Error::new(
                io::ErrorKind::NotFound,
                format!("no example directories with {MANIFEST_NAME}"),
            ),
        ));
    }
    dirs.iter().map(|d| read_example(d)).collect()
}
