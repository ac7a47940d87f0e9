//! Software rasterizer for part masks, IUV maps and depth.
//!
//! Entities are posed in the camera frame (+z forward, +y down in the image,
//! origin at the top-left corner). Pixels are sampled at their centres.
//! Triangles are clipped against `z = Z_NEAR`, back faces are culled, and
//! depth and UV are interpolated perspective-correctly.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::PosedEntity;
use crate::mesh::{tessellate, TriMesh};

pub const Z_NEAR: f64 = 1e-4;
pub const DEFAULT_TESSELLATION: usize = 48;
/// Long-side resolution used when rendering supervision targets.
pub const DEFAULT_RENDER_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(f64, f64),
    Behind,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Domain("camera focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Domain("camera principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("camera image size must be at least 1x1".into()));
        }
        Ok(())
    }

    /// Same view at a different image size.
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Same view with the long side set to `size`.
    pub fn with_long_side(&self, size: u32) -> Camera {
        let long = self.width.max(self.height) as f64;
        let k = size as f64 / long;
        let w = ((self.width as f64 * k).round() as u32).max(1);
        let h = ((self.height as f64 * k).round() as u32).max(1);
        self.resized(w, h)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        if p.z > Z_NEAR {
            Projection::Pixel(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
        } else {
            Projection::Behind
        }
    }
}

pub fn project_point(camera: &Camera, p: &Vector3<f64>) -> Result<Projection> {
    if !p.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("non-finite point".into()));
    }
    Ok(camera.project(p))
}

/// Per-pixel part ids, row-major; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

/// Camera-frame depth, row-major; background is `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

/// Per-pixel part id with surface coordinates `U = (omega + pi) / 2pi`,
/// `V = (eta + pi/2) / pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct IuvMap {
    pub width: u32,
    pub height: u32,
    pub i: Vec<u16>,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub mask: MaskMap,
    pub depth: DepthMap,
    pub iuv: IuvMap,
}

impl MaskMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn count(&self, label: u16) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    /// 8-bit grayscale PNG with the part id as gray level.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let bytes = self
            .data
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| Error::Label(format!("part id {v} does not fit in 8 bits"))))
            .collect::<Result<Vec<u8>>>()?;
        let img = image::GrayImage::from_raw(self.width, self.height, bytes).expect("buffer size");
        encode_png(&image::DynamicImage::ImageLuma8(img))
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.into_raw().into_iter().map(u16::from).collect(),
        })
    }
}

impl IuvMap {
    /// 3-channel PNG `(I, round(255 U), round(255 V))`.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut img = RgbImage::new(self.width, self.height);
        for (k, px) in img.pixels_mut().enumerate() {
            let i = u8::try_from(self.i[k]).map_err(|_| Error::Label(format!("part id {} does not fit in 8 bits", self.i[k])))?;
            let q = |t: f32| (255.0 * t).round().clamp(0.0, 255.0) as u8;
            *px = Rgb([i, q(self.u[k]), q(self.v[k])]);
        }
        encode_png(&image::DynamicImage::ImageRgb8(img))
    }
}

const DEPTH_MAGIC: &[u8; 4] = b"P3HD";

impl DepthMap {
    /// `P3HD` magic, width, height, a reserved zero word, then little-endian
    /// `f32` depths row by row.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for d in &self.data {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(Error::Domain("not a P3HD depth file".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
        let (width, height) = (word(4), word(8));
        let n = width as usize * height as usize;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::Dimension(format!("depth payload of {} bytes for {width}x{height}", bytes.len() - 16)));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { width, height, data })
    }
}

fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// A part mesh in the camera frame with its label.
#[derive(Debug, Clone)]
pub struct LabeledMesh {
    pub label: u16,
    pub mesh: TriMesh,
}

/// Tessellates every part of the given entities. Labels run from 1 in entity
/// order, then part order.
pub fn scene_meshes(entities: &[&PosedEntity], resolution: usize) -> Result<Vec<LabeledMesh>> {
    let mut out = Vec::new();
    for e in entities {
        out.extend(entity_meshes(e, out.len() as u16 + 1, resolution)?);
    }
    Ok(out)
}

pub fn entity_meshes(entity: &PosedEntity, first_label: u16, resolution: usize) -> Result<Vec<LabeledMesh>> {
    entity
        .parts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            Ok(LabeledMesh {
                label: first_label + k as u16,
                mesh: tessellate(&p.sq, resolution)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    eta: f64,
    omega: f64,
}

fn lerp(a: &ClipVertex, b: &ClipVertex, t: f64) -> ClipVertex {
    ClipVertex {
        p: a.p + (b.p - a.p) * t,
        eta: a.eta + (b.eta - a.eta) * t,
        omega: a.omega + (b.omega - a.omega) * t,
    }
}

/// Clips a triangle against the near plane.
fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for k in 0..3 {
        let (a, b) = (&tri[k], &tri[(k + 1) % 3]);
        let (ina, inb) = (a.p.z > Z_NEAR, b.p.z > Z_NEAR);
        if ina {
            out.push(*a);
        }
        if ina != inb {
            let t = (Z_NEAR - a.p.z) / (b.p.z - a.p.z);
            let mut v = lerp(a, b, t);
            v.p.z = Z_NEAR * (1.0 + 1e-9);
            out.push(v);
        }
    }
    out
}

/// Fixes the attributes of pole and seam triangles before interpolation.
/// Returns whether the triangle should use nearest-vertex UV.
fn prepare_uv(tri: &mut [ClipVertex; 3]) -> bool {
    let is_pole = |v: &ClipVertex| (v.eta.abs() - FRAC_PI_2).abs() < 1e-12;
    for k in 0..3 {
        if is_pole(&tri[k]) {
            let others: Vec<f64> = (0..3).filter(|&m| m != k && !is_pole(&tri[m])).map(|m| tri[m].omega).collect();
            if let [a, b] = others[..] {
                tri[k].omega = if (a - b).abs() > PI { a } else { 0.5 * (a + b) };
            }
        }
    }
    let (lo, hi) = tri.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.omega), hi.max(v.omega)));
    hi - lo > PI
}

struct Target<'a> {
    camera: &'a Camera,
    mask: &'a mut [u16],
    depth: &'a mut [f32],
    zbuf: &'a mut [f64],
    u: &'a mut [f32],
    v: &'a mut [f32],
}

fn raster_triangle(t: &mut Target, tri: &[ClipVertex; 3], label: u16, nearest_uv: bool) {
    let cam = t.camera;
    let s: Vec<(f64, f64)> = tri
        .iter()
        .map(|c| (cam.fx * c.p.x / c.p.z + cam.cx, cam.fy * c.p.y / c.p.z + cam.cy))
        .collect();
    let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[1].1 - s[0].1) * (s[2].0 - s[0].0);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w);
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0);
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h);
    if min_x >= max_x || min_y >= max_y {
        return;
    }
    let inv_z = [1.0 / tri[0].p.z, 1.0 / tri[1].p.z, 1.0 / tri[2].p.z];
    let edge = |a: (f64, f64), b: (f64, f64), px: f64, py: f64| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
    for y in min_y as u32..max_y as u32 {
        let py = y as f64 + 0.5;
        for x in min_x as u32..max_x as u32 {
            let px = x as f64 + 0.5;
            let w0 = edge(s[1], s[2], px, py) / area;
            let w1 = edge(s[2], s[0], px, py) / area;
            let w2 = edge(s[0], s[1], px, py) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let iz = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2];
            let z = 1.0 / iz;
            let k = (y * cam.width + x) as usize;
            if z >= t.zbuf[k] {
                continue;
            }
            t.zbuf[k] = z;
            t.mask[k] = label;
            t.depth[k] = z as f32;
            let (eta, omega) = if nearest_uv {
                let m = if w0 >= w1 && w0 >= w2 {
                    0
                } else if w1 >= w2 {
                    1
                } else {
                    2
                };
                (tri[m].eta, tri[m].omega)
            } else {
                let b = [w0 * inv_z[0] * z, w1 * inv_z[1] * z, w2 * inv_z[2] * z];
                (
                    b[0] * tri[0].eta + b[1] * tri[1].eta + b[2] * tri[2].eta,
                    b[0] * tri[0].omega + b[1] * tri[1].omega + b[2] * tri[2].omega,
                )
            };
            t.u[k] = (((omega + PI) / (2.0 * PI)).clamp(0.0, 1.0)) as f32;
            t.v[k] = (((eta + FRAC_PI_2) / PI).clamp(0.0, 1.0)) as f32;
        }
    }
}

/// Z-buffered rasterization of labelled meshes.
pub fn rasterize(meshes: &[&LabeledMesh], camera: &Camera) -> Frame {
    let n = (camera.width * camera.height) as usize;
    let mut mask = vec![0u16; n];
    let mut depth = vec![f32::INFINITY; n];
    let mut zbuf = vec![f64::INFINITY; n];
    let mut u = vec![0f32; n];
    let mut v = vec![0f32; n];
    let mut target = Target {
        camera,
        mask: &mut mask,
        depth: &mut depth,
        zbuf: &mut zbuf,
        u: &mut u,
        v: &mut v,
    };
    for lm in meshes {
        let m = &lm.mesh;
        for f in &m.faces {
            let [a, b, c] = f.map(|i| i as usize);
            let (pa, pb, pc) = (m.vertices[a], m.vertices[b], m.vertices[c]);
            if pa.z <= Z_NEAR && pb.z <= Z_NEAR && pc.z <= Z_NEAR {
                continue;
            }
            // back faces point away from the camera at the origin
            if (pb - pa).cross(&(pc - pa)).dot(&pa) >= 0.0 {
                continue;
            }
            let attr = |i: usize| m.angles.as_ref().map_or([0.0, 0.0], |an| an[i]);
            let mk = |p: Vector3<f64>, i: usize| ClipVertex {
                p,
                eta: attr(i)[0],
                omega: attr(i)[1],
            };
            let mut tri = [mk(pa, a), mk(pb, b), mk(pc, c)];
            let nearest = prepare_uv(&mut tri);
            let poly = clip_near(tri);
            for k in 1..poly.len().saturating_sub(1) {
                raster_triangle(&mut target, &[poly[0], poly[k], poly[k + 1]], lm.label, nearest);
            }
        }
    }
    let (width, height) = (camera.width, camera.height);
    Frame {
        iuv: IuvMap {
            width,
            height,
            i: mask.clone(),
            u,
            v,
        },
        mask: MaskMap { width, height, data: mask },
        depth: DepthMap { width, height, data: depth },
    }
}

/// Renders posed entities; labels follow [`scene_meshes`].
pub fn render_entities(entities: &[&PosedEntity], camera: &Camera, tessellation: usize) -> Result<Frame> {
    camera.validate()?;
    let meshes = scene_meshes(entities, tessellation)?;
    Ok(rasterize(&meshes.iter().collect::<Vec<_>>(), camera))
}

pub fn rasterize_parts(entities: &[&PosedEntity], camera: &Camera, tessellation: usize) -> Result<(MaskMap, DepthMap)> {
    let f = render_entities(entities, camera, tessellation)?;
    Ok((f.mask, f.depth))
}

pub fn rasterize_iuv(entities: &[&PosedEntity], camera: &Camera, tessellation: usize) -> Result<IuvMap> {
    Ok(render_entities(entities, camera, tessellation)?.iuv)
}

/// Template-frame tessellations of every part, posed by each part's
/// similarity instead of re-tessellating.
#[derive(Debug, Clone)]
pub struct TemplateMeshes {
    meshes: Vec<TriMesh>,
}

impl TemplateMeshes {
    pub fn new(template: &crate::kinematics::ArticulatedTemplate, resolution: usize) -> Result<Self> {
        Ok(Self {
            meshes: template
                .parts
                .iter()
                .map(|p| tessellate(&p.sq, resolution))
                .collect::<Result<_>>()?,
        })
    }

    pub fn pose(&self, entity: &PosedEntity, first_label: u16) -> Vec<LabeledMesh> {
        self.meshes
            .iter()
            .zip(&entity.parts)
            .enumerate()
            .map(|(k, (m, p))| LabeledMesh {
                label: first_label + k as u16,
                mesh: TriMesh {
                    vertices: m.vertices.iter().map(|v| p.transform.apply(v)).collect(),
                    faces: m.faces.clone(),
                    angles: m.angles.clone(),
                    parts: None,
                },
            })
            .collect()
    }
}

/// Merges separately rendered frames pixel by pixel, keeping the nearest
/// surface. Earlier frames win exact depth ties.
pub fn composite(frames: &[&Frame]) -> Frame {
    let mut out = frames[0].clone();
    for f in &frames[1..] {
        for k in 0..out.depth.data.len() {
            if f.depth.data[k] < out.depth.data[k] {
                out.depth.data[k] = f.depth.data[k];
                out.mask.data[k] = f.mask.data[k];
                out.iuv.i[k] = f.iuv.i[k];
                out.iuv.u[k] = f.iuv.u[k];
                out.iuv.v[k] = f.iuv.v[k];
            }
        }
    }
    out
}

/// Fixed label palette for overlays.
pub fn label_color(label: u16) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    // golden-angle hue walk
    let h = (label as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
}

/// Blends the part colours over a background at 50% opacity. The background is
/// resized to the mask size; without one a black canvas is used.
pub fn overlay(mask: &MaskMap, background: Option<&RgbImage>) -> RgbImage {
    let bg = background.map(|b| {
        if b.width() == mask.width && b.height() == mask.height {
            b.clone()
        } else {
            image::imageops::resize(b, mask.width, mask.height, image::imageops::FilterType::Triangle)
        }
    });
    RgbImage::from_fn(mask.width, mask.height, |x, y| {
        let base = bg.as_ref().map_or(Rgb([0, 0, 0]), |b| *b.get_pixel(x, y));
        let label = mask.get(x, y);
        if label == 0 {
            return base;
        }
        let c = label_color(label);
        Rgb([0, 1, 2].map(|k| ((base.0[k] as u16 + c[k] as u16 + 1) / 2) as u8))
    })
}

pub fn overlay_png(mask: &MaskMap, background: Option<&RgbImage>) -> Result<Vec<u8>> {
    encode_png(&image::DynamicImage::ImageRgb8(overlay(mask, background)))
}
