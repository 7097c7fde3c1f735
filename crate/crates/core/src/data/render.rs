use crate::geometry::{add, dot, scale, sub, CameraModel, Vec3};
use crate::image::Image;

use super::scene::{Primitive, SceneSpec, Shape};

/// Ambient term added to every lit surface.
pub const AMBIENT: f32 = 0.1;

const MIN_T: f64 = 1e-9;

/// Nearest positive hit distance and outward normal.
fn intersect(shape: &Shape, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { center, radius } => {
            let oc = sub(o, center);
            let b = dot(oc, d);
            let c = dot(oc, oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > MIN_T { -b - sq } else { -b + sq };
            (t > MIN_T).then(|| {
                let p = add(o, scale(d, t));
                (t, scale(sub(p, center), 1.0 / radius))
            })
        }
        Shape::Plate { z, half_size } => {
            if d[2].abs() < 1e-15 {
                return None;
            }
            let t = (z - o[2]) / d[2];
            let p = add(o, scale(d, t));
            (t > MIN_T && p[0].abs() <= half_size && p[1].abs() <= half_size)
                .then_some((t, [0.0, 0.0, 1.0]))
        }
        Shape::Cuboid { min, max } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut axis0, mut axis1) = (0, 0);
            for i in 0..3 {
                if d[i].abs() < 1e-15 {
                    if o[i] < min[i] || o[i] > max[i] {
                        return None;
                    }
                    continue;
                }
                let (a, b) = ((min[i] - o[i]) / d[i], (max[i] - o[i]) / d[i]);
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                if near > t0 {
                    t0 = near;
                    axis0 = i;
                }
                if far < t1 {
                    t1 = far;
                    axis1 = i;
                }
            }
            if t0 > t1 || t1 <= MIN_T {
                return None;
            }
            let (t, axis) = if t0 > MIN_T { (t0, axis0) } else { (t1, axis1) };
            let mut n = [0.0; 3];
            n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
            if t0 <= MIN_T {
                n[axis] = -n[axis];
            }
            Some((t, n))
        }
    }
}

fn shade(scene: &SceneSpec, prim: &Primitive, p: Vec3, mut n: Vec3, d: Vec3) -> [f32; 3] {
    if dot(n, d) > 0.0 {
        n = scale(n, -1.0);
    }
    let lambert = dot(n, scene.light_dir).max(0.0) as f32;
    prim.albedo
        .at(p)
        .map(|a| (a * lambert + AMBIENT).clamp(0.0, 1.0))
}

/// Color seen along one world ray.
pub fn trace(scene: &SceneSpec, o: Vec3, d: Vec3) -> [f32; 3] {
    let mut best: Option<(f64, Vec3, &Primitive)> = None;
    for prim in &scene.primitives {
        if let Some((t, n)) = intersect(&prim.shape, o, d) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, n, prim));
            }
        }
    }
    match best {
        Some((t, n, prim)) => shade(scene, prim, add(o, scale(d, t)), n, d),
        None => scene.background,
    }
}

/// Ray-casts an `height × width` image through pixel centers of `cam`.
pub fn render_oracle_view(
    scene: &SceneSpec,
    cam: &CameraModel,
    height: usize,
    width: usize,
) -> Image {
    let mut img = Image::filled(height, width, scene.background);
    let o = cam.pose.center();
    for r in 0..height {
        for c in 0..width {
            let d = cam
                .pose
                .ray_direction(&cam.intrinsics, c as f64 + 0.5, r as f64 + 0.5);
            img.set_pixel(r, c, trace(scene, o, d));
        }
    }
    img
}
