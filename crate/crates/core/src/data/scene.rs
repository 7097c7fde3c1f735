use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{norm, normalize, Vec3};

/// Height of the ground plate.
pub const GROUND_HEIGHT: f64 = -0.5;
/// Half extent of the square ground plate.
pub const GROUND_HALF_SIZE: f64 = 0.6;
/// Every primitive's bounding sphere fits inside this radius.
pub const SCENE_RADIUS: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Horizontal square at height `z`, normal +z.
    Plate {
        z: f64,
        half_size: f64,
    },
    Cuboid {
        min: Vec3,
        max: Vec3,
    },
    Sphere {
        center: Vec3,
        radius: f64,
    },
}

impl Shape {
    /// Distance from the origin to the farthest point of the primitive.
    pub fn extent(&self) -> f64 {
        match self {
            Shape::Plate { z, half_size } => (2.0 * half_size * half_size + z * z).sqrt(),
            Shape::Cuboid { min, max } => {
                let far = [0, 1, 2].map(|i| min[i].abs().max(max[i].abs()));
                norm(far)
            }
            Shape::Sphere { center, radius } => norm(*center) + radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Albedo {
    Flat([f32; 3]),
    /// 3D checkerboard with cells of side `cell`.
    Checker {
        a: [f32; 3],
        b: [f32; 3],
        cell: f64,
    },
}

impl Albedo {
    pub fn at(&self, p: Vec3) -> [f32; 3] {
        match self {
            Albedo::Flat(c) => *c,
            Albedo::Checker { a, b, cell } => {
                let s: i64 = p.iter().map(|v| (v / cell).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
}

/// A procedural scene, fully determined by its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    /// Unit vector pointing toward the directional light.
    pub light_dir: Vec3,
    pub background: [f32; 3],
}

impl SceneSpec {
    pub fn empty(background: [f32; 3]) -> Self {
        Self {
            seed: 0,
            primitives: Vec::new(),
            light_dir: [0.0, 0.0, 1.0],
            background,
        }
    }
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
    ]
}

fn albedo(rng: &mut impl Rng) -> Albedo {
    if rng.random_bool(0.4) {
        Albedo::Checker {
            a: color(rng),
            b: color(rng),
            cell: rng.random_range(0.08..0.25),
        }
    } else {
        Albedo::Flat(color(rng))
    }
}

/// A checkered ground plate plus 2 to 7 spheres and cuboids inside the unit ball.
pub fn generate_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = vec![Primitive {
        shape: Shape::Plate {
            z: GROUND_HEIGHT,
            half_size: GROUND_HALF_SIZE,
        },
        albedo: Albedo::Checker {
            a: color(&mut rng),
            b: color(&mut rng),
            cell: rng.random_range(0.1..0.3),
        },
    }];
    let objects = rng.random_range(2..=7);
    while primitives.len() < objects + 1 {
        let center = [
            rng.random_range(-0.45..0.45),
            rng.random_range(-0.45..0.45),
            rng.random_range(-0.35..0.3),
        ];
        let shape = if rng.random_bool(0.5) {
            let max_r = (SCENE_RADIUS - norm(center)).min(0.3);
            Shape::Sphere {
                center,
                radius: rng.random_range(0.08..max_r.max(0.081)),
            }
        } else {
            let half = [0, 1, 2].map(|_| rng.random_range(0.06..0.22));
            Shape::Cuboid {
                min: [0, 1, 2].map(|i| center[i] - half[i]),
                max: [0, 1, 2].map(|i| center[i] + half[i]),
            }
        };
        if shape.extent() > SCENE_RADIUS {
            continue;
        }
        primitives.push(Primitive {
            shape,
            albedo: albedo(&mut rng),
        });
    }
    let elevation: f64 = rng.random_range(0.5..1.3);
    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let light_dir = normalize([
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ]);
    let g: f32 = rng.random_range(0.05..0.35);
    let background = [
        g,
        g + rng.random_range(0.0..0.1),
        g + rng.random_range(0.0..0.2),
    ];
    SceneSpec {
        seed,
        primitives,
        light_dir,
        background,
    }
}
