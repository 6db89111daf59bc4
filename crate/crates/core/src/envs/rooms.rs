use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Env, ExpertTrajectory};
use crate::bitmap::{self, BinaryImage, WorldBox};
use crate::geometry::polygon::convex_intersection_area;
use crate::geometry::Point;
use crate::nn::INPUT_SIDE;
use crate::seeding::{self, Rng};

/// Side of the square room in world units.
pub const ROOM_SIDE: f64 = 224.0;
const MOVE_STEP: f64 = 10.0;
const ROTATION_STEPS: i32 = 24;
const MIN_ITEMS: usize = 5;
const MAX_ITEMS: usize = 15;
const RETRIES: usize = 200;

/// Per-item actions: four cardinal moves of 10 units, then rotations by
/// +15 and -15 degrees about the item centre.
pub const ROOM_MOVES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FurnitureKind {
    Bed,
    Desk,
    Chair,
    Table,
    Wardrobe,
    Sofa,
    Nightstand,
    Shelf,
}

impl FurnitureKind {
    const ALL: [FurnitureKind; 8] = [
        FurnitureKind::Bed,
        FurnitureKind::Desk,
        FurnitureKind::Chair,
        FurnitureKind::Table,
        FurnitureKind::Wardrobe,
        FurnitureKind::Sofa,
        FurnitureKind::Nightstand,
        FurnitureKind::Shelf,
    ];

    /// Width and depth ranges in world units.
    fn size_range(&self) -> ((f64, f64), (f64, f64)) {
        match self {
            FurnitureKind::Bed => ((44.0, 56.0), (60.0, 72.0)),
            FurnitureKind::Desk => ((36.0, 48.0), (20.0, 26.0)),
            FurnitureKind::Chair => ((16.0, 20.0), (16.0, 20.0)),
            FurnitureKind::Table => ((28.0, 40.0), (28.0, 40.0)),
            FurnitureKind::Wardrobe => ((36.0, 48.0), (18.0, 24.0)),
            FurnitureKind::Sofa => ((48.0, 60.0), (22.0, 28.0)),
            FurnitureKind::Nightstand => ((14.0, 18.0), (14.0, 18.0)),
            FurnitureKind::Shelf => ((28.0, 36.0), (10.0, 14.0)),
        }
    }
}

/// A rectangular footprint posed by its centre and a multiple of 15 degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Furniture {
    pub kind: FurnitureKind,
    pub width: f64,
    pub depth: f64,
    pub x: f64,
    pub y: f64,
    pub rot: i32,
}

impl Furniture {
    pub fn polygon(&self) -> Vec<Point> {
        let (hw, hd) = (self.width / 2.0, self.depth / 2.0);
        let angle = f64::from(self.rot) * PI / 12.0;
        [(-hw, -hd), (hw, -hd), (hw, hd), (-hw, hd)]
            .iter()
            .map(|&(dx, dy)| {
                let p = Point::new(dx, dy).rotated(angle);
                Point::new(self.x + p.x, self.y + p.y)
            })
            .collect()
    }

    fn inside_room(&self) -> bool {
        self.polygon().iter().all(|p| (0.0..=ROOM_SIDE).contains(&p.x) && (0.0..=ROOM_SIDE).contains(&p.y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    pub name: String,
    pub items: Vec<Furniture>,
}

impl RoomScene {
    pub fn world() -> WorldBox {
        WorldBox::new(0.0, 0.0, ROOM_SIDE, ROOM_SIDE)
    }

    pub fn render(&self) -> BinaryImage {
        let polys: Vec<Vec<Point>> = self.items.iter().map(Furniture::polygon).collect();
        bitmap::rasterize(&polys, INPUT_SIDE, INPUT_SIDE, Self::world()).expect("room world box is valid")
    }

    pub fn all_inside(&self) -> bool {
        self.items.iter().all(Furniture::inside_room)
    }

    /// Applies a per-item action; `None` if it pushes the item out of the room.
    pub fn apply(&self, action: usize) -> Option<RoomScene> {
        let (item, mv) = (action / ROOM_MOVES, action % ROOM_MOVES);
        let mut next = self.clone();
        let f = next.items.get_mut(item)?;
        match mv {
            0 => f.x += MOVE_STEP,
            1 => f.x -= MOVE_STEP,
            2 => f.y += MOVE_STEP,
            3 => f.y -= MOVE_STEP,
            4 => f.rot = (f.rot + 1).rem_euclid(ROTATION_STEPS),
            _ => f.rot = (f.rot - 1).rem_euclid(ROTATION_STEPS),
        }
        f.inside_room().then_some(next)
    }
}

/// Room layouts under the per-item move set.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoomEnv;

impl Env for RoomEnv {
    type State = RoomScene;

    fn num_actions(&self, state: &RoomScene) -> usize {
        state.items.len() * ROOM_MOVES
    }

    fn step(&self, state: &RoomScene, action: usize) -> Option<RoomScene> {
        state.apply(action)
    }

    fn observe(&self, state: &RoomScene) -> BinaryImage {
        state.render()
    }
}

/// A reversed perturbation: scenes and frames from messy to tidy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomDemo {
    pub scenes: Vec<RoomScene>,
    pub trajectory: ExpertTrajectory,
}

fn tidy_scene(name: String, rng: &mut Rng) -> RoomScene {
    loop {
        let target = rng.random_range(MIN_ITEMS..=MAX_ITEMS);
        let mut items: Vec<Furniture> = Vec::new();
        let mut attempts = 0;
        while items.len() < target && attempts < RETRIES * target {
            attempts += 1;
            let kind = FurnitureKind::ALL[rng.random_range(0..FurnitureKind::ALL.len())];
            let ((w0, w1), (d0, d1)) = kind.size_range();
            let f = Furniture {
                kind,
                width: rng.random_range(w0..w1).round(),
                depth: rng.random_range(d0..d1).round(),
                x: rng.random_range(0.0..ROOM_SIDE).round(),
                y: rng.random_range(0.0..ROOM_SIDE).round(),
                rot: if rng.random_bool(0.5) { 0 } else { 6 },
            };
            let poly = f.polygon();
            if f.inside_room() && items.iter().all(|o| convex_intersection_area(&poly, &o.polygon()) <= 0.0) {
                items.push(f);
            }
        }
        if items.len() >= MIN_ITEMS {
            return RoomScene { name, items };
        }
    }
}

/// Perturbs `scene` for `steps` accepted moves and reverses the sequence.
/// A move is rejected when it leaves the room or does not change the image.
pub fn perturb_room(scene: &RoomScene, steps: usize, seed: u64) -> RoomDemo {
    let mut rng = seeding::rng(seed);
    let mut scenes = vec![scene.clone()];
    let mut frames = vec![scene.render()];
    let actions = scene.items.len() * ROOM_MOVES;
    for _ in 0..steps {
        let current = scenes.last().expect("nonempty");
        let image = frames.last().expect("nonempty");
        let accepted = (0..RETRIES).find_map(|_| {
            let next = current.apply(rng.random_range(0..actions))?;
            let img = next.render();
            (img != *image).then_some((next, img))
        });
        let Some((next, img)) = accepted else { break };
        scenes.push(next);
        frames.push(img);
    }
    scenes.reverse();
    frames.reverse();
    RoomDemo { trajectory: ExpertTrajectory { name: scene.name.clone(), frames }, scenes }
}

/// 30 training and 10 test room demonstrations. Perturbation lengths are
/// drawn from 10..=18 steps.
pub fn generate_rooms(seed: u64) -> (Vec<RoomDemo>, Vec<RoomDemo>) {
    let mut rng = seeding::rng(seeding::derive(seed, 0x700));
    let mut demos = Vec::with_capacity(40);
    for i in 0..40 {
        let scene = tidy_scene(format!("room-{i}"), &mut rng);
        let steps = rng.random_range(10..=18);
        demos.push(perturb_room(&scene, steps, seeding::derive(seed, 1000 + i as u64)));
    }
    let test = demos.split_off(30);
    (demos, test)
}
