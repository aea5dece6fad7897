//! Randomized cluttered-shelf scenes: a 5x7 grid of cells, a red target in one
//! of the middle back cells, and 25-28 obstacles drawn from four classes.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::One;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Pose2D, Vec2};
use crate::sim::collide::{penetration, Obb};
use crate::sim::Body;
use crate::Error;

pub const SCHEMATIC_FORMAT_VERSION: u32 = 1;

const STREAM_SCENE: u64 = 1 << 32;
const STREAM_JITTER: u64 = 2 << 32;
const MAX_SCENE_ATTEMPTS: u64 = 1000;
const MAX_JITTER_ATTEMPTS: usize = 100;
const PLACEMENT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShelfSpec {
    pub width: f64,
    pub depth: f64,
    pub columns: usize,
    pub rows: usize,
    pub wall_thickness: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub min_occupancy: f64,
    pub max_occupancy: f64,
}

impl Default for ShelfSpec {
    fn default() -> Self {
        Self {
            width: 0.38,
            depth: 0.53,
            columns: 5,
            rows: 7,
            wall_thickness: 0.02,
            min_obstacles: 25,
            max_obstacles: 28,
            min_occupancy: 0.42,
            max_occupancy: 0.52,
        }
    }
}

impl ShelfSpec {
    pub fn cell_count(&self) -> usize {
        self.columns * self.rows
    }

    pub fn area(&self) -> f64 {
        self.width * self.depth
    }

    pub fn pitch(&self) -> Vec2 {
        Vec2::new(
            self.width / self.columns as f64,
            self.depth / self.rows as f64,
        )
    }

    /// Center of `cell`. Row 0 is the back row (against the back wall); the
    /// opening is at `y = 0` and the back wall at `y = depth`.
    pub fn cell_center(&self, cell: usize) -> Vec2 {
        let (row, col) = (cell / self.columns, cell % self.columns);
        let p = self.pitch();
        Vec2::new(
            (col as f64 + 0.5) * p.x,
            self.depth - (row as f64 + 0.5) * p.y,
        )
    }

    /// The cells a target may occupy: the middle three of the back row.
    pub fn target_cells(&self) -> Vec<usize> {
        (1..self.columns.saturating_sub(1)).collect()
    }

    fn validate(&self) -> Result<(), Error> {
        let ok = self.width > 0.0
            && self.depth > 0.0
            && self.columns >= 3
            && self.rows >= 1
            && self.wall_thickness > 0.0
            && self.min_obstacles <= self.max_obstacles
            && self.max_obstacles < self.cell_count()
            && self.min_occupancy <= self.max_occupancy;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("shelf spec".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Blue,
    Green,
    Black,
    Yellow,
    TargetBox,
    TargetCanA,
    TargetCanB,
}

impl ObjectClass {
    pub const OBSTACLES: [ObjectClass; 4] = [
        ObjectClass::Blue,
        ObjectClass::Green,
        ObjectClass::Black,
        ObjectClass::Yellow,
    ];
    pub const TARGETS: [ObjectClass; 3] = [
        ObjectClass::TargetBox,
        ObjectClass::TargetCanA,
        ObjectClass::TargetCanB,
    ];

    pub fn is_target(self) -> bool {
        matches!(
            self,
            ObjectClass::TargetBox | ObjectClass::TargetCanA | ObjectClass::TargetCanB
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Blue => "blue",
            ObjectClass::Green => "green",
            ObjectClass::Black => "black",
            ObjectClass::Yellow => "yellow",
            ObjectClass::TargetBox => "target_box",
            ObjectClass::TargetCanA => "target_can_a",
            ObjectClass::TargetCanB => "target_can_b",
        }
    }

    /// Rectangle footprint (width along x, depth along y) in meters.
    pub fn footprint(self) -> Vec2 {
        match self {
            ObjectClass::Blue => Vec2::new(0.0585, 0.0585),
            ObjectClass::Green => Vec2::new(0.047, 0.056),
            ObjectClass::Black => Vec2::new(0.055, 0.0745),
            // Squarish so it fits a 7.6 x 7.57 cm cell; the area is what matters.
            ObjectClass::Yellow => Vec2::new(0.0758, 0.075237),
            ObjectClass::TargetBox => Vec2::new(0.062, 0.038),
            ObjectClass::TargetCanA => Vec2::new(0.057, 0.057),
            ObjectClass::TargetCanB => Vec2::new(0.066, 0.066),
        }
    }

    /// Footprint area used for occupancy, m^2. Obstacles use the measured areas.
    pub fn area(self) -> f64 {
        match self {
            ObjectClass::Blue => 34.26e-4,
            ObjectClass::Green => 26.32e-4,
            ObjectClass::Black => 40.97e-4,
            ObjectClass::Yellow => 57.03e-4,
            t => {
                let f = t.footprint();
                f.x * f.y
            }
        }
    }

    pub fn color(self) -> [u8; 3] {
        match self {
            ObjectClass::Blue => [40, 80, 200],
            ObjectClass::Green => [40, 170, 60],
            ObjectClass::Black => [25, 25, 25],
            ObjectClass::Yellow => [230, 200, 40],
            _ => [210, 25, 25],
        }
    }

    pub fn mass(self) -> f64 {
        match self {
            ObjectClass::Blue => 0.15,
            ObjectClass::Green => 0.12,
            ObjectClass::Black => 0.25,
            ObjectClass::Yellow => 0.30,
            _ => 0.20,
        }
    }

    pub fn friction(self) -> f64 {
        0.4
    }

    fn obstacle_code(self) -> Option<char> {
        match self {
            ObjectClass::Blue => Some('b'),
            ObjectClass::Green => Some('g'),
            ObjectClass::Black => Some('k'),
            ObjectClass::Yellow => Some('y'),
            _ => None,
        }
    }

    fn from_obstacle_code(c: char) -> Option<Self> {
        match c {
            'b' => Some(ObjectClass::Blue),
            'g' => Some(ObjectClass::Green),
            'k' => Some(ObjectClass::Black),
            'y' => Some(ObjectClass::Yellow),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        ObjectClass::OBSTACLES
            .iter()
            .chain(ObjectClass::TARGETS.iter())
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown object class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Obstacle(ObjectClass),
    Target,
}

impl Cell {
    pub fn code(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Target => 'T',
            Cell::Obstacle(c) => c.obstacle_code().unwrap_or('?'),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SceneSchematic {
    pub seed: u64,
    pub columns: usize,
    pub cells: Vec<Cell>,
    pub target_class: ObjectClass,
    pub target_cell: usize,
}

impl SceneSchematic {
    pub fn obstacle_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Cell::Obstacle(_)))
            .count()
    }

    pub fn grid_string(&self) -> String {
        self.cells.iter().map(|c| c.code()).collect()
    }

    /// Checks every structural invariant against `spec`.
    pub fn validate(&self, spec: &ShelfSpec) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidSchematic(m.to_string()));
        if self.cells.len() != spec.cell_count() || self.columns != spec.columns {
            return bad("grid shape");
        }
        if !self.target_class.is_target() {
            return bad("target class is not a red target");
        }
        let targets: Vec<usize> = (0..self.cells.len())
            .filter(|&i| self.cells[i] == Cell::Target)
            .collect();
        if targets != [self.target_cell] {
            return bad("exactly one target cell required");
        }
        if !spec.target_cells().contains(&self.target_cell) {
            return bad("target must sit in a middle back cell");
        }
        let n = self.obstacle_count();
        if n < spec.min_obstacles || n > spec.max_obstacles {
            return bad("obstacle count out of range");
        }
        let occ = occupancy(self, spec);
        if occ < spec.min_occupancy || occ > spec.max_occupancy {
            return bad("occupancy out of band");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let file = SchematicFile {
            format_version: SCHEMATIC_FORMAT_VERSION,
            seed: self.seed,
            target_class: self.target_class,
            target_cell: self.target_cell as u32,
            columns: self.columns as u32,
            grid: self.grid_string(),
        };
        toml::to_string(&file).expect("schematic serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let file: SchematicFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("schematic: {e}")))?;
        if file.format_version != SCHEMATIC_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schematic format_version {}",
                file.format_version
            )));
        }
        if file.columns == 0 {
            return Err(Error::Parse("columns must be positive".into()));
        }
        let cells = file
            .grid
            .chars()
            .map(|c| match c {
                '.' => Ok(Cell::Empty),
                'T' => Ok(Cell::Target),
                other => ObjectClass::from_obstacle_code(other)
                    .map(Cell::Obstacle)
                    .ok_or_else(|| Error::Parse(format!("bad cell code {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if cells.len() % file.columns as usize != 0 {
            return Err(Error::Parse("grid is not a whole number of rows".into()));
        }
        Ok(Self {
            seed: file.seed,
            columns: file.columns as usize,
            cells,
            target_class: file.target_class,
            target_cell: file.target_cell as usize,
        })
    }
}

impl fmt::Display for SceneSchematic {
    /// Top-down view, back wall first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.columns) {
            let line: String = row.iter().map(|c| c.code()).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchematicFile {
    format_version: u32,
    seed: u64,
    target_class: ObjectClass,
    target_cell: u32,
    columns: u32,
    /// Cell codes, row-major, back row first.
    grid: String,
}

/// Fraction of the shelf interior covered by placed footprints, target included.
pub fn occupancy(schematic: &SceneSchematic, spec: &ShelfSpec) -> f64 {
    let area: f64 = schematic
        .cells
        .iter()
        .map(|c| match c {
            Cell::Empty => 0.0,
            Cell::Target => schematic.target_class.area(),
            Cell::Obstacle(o) => o.area(),
        })
        .sum();
    area / spec.area()
}

/// Samples a scene. Deterministic in `(seed, spec)`; attempts whose occupancy
/// leaves the band are redrawn from a fresh substream.
pub fn generate(seed: u64, spec: &ShelfSpec) -> Result<SceneSchematic, Error> {
    spec.validate()?;
    let target_cells = spec.target_cells();
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_SCENE + attempt);

        let target_class = ObjectClass::TARGETS[rng.random_range(0..ObjectClass::TARGETS.len())];
        let target_cell = target_cells[rng.random_range(0..target_cells.len())];
        let n = rng.random_range(spec.min_obstacles..=spec.max_obstacles);

        let free: Vec<usize> = (0..spec.cell_count())
            .filter(|&c| c != target_cell)
            .collect();
        let mut chosen: Vec<usize> = index::sample(&mut rng, free.len(), n)
            .into_iter()
            .map(|i| free[i])
            .collect();
        chosen.sort_unstable();

        let mut cells = vec![Cell::Empty; spec.cell_count()];
        cells[target_cell] = Cell::Target;
        for c in chosen {
            cells[c] = Cell::Obstacle(ObjectClass::OBSTACLES[rng.random_range(0..4)]);
        }
        let schematic = SceneSchematic {
            seed,
            columns: spec.columns,
            cells,
            target_class,
            target_cell,
        };
        let occ = occupancy(&schematic, spec);
        if (spec.min_occupancy..=spec.max_occupancy).contains(&occ) {
            return Ok(schematic);
        }
    }
    Err(Error::RejectionLimitExceeded(MAX_SCENE_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantiateOptions {
    /// Half-width of the uniform orientation jitter, radians.
    pub max_jitter: f64,
}

impl Default for InstantiateOptions {
    fn default() -> Self {
        Self {
            max_jitter: 5f64.to_radians(),
        }
    }
}

/// Shelf walls (left, right, back) as static rectangles.
pub fn walls(spec: &ShelfSpec) -> Vec<Obb> {
    let t = spec.wall_thickness;
    let side_half = Vec2::new(t / 2.0, (spec.depth + t) / 2.0);
    let side_y = (spec.depth + t) / 2.0;
    vec![
        Obb::new(Vec2::new(-t / 2.0, side_y), side_half, 0.0),
        Obb::new(Vec2::new(spec.width + t / 2.0, side_y), side_half, 0.0),
        Obb::new(
            Vec2::new(spec.width / 2.0, spec.depth + t / 2.0),
            Vec2::new(spec.width / 2.0 + t, t / 2.0),
            0.0,
        ),
    ]
}

/// Places one rectangle per occupied cell. Orientation jitter is redrawn when a
/// body would start overlapping a neighbor or a wall by more than 1 mm; the
/// jitter range shrinks linearly over the retries and the last retry is
/// axis-aligned. If a cell still cannot be placed, the whole layout is redrawn
/// with a smaller jitter range, ending with an axis-aligned layout.
pub fn instantiate(
    schematic: &SceneSchematic,
    spec: &ShelfSpec,
    opts: &InstantiateOptions,
) -> Result<Vec<Body>, Error> {
    schematic.validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schematic.seed);
    rng.set_stream(STREAM_JITTER);
    let walls = walls(spec);
    let mut last_err = Error::PlacementOverlap(0);
    for pass in 0..LAYOUT_PASSES {
        let max_jitter = opts.max_jitter * (1.0 - pass as f64 / (LAYOUT_PASSES - 1) as f64);
        match place_bodies(schematic, spec, &walls, max_jitter, &mut rng) {
            Ok(bodies) => return Ok(bodies),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

const LAYOUT_PASSES: usize = 4;

fn place_bodies(
    schematic: &SceneSchematic,
    spec: &ShelfSpec,
    walls: &[Obb],
    max_jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Body>, Error> {
    let mut bodies: Vec<Body> = Vec::new();
    for (cell_idx, cell) in schematic.cells.iter().enumerate() {
        let class = match cell {
            Cell::Empty => continue,
            Cell::Target => schematic.target_class,
            Cell::Obstacle(c) => *c,
        };
        let center = spec.cell_center(cell_idx);
        let half = class.footprint() * 0.5;
        let mut placed = None;
        for attempt in 0..MAX_JITTER_ATTEMPTS {
            let scale = 1.0 - attempt as f64 / (MAX_JITTER_ATTEMPTS - 1) as f64;
            let range = max_jitter * scale;
            let theta = if range > 0.0 {
                rng.random_range(-range..=range)
            } else {
                0.0
            };
            let obb = Obb::new(center, half, theta);
            let clear = bodies
                .iter()
                .map(|b| b.obb())
                .chain(walls.iter().copied())
                .all(|o| penetration(&obb, &o) <= PLACEMENT_TOLERANCE);
            if clear {
                placed = Some(theta);
                break;
            }
        }
        let theta = placed.ok_or(Error::PlacementOverlap(cell_idx))?;
        bodies.push(Body::new(
            bodies.len(),
            Pose2D::new(center.x, center.y, theta),
            class,
        ));
    }
    Ok(bodies)
}

/// Parameters of the discrete configuration count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigurationSpace {
    pub target_classes: u64,
    pub target_cells: u64,
    pub free_cells: u64,
    pub obstacle_classes: u64,
    pub min_obstacles: u64,
    pub max_obstacles: u64,
}

impl ConfigurationSpace {
    pub fn from_spec(spec: &ShelfSpec) -> Self {
        Self {
            target_classes: ObjectClass::TARGETS.len() as u64,
            target_cells: spec.target_cells().len() as u64,
            free_cells: spec.cell_count() as u64 - 1,
            obstacle_classes: ObjectClass::OBSTACLES.len() as u64,
            min_obstacles: spec.min_obstacles as u64,
            max_obstacles: spec.max_obstacles as u64,
        }
    }

    /// `targets * target_cells * sum_N C(free, N) * classes^N`, exact.
    pub fn count(&self) -> BigUint {
        let mut sum = BigUint::from(0u32);
        for n in self.min_obstacles..=self.max_obstacles.min(self.free_cells) {
            sum += binomial(self.free_cells, n) * BigUint::from(self.obstacle_classes).pow(n as u32);
        }
        sum * BigUint::from(self.target_classes) * BigUint::from(self.target_cells)
    }
}

fn binomial(n: u64, k: u64) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

pub fn count_configurations(spec: &ShelfSpec) -> BigUint {
    ConfigurationSpace::from_spec(spec).count()
}
