//! Procedural houses and object-navigation episodes.
//!
//! A house is a connected blob of lattice cells (one navigation node per
//! cell), partitioned into contiguous regions. Regions are separated by
//! walls with a single door per adjacent region pair, so every edge has the
//! same metric length. Objects sit near an anchor node and are visible from
//! the nodes of their region within a visibility radius; each such node
//! carries a polar label obtained by projecting the object's box through a
//! virtual camera, averaging the box corners, and mapping the center back to
//! angles.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bbox_center, pixel_to_direction, wrap_angle, Camera, PixelPoint, PolarExtent, PolarPoint,
};
use crate::graph::{is_connected, Adjacency, DistanceTable};
use crate::vocab::{Color, ObjectClass, RegionKind, Relation, Shape, Size, TokenKind, Vocab};

const MAX_ATTEMPTS: usize = 16;
const APPEARANCE_SEED: u64 = 0x5EED_0BAD_CAFE;
/// Eye height of the panoramic camera, meters.
const EYE_HEIGHT: f64 = 1.5;
const GEOMETRY_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub nodes: usize,
    pub regions: usize,
    pub objects: usize,
    pub feature_dim: usize,
    /// Lattice spacing, meters.
    pub spacing: f64,
    /// Standard deviation of the per-node appearance noise.
    pub noise: f64,
    /// Max distance from which an object is visible, meters.
    pub visibility: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            nodes: 40,
            regions: 6,
            objects: 8,
            feature_dim: 32,
            spacing: 2.0,
            noise: 0.2,
            visibility: 2.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Config("node count must be at least 2".into()));
        }
        if self.objects < 1 {
            return Err(Error::Config("object count must be at least 1".into()));
        }
        if self.regions < 1 || self.regions > self.nodes {
            return Err(Error::Config(format!(
                "region count {} must be in 1..={}",
                self.regions, self.nodes
            )));
        }
        if self.feature_dim < GEOMETRY_DIMS + 4 {
            return Err(Error::Config(format!(
                "feature_dim {} too small",
                self.feature_dim
            )));
        }
        if !(self.spacing > 0.0) || !(self.visibility > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("spacing/visibility/noise out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: usize,
    pub position: [f64; 2],
    pub region: usize,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub kind: RegionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub other: usize,
    pub relation: Relation,
}

/// A node from which the object is visible, with its polar extent there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeView {
    pub node: usize,
    pub extent: PolarExtent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: usize,
    pub class: ObjectClass,
    pub color: Color,
    pub size: Size,
    pub shape: Shape,
    pub region: usize,
    pub position: [f64; 3],
    pub relations: Vec<RelationSpec>,
    pub homes: Vec<HomeView>,
}

impl ObjectSpec {
    pub fn home_nodes(&self) -> Vec<usize> {
        self.homes.iter().map(|h| h.node).collect()
    }

    pub fn extent_at(&self, node: usize) -> Option<&PolarExtent> {
        self.homes.iter().find(|h| h.node == node).map(|h| &h.extent)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct WorldRepr {
    id: u64,
    nodes: Vec<NodeSpec>,
    edges: Vec<Edge>,
    objects: Vec<ObjectSpec>,
    regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "WorldRepr")]
pub struct World {
    pub id: u64,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
    pub objects: Vec<ObjectSpec>,
    pub regions: Vec<Region>,
    #[serde(skip)]
    adjacency: Adjacency,
}

impl From<WorldRepr> for World {
    fn from(r: WorldRepr) -> Self {
        World::from_parts(r.id, r.nodes, r.edges, r.objects, r.regions)
    }
}

impl World {
    pub fn from_parts(
        id: u64,
        nodes: Vec<NodeSpec>,
        edges: Vec<Edge>,
        objects: Vec<ObjectSpec>,
        regions: Vec<Region>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in &edges {
            adjacency[e.a].push((e.b, e.length));
            adjacency[e.b].push((e.a, e.length));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(n, _)| n);
        }
        Self {
            id,
            nodes,
            edges,
            objects,
            regions,
            adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Neighbors of `n` with edge lengths, sorted by node id.
    pub fn neighbors(&self, n: usize) -> &[(usize, f64)] {
        &self.adjacency[n]
    }

    pub fn degree(&self, n: usize) -> usize {
        self.adjacency[n].len()
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, w)| w)
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map(|n| n.feature.len()).unwrap_or(0)
    }

    pub fn distances(&self) -> DistanceTable {
        DistanceTable::new(&self.adjacency)
    }

    /// Regions sharing a door with `region`, ascending id.
    pub fn region_neighbors(&self, region: usize) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for e in &self.edges {
            let (ra, rb) = (self.nodes[e.a].region, self.nodes[e.b].region);
            if ra == region && rb != region {
                out.insert(rb);
            } else if rb == region && ra != region {
                out.insert(ra);
            }
        }
        out.into_iter().collect()
    }

    /// Returns a copy with every position, edge length, and object position
    /// multiplied by `c`. Angular labels are unchanged.
    pub fn scaled(&self, c: f64) -> World {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                position: [n.position[0] * c, n.position[1] * c],
                ..n.clone()
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                length: e.length * c,
                ..*e
            })
            .collect();
        let objects = self
            .objects
            .iter()
            .map(|o| ObjectSpec {
                position: [o.position[0] * c, o.position[1] * c, o.position[2] * c],
                ..o.clone()
            })
            .collect();
        World::from_parts(self.id, nodes, edges, objects, self.regions.clone())
    }
}

/// Camera used to label objects: 12 headings x 3 elevations, 90 degree FOV.
pub fn labeling_camera() -> Camera {
    Camera::new(512.0, 512.0, PI / 2.0, PI / 2.0)
}

struct Appearance {
    regions: Vec<Vec<f64>>,
    classes: Vec<Vec<f64>>,
    colors: Vec<Vec<f64>>,
    sizes: Vec<Vec<f64>>,
    shapes: Vec<Vec<f64>>,
}

impl Appearance {
    /// Per-token appearance vectors. Fixed across worlds so that a kitchen
    /// looks like a kitchen everywhere.
    fn new(dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(APPEARANCE_SEED ^ dim as u64);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut table = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                        .collect()
                })
                .collect()
        };
        Self {
            regions: table(RegionKind::ALL.len()),
            classes: table(ObjectClass::ALL.len()),
            colors: table(Color::ALL.len()),
            sizes: table(Size::ALL.len()),
            shapes: table(Shape::ALL.len()),
        }
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Generates a house. Pure function of `(seed, config)`; the world id is the seed.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(world) = try_generate(seed, config, &mut rng) {
            return Ok(world);
        }
    }
    Err(Error::Generation(format!(
        "graph failed to connect after {MAX_ATTEMPTS} attempts (seed {seed})"
    )))
}

fn try_generate(seed: u64, config: &WorldConfig, rng: &mut ChaCha8Rng) -> Option<World> {
    let n = config.nodes;
    let rows = ((n as f64 / 3.0).sqrt().ceil() as usize).max(1);
    let cols = ((n as f64 * 1.3 / rows as f64).ceil() as usize).max(2);
    let cells = grow_blob(rng, n, rows, cols);

    let index: BTreeMap<(i64, i64), usize> =
        cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut lattice: Vec<(usize, usize)> = Vec::new();
    for (i, &(r, c)) in cells.iter().enumerate() {
        for nb in [(r + 1, c), (r, c + 1)] {
            if let Some(&j) = index.get(&nb) {
                lattice.push((i, j));
            }
        }
    }
    let mut lattice_adj = vec![Vec::new(); n];
    for &(a, b) in &lattice {
        lattice_adj[a].push(b);
        lattice_adj[b].push(a);
    }

    let regions_of = assign_regions(rng, &lattice_adj, config.regions);

    // one door per adjacent region pair
    let mut doors: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    let mut kept = Vec::new();
    for &(a, b) in &lattice {
        let (ra, rb) = (regions_of[a], regions_of[b]);
        if ra == rb {
            kept.push((a, b));
        } else {
            doors.entry((ra.min(rb), ra.max(rb))).or_default().push((a, b));
        }
    }
    for options in doors.values() {
        kept.push(*options.choose(rng)?);
    }
    kept.sort_unstable();

    let position = |i: usize| {
        let (r, c) = cells[i];
        [c as f64 * config.spacing, r as f64 * config.spacing]
    };
    let edges: Vec<Edge> = kept
        .iter()
        .map(|&(a, b)| {
            let (pa, pb) = (position(a), position(b));
            Edge {
                a,
                b,
                length: (pa[0] - pb[0]).hypot(pa[1] - pb[1]),
            }
        })
        .collect();

    let mut adj: Adjacency = vec![Vec::new(); n];
    for e in &edges {
        adj[e.a].push((e.b, e.length));
        adj[e.b].push((e.a, e.length));
    }
    if !is_connected(&adj) {
        return None;
    }

    let regions: Vec<Region> = (0..config.regions)
        .map(|id| Region {
            id,
            kind: *RegionKind::ALL.choose(rng).expect("non-empty"),
        })
        .collect();

    let mut nodes: Vec<NodeSpec> = (0..n)
        .map(|id| NodeSpec {
            id,
            position: position(id),
            region: regions_of[id],
            feature: Vec::new(),
        })
        .collect();

    let objects = place_objects(rng, config, &nodes, &regions);
    fill_features(rng, config, &mut nodes, &regions, &objects);

    Some(World::from_parts(seed, nodes, edges, objects, regions))
}

/// Eden growth inside a `rows x cols` box. Returned cells are sorted by
/// (row, col), which fixes the node numbering.
fn grow_blob(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize) -> Vec<(i64, i64)> {
    let mut used = vec![false; rows * cols];
    let mut queued = vec![false; rows * cols];
    let mut frontier: Vec<(i64, i64)> = Vec::new();
    let start = (
        rng.random_range(0..rows) as i64,
        rng.random_range(0..cols) as i64,
    );
    let mut chosen = Vec::with_capacity(n);
    let idx = |(r, c): (i64, i64)| r as usize * cols + c as usize;
    frontier.push(start);
    queued[idx(start)] = true;
    while chosen.len() < n && !frontier.is_empty() {
        let k = rng.random_range(0..frontier.len());
        let cell = frontier.swap_remove(k);
        used[idx(cell)] = true;
        chosen.push(cell);
        let (r, c) = cell;
        for nb in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
            if nb.0 < 0 || nb.1 < 0 || nb.0 >= rows as i64 || nb.1 >= cols as i64 {
                continue;
            }
            if !queued[idx(nb)] && !used[idx(nb)] {
                queued[idx(nb)] = true;
                frontier.push(nb);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

fn bfs_hops(adj: &[Vec<usize>], sources: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut hops = vec![usize::MAX; adj.len()];
    let mut owner = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    for (k, &s) in sources.iter().enumerate() {
        hops[s] = 0;
        owner[s] = k;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if hops[v] == usize::MAX {
                hops[v] = hops[u] + 1;
                owner[v] = owner[u];
                queue.push_back(v);
            }
        }
    }
    (hops, owner)
}

/// Farthest-point seeds followed by a multi-source BFS split; every region
/// is contiguous and non-empty.
fn assign_regions(rng: &mut ChaCha8Rng, adj: &[Vec<usize>], count: usize) -> Vec<usize> {
    let mut seeds = vec![rng.random_range(0..adj.len())];
    while seeds.len() < count {
        let (hops, _) = bfs_hops(adj, &seeds);
        let far = (0..adj.len())
            .filter(|i| !seeds.contains(i))
            .max_by_key(|&i| (hops[i], std::cmp::Reverse(i)))
            .expect("count <= nodes");
        seeds.push(far);
    }
    bfs_hops(adj, &seeds).1
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    config: &WorldConfig,
    nodes: &[NodeSpec],
    regions: &[Region],
) -> Vec<ObjectSpec> {
    let mut objects = Vec::with_capacity(config.objects);
    for id in 0..config.objects {
        let region = rng.random_range(0..regions.len());
        let members: Vec<&NodeSpec> = nodes.iter().filter(|n| n.region == region).collect();
        let anchor = members.choose(rng).expect("regions are non-empty");
        let theta = rng.random_range(-PI..PI);
        let radius = rng.random_range(0.5..0.9) * config.spacing / 2.0;
        let position = [
            anchor.position[0] + radius * theta.cos(),
            anchor.position[1] + radius * theta.sin(),
            rng.random_range(0.3..2.2),
        ];
        let class = *ObjectClass::ALL.choose(rng).expect("non-empty");
        let color = *Color::ALL.choose(rng).expect("non-empty");
        let size = *Size::ALL.choose(rng).expect("non-empty");
        let shape = *Shape::ALL.choose(rng).expect("non-empty");

        let mut homes = Vec::new();
        for n in &members {
            let d = planar_distance(n.position, position);
            if d <= config.visibility || n.id == anchor.id {
                homes.push(HomeView {
                    node: n.id,
                    extent: label_object(n.position, position, size),
                });
            }
        }
        homes.sort_by_key(|h| h.node);
        objects.push(ObjectSpec {
            id,
            class,
            color,
            size,
            shape,
            region,
            position,
            relations: Vec::new(),
            homes,
        });
    }

    // relations to the two closest objects sharing the region
    for i in 0..objects.len() {
        let me = &objects[i];
        let mut others: Vec<(f64, usize)> = objects
            .iter()
            .filter(|o| o.id != me.id && o.region == me.region)
            .map(|o| (distance3(me.position, o.position), o.id))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let relations = others
            .iter()
            .take(2)
            .map(|&(_, other)| RelationSpec {
                other,
                relation: relation_between(me.position, objects[other].position),
            })
            .collect();
        objects[i].relations = relations;
    }
    objects
}

fn planar_distance(a: [f64; 2], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn distance3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn relation_between(me: [f64; 3], other: [f64; 3]) -> Relation {
    let dz = me[2] - other[2];
    if dz > 0.4 {
        Relation::Above
    } else if dz < -0.4 {
        Relation::Below
    } else if (me[0] - other[0]).hypot(me[1] - other[1]) < 1.2 {
        Relation::Near
    } else if me[0] < other[0] {
        Relation::LeftOf
    } else {
        Relation::RightOf
    }
}

/// Polar extent of an object seen from a node: box corners are projected into
/// the closest of the 36 discrete views, averaged, and mapped back to angles.
pub fn label_object(node: [f64; 2], object: [f64; 3], size: Size) -> PolarExtent {
    let dx = object[0] - node[0];
    let dy = object[1] - node[1];
    let dist = dx.hypot(dy).max(1e-3);
    let heading = dy.atan2(dx);
    let elevation = ((object[2] - EYE_HEIGHT) / dist).atan();

    let step = PI / 6.0;
    let cam_heading = wrap_angle((heading / step).round() * step);
    let cam_elev = ((elevation / step).round() * step).clamp(-step, step);
    let camera = labeling_camera().looking(cam_heading, cam_elev);

    let rel_h = wrap_angle(heading - cam_heading);
    let rel_e = elevation - cam_elev;
    let margin = 1e-3;
    let half_w = ((size.meters() / 2.0) / dist)
        .atan()
        .min(camera.fov_h / 2.0 - rel_h.abs() - margin)
        .max(margin);
    let half_h = ((size.meters() / 2.0) / dist)
        .atan()
        .min(camera.fov_v / 2.0 - rel_e.abs() - margin)
        .max(margin);

    let corner = |sh: f64, se: f64| camera.project(rel_h + sh * half_w, rel_e + se * half_h);
    let center: PixelPoint = bbox_center(
        corner(-1.0, 1.0),
        corner(1.0, 1.0),
        corner(1.0, -1.0),
        corner(-1.0, -1.0),
    );
    let label = pixel_to_direction(center, &camera).expect("center lies inside the image");
    PolarExtent {
        center: label,
        width: 2.0 * half_w,
        height: 2.0 * half_h,
    }
}

fn fill_features(
    rng: &mut ChaCha8Rng,
    config: &WorldConfig,
    nodes: &mut [NodeSpec],
    regions: &[Region],
    objects: &[ObjectSpec],
) {
    let sem = config.feature_dim - GEOMETRY_DIMS;
    let look = Appearance::new(sem);
    for node in nodes.iter_mut() {
        let mut f = vec![0.0; config.feature_dim];
        axpy(
            &mut f[..sem],
            1.0,
            &look.regions[regions[node.region].kind.index()],
        );
        let mut nearest: Option<(f64, PolarPoint)> = None;
        for o in objects {
            let Some(ext) = o.extent_at(node.id) else {
                continue;
            };
            axpy(&mut f[..sem], 1.0, &look.classes[o.class.index()]);
            axpy(&mut f[..sem], 0.5, &look.colors[o.color.index()]);
            axpy(&mut f[..sem], 0.5, &look.sizes[o.size.index()]);
            axpy(&mut f[..sem], 0.5, &look.shapes[o.shape.index()]);
            let d = planar_distance(node.position, o.position);
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, ext.center));
            }
        }
        for v in f[..sem].iter_mut() {
            *v += config.noise * rng.sample::<f64, _>(StandardNormal);
        }
        if let Some((_, p)) = nearest {
            f[sem] = p.heading.cos();
            f[sem + 1] = p.heading.sin();
            f[sem + 2] = p.elevation;
        }
        node.feature = f;
    }
}

// ---------------------------------------------------------------------------
// Instructions

/// Subset of the five annotation levels: object name, attributes and
/// relations, region, neighbor regions, rewritten full form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Granularity(u8);

impl Granularity {
    pub const FULL: Granularity = Granularity(1 << 4);
    pub const NAME_ONLY: Granularity = Granularity(1);

    pub fn from_levels(levels: &[u8]) -> Result<Self> {
        let mut mask = 0u8;
        for &l in levels {
            if !(1..=5).contains(&l) {
                return Err(Error::Granularity(l));
            }
            mask |= 1 << (l - 1);
        }
        if mask == 0 {
            return Err(Error::Config("granularity must not be empty".into()));
        }
        Ok(Self(mask))
    }

    pub fn contains(self, level: u8) -> bool {
        (1..=5).contains(&level) && self.0 & (1 << (level - 1)) != 0
    }

    pub fn levels(self) -> Vec<u8> {
        (1..=5).filter(|&l| self.contains(l)).collect()
    }
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    /// Accepts `"5"`, `"1,2,3"`, or `"1+2"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut levels = Vec::new();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            let l: u8 = part
                .parse()
                .map_err(|_| Error::Config(format!("bad granularity level {part:?}")))?;
            levels.push(l);
        }
        Self::from_levels(&levels)
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.levels().iter().map(u8::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<usize>,
    /// Segments present, indexed by level - 1.
    pub segments: [bool; 5],
}

impl Instruction {
    /// Content tokens (everything but template glue).
    pub fn content_tokens(&self, vocab: &Vocab) -> BTreeSet<usize> {
        self.tokens
            .iter()
            .copied()
            .filter(|&t| vocab.kind(t) != Some(TokenKind::Template))
            .collect()
    }
}

/// Templated instruction for `object` restricted to the requested levels.
/// When level 5 is requested the four content segments are emitted merged
/// in the rewritten ordering.
pub fn generate_instruction(
    world: &World,
    object: &ObjectSpec,
    granularity: Granularity,
) -> Result<Instruction> {
    let v = Vocab::new();
    let w = |s: &str| v.must(s);
    let region = world.regions[object.region].kind;
    let nbr_kinds: Vec<RegionKind> = world
        .region_neighbors(object.region)
        .into_iter()
        .take(3)
        .map(|r| world.regions[r].kind)
        .collect();

    let name = vec![w("find"), w("the"), w(object.class.word())];

    let mut attrs = vec![
        w("it"),
        w("is"),
        w(object.size.word()),
        w(object.color.word()),
        w("and"),
        w(object.shape.word()),
    ];
    for r in &object.relations {
        attrs.extend([
            w("it"),
            w("is"),
            w(r.relation.word()),
            w("the"),
            w(world.objects[r.other].class.word()),
        ]);
    }

    let region_seg = vec![w("it"), w("is"), w("in"), w("the"), w(region.word())];

    let mut nbr_list = Vec::new();
    for (i, k) in nbr_kinds.iter().enumerate() {
        if i > 0 {
            nbr_list.push(w("and"));
        }
        nbr_list.extend([w("the"), w(k.word())]);
    }
    let nbr_seg = if nbr_list.is_empty() {
        Vec::new()
    } else {
        let mut s = vec![w("the"), w(region.word()), w("is"), w("next"), w("to")];
        s.extend(&nbr_list);
        s
    };

    let mut segments = [false; 5];
    let mut tokens = Vec::new();
    if granularity.contains(5) {
        tokens.extend([w("in"), w("the"), w(region.word())]);
        if !nbr_list.is_empty() {
            tokens.extend([w("next"), w("to")]);
            tokens.extend(&nbr_list);
            segments[3] = true;
        }
        tokens.extend([
            w("find"),
            w("the"),
            w(object.size.word()),
            w(object.color.word()),
            w(object.shape.word()),
            w(object.class.word()),
        ]);
        for r in &object.relations {
            tokens.extend([
                w(r.relation.word()),
                w("the"),
                w(world.objects[r.other].class.word()),
            ]);
        }
        tokens.push(w("."));
        segments[0] = true;
        segments[1] = true;
        segments[2] = true;
        segments[4] = true;
    } else {
        for (level, seg) in [(1u8, &name), (2, &attrs), (3, &region_seg), (4, &nbr_seg)] {
            if granularity.contains(level) && !seg.is_empty() {
                tokens.extend(seg.iter());
                tokens.push(w("."));
                segments[level as usize - 1] = true;
            }
        }
    }
    if tokens.is_empty() {
        // only level 4 was requested in a single-region house
        tokens.extend([w("the"), w(region.word()), w("room"), w(".")]);
        segments[3] = true;
    }
    Ok(Instruction { tokens, segments })
}

// ---------------------------------------------------------------------------
// Episodes

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSchedule {
    pub initial: f64,
    pub decay: f64,
    pub failures_per_decay: usize,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        Self {
            initial: 18.0,
            decay: 0.8,
            failures_per_decay: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartSample {
    pub node: usize,
    /// Distance to the nearest target.
    pub distance: f64,
    /// Threshold in force when the start was accepted.
    pub threshold: f64,
    pub failures: usize,
}

/// Rejection-samples a start node whose distance to the nearest target
/// exceeds a threshold that decays after every run of failures.
pub fn sample_start<R: Rng + ?Sized>(
    world: &World,
    dist: &DistanceTable,
    targets: &[usize],
    schedule: &ThresholdSchedule,
    rng: &mut R,
) -> Result<StartSample> {
    if targets.is_empty() {
        return Err(Error::Config("target set must not be empty".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= world.num_nodes()) {
        return Err(Error::UnknownNode(bad));
    }
    if targets.len() >= world.num_nodes() {
        return Err(Error::Config("every node is a target".into()));
    }
    let mut threshold = schedule.initial;
    let mut failures = 0usize;
    loop {
        let node = rng.random_range(0..world.num_nodes());
        let d = dist.to_nearest(node, targets);
        if d > threshold {
            return Ok(StartSample {
                node,
                distance: d,
                threshold,
                failures,
            });
        }
        failures += 1;
        if failures % schedule.failures_per_decay == 0 {
            threshold *= schedule.decay;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetLabel {
    pub node: usize,
    pub label: PolarPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: String,
    pub world_id: u64,
    pub start: usize,
    pub object: usize,
    pub targets: Vec<usize>,
    pub instruction: Instruction,
    pub granularity: Granularity,
    pub labels: Vec<TargetLabel>,
    pub shortest_path_length: f64,
}

impl EpisodeSpec {
    pub fn label_at(&self, node: usize) -> Option<PolarPoint> {
        self.labels.iter().find(|l| l.node == node).map(|l| l.label)
    }
}

/// Builds one episode for `object` with a sampled start.
pub fn make_episode<R: Rng + ?Sized>(
    id: String,
    world: &World,
    dist: &DistanceTable,
    object: usize,
    granularity: Granularity,
    schedule: &ThresholdSchedule,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    let obj = &world.objects[object];
    let targets = obj.home_nodes();
    let start = sample_start(world, dist, &targets, schedule, rng)?;
    Ok(EpisodeSpec {
        id,
        world_id: world.id,
        start: start.node,
        object,
        targets,
        instruction: generate_instruction(world, obj, granularity)?,
        granularity,
        labels: obj
            .homes
            .iter()
            .map(|h| TargetLabel {
                node: h.node,
                label: h.extent.center,
            })
            .collect(),
        shortest_path_length: start.distance,
    })
}
