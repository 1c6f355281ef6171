//! RRT* over a local obstacle index.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{local_goal, node_cost, PlannerParams, PlannerPath};
use crate::map::{point_segment_distance, VoxelMap};
use crate::{Error, Result, Vec3};

/// Occupied voxel centers near the planning region, bucketed in a coarse grid.
struct LocalObstacles {
    cell: f64,
    clearance: f64,
    buckets: HashMap<[i64; 3], Vec<Vec3>>,
}

impl LocalObstacles {
    fn extract(map: &VoxelMap, center: &Vec3, radius: f64, clearance: f64) -> Self {
        let cell = clearance.max(map.voxel_size()).max(1e-3);
        let mut buckets: HashMap<[i64; 3], Vec<Vec3>> = HashMap::new();
        for v in map.voxels_within_horizon(center, radius + clearance + map.voxel_size()) {
            buckets.entry(Self::key(cell, &v.center)).or_default().push(v.center);
        }
        Self { cell, clearance, buckets }
    }

    fn key(cell: f64, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / cell).floor() as i64)
    }

    fn segment_free(&self, a: &Vec3, b: &Vec3) -> bool {
        if self.buckets.is_empty() {
            return true;
        }
        let pad = Vec3::repeat(self.clearance);
        let lo = Self::key(self.cell, &(a.inf(b) - pad));
        let hi = Self::key(self.cell, &(a.sup(b) + pad));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(points) = self.buckets.get(&[x, y, z]) {
                        if points.iter().any(|c| point_segment_distance(c, a, b) <= self.clearance) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

struct Node {
    p: Vec3,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn nearest(&self, p: &Vec3) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.p - p).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn near(&self, p: &Vec3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        (0..self.nodes.len()).filter(|&i| (self.nodes[i].p - p).norm_squared() <= r2).collect()
    }

    fn reparent(&mut self, child: usize, parent: usize, cost: f64) {
        if let Some(old) = self.nodes[child].parent {
            self.nodes[old].children.retain(|&c| c != child);
        }
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
        self.nodes[child].cost = cost;
        let mut stack = self.nodes[child].children.clone();
        while let Some(i) = stack.pop() {
            // recompute from the parent so descendant costs stay exact sums
            let par = self.nodes[i].parent.expect("child has a parent");
            let link = (self.nodes[i].p - self.nodes[par].p).norm();
            self.nodes[i].cost = node_cost(self.nodes[par].cost, link);
            stack.extend(self.nodes[i].children.iter().copied());
        }
    }

    fn chain(&self, leaf: usize) -> PlannerPath {
        let mut idx = vec![leaf];
        while let Some(p) = self.nodes[*idx.last().unwrap()].parent {
            idx.push(p);
        }
        idx.reverse();
        let setpoints = idx.iter().map(|&i| self.nodes[i].p).collect();
        let costs = idx.iter().map(|&i| self.nodes[i].cost).collect();
        PlannerPath::from_chain(setpoints, costs)
    }
}

fn sample_region(rng: &mut ChaCha8Rng, center: &Vec3, radius: f64, planar: bool) -> Vec3 {
    loop {
        let x = rng.gen_range(-1.0..=1.0);
        let y = rng.gen_range(-1.0..=1.0);
        let z = if planar { 0.0 } else { rng.gen_range(-1.0..=1.0) };
        let u = Vec3::new(x, y, z);
        if u.norm_squared() <= 1.0 {
            return center + u * radius;
        }
    }
}

struct Grown {
    tree: Tree,
    goal_nodes: Vec<usize>,
}

fn grow(obstacles: &LocalObstacles, start: &Vec3, target: &Vec3, params: &PlannerParams) -> Grown {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut tree = Tree { nodes: vec![Node { p: *start, parent: None, cost: node_cost(0.0, 0.0), children: vec![] }] };
    let mut goal_nodes = Vec::new();
    let dim = if params.planar { 2.0 } else { 3.0 };
    // neighbourhood constant sized to the sampling ball
    let gamma = 2.0 * (1.0f64 + 1.0 / dim).powf(1.0 / dim) * params.horizon;

    for _ in 0..params.max_iterations {
        let sample = if rng.gen::<f64>() < params.goal_bias {
            *target
        } else {
            sample_region(&mut rng, start, params.horizon, params.planar)
        };
        let nearest = tree.nearest(&sample);
        let from = tree.nodes[nearest].p;
        let offset = sample - from;
        let dist = offset.norm();
        if dist < 1e-9 {
            continue;
        }
        let new_p = if dist <= params.step_size { sample } else { from + offset * (params.step_size / dist) };
        if !obstacles.segment_free(&from, &new_p) {
            continue;
        }

        let n = tree.nodes.len() as f64 + 1.0;
        let radius = (gamma * (n.ln() / n).powf(1.0 / dim))
            .max(params.step_size * 1.1)
            .min(params.rewire_radius.max(params.step_size * 1.1));
        let near = tree.near(&new_p, radius);

        // choose parent: cheapest candidate first, stop at the first free link
        let mut candidates: Vec<(f64, usize)> = near
            .iter()
            .map(|&i| (node_cost(tree.nodes[i].cost, (new_p - tree.nodes[i].p).norm()), i))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut parent = (node_cost(tree.nodes[nearest].cost, (new_p - from).norm()), nearest);
        for &(c, i) in &candidates {
            if c >= parent.0 {
                break;
            }
            if obstacles.segment_free(&tree.nodes[i].p, &new_p) {
                parent = (c, i);
                break;
            }
        }

        let new_idx = tree.nodes.len();
        tree.nodes.push(Node { p: new_p, parent: Some(parent.1), cost: parent.0, children: vec![] });
        tree.nodes[parent.1].children.push(new_idx);
        if (new_p - target).norm() < 1e-9 {
            goal_nodes.push(new_idx);
        }

        for &i in &near {
            if i == parent.1 {
                continue;
            }
            let via = node_cost(tree.nodes[new_idx].cost, (tree.nodes[i].p - new_p).norm());
            if via + 1e-12 < tree.nodes[i].cost && obstacles.segment_free(&new_p, &tree.nodes[i].p) {
                tree.reparent(i, new_idx, via);
            }
        }
    }
    Grown { tree, goal_nodes }
}

fn prepare(map: &VoxelMap, start: &Vec3, params: &PlannerParams) -> Result<LocalObstacles> {
    params.validate()?;
    if !start.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("planner start"));
    }
    let obstacles = LocalObstacles::extract(map, start, params.horizon + params.step_size, params.clearance);
    if !obstacles.segment_free(start, start) {
        return Err(Error::StartBlocked);
    }
    Ok(obstacles)
}

fn best_goal(grown: &Grown) -> Option<usize> {
    grown
        .goal_nodes
        .iter()
        .copied()
        .min_by(|&a, &b| grown.tree.nodes[a].cost.total_cmp(&grown.tree.nodes[b].cost).then(a.cmp(&b)))
}

/// RRT* from `start` to `goal` clipped to the planning horizon.
///
/// Fails with [`Error::NoPath`] when the clipped goal is blocked or not reached
/// within `max_iterations`. Deterministic for a fixed `rng_seed`.
pub fn plan(map: &VoxelMap, start: &Vec3, goal: &Vec3, params: &PlannerParams) -> Result<PlannerPath> {
    let obstacles = prepare(map, start, params)?;
    let target = local_goal(goal, start, params.horizon);
    if (target - start).norm() < 1e-9 {
        return Ok(PlannerPath::single(*start));
    }
    if !obstacles.segment_free(&target, &target) {
        return Err(Error::NoPath);
    }
    let grown = grow(&obstacles, start, &target, params);
    best_goal(&grown).map(|g| grown.tree.chain(g)).ok_or(Error::NoPath)
}

/// Like [`plan`], but when the goal lies beyond the horizon and the clipped
/// goal cannot be reached, returns the branch whose end minimizes
/// `cost + ‖end − goal‖`, provided it makes progress toward the goal.
pub fn plan_local(map: &VoxelMap, start: &Vec3, goal: &Vec3, params: &PlannerParams) -> Result<PlannerPath> {
    let obstacles = prepare(map, start, params)?;
    let target = local_goal(goal, start, params.horizon);
    if (target - start).norm() < 1e-9 {
        return Ok(PlannerPath::single(*start));
    }
    let within = (goal - start).norm() <= params.horizon;
    let target_free = obstacles.segment_free(&target, &target);
    if within && !target_free {
        return Err(Error::NoPath);
    }
    let grown = grow(&obstacles, start, &target, params);
    if let Some(g) = best_goal(&grown) {
        return Ok(grown.tree.chain(g));
    }
    if within {
        return Err(Error::NoPath);
    }
    let start_gap = (goal - start).norm();
    let score = |i: usize| grown.tree.nodes[i].cost + (grown.tree.nodes[i].p - goal).norm();
    (1..grown.tree.nodes.len())
        .filter(|&i| (grown.tree.nodes[i].p - goal).norm() < start_gap - params.step_size)
        .min_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)))
        .map(|i| grown.tree.chain(i))
        .ok_or(Error::NoPath)
}
