//! Analytic signed-distance scenes: primitives, CSG operators, sphere
//! tracing, and a line-oriented scene-description parser.
//!
//! Nodes live in a flat vector and operators may only reference earlier
//! entries, so evaluation is a single bottom-up pass over a values array —
//! no recursion, which keeps adversarial inputs from overflowing the stack.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{vec3, Aabb, Ray, Vec3};
use crate::surface::SurfaceSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdfNode {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half: Vec3 },
    RoundBox { center: Vec3, half: Vec3, radius: f64 },
    /// Ring around the y axis through `center`.
    Torus { center: Vec3, major: f64, minor: f64 },
    /// Half-space n·p − d ≤ 0 is inside (n unit).
    Plane { normal: Vec3, offset: f64 },
    Union { a: usize, b: usize },
    Intersect { a: usize, b: usize },
    /// a minus b.
    Subtract { a: usize, b: usize },
    SmoothUnion { a: usize, b: usize, k: f64 },
}

#[derive(Debug, Clone)]
pub struct SdfScene {
    nodes: Vec<SdfNode>,
    root: usize,
    pub bounds: Aabb,
    has_blend: bool,
}

/// Sphere-tracing controls, derived from the scene scale.
#[derive(Debug, Clone, Copy)]
pub struct TraceParams {
    pub max_steps: u32,
    pub hit_eps: f64,
    pub t_max: f64,
    pub step_scale: f64,
}

impl TraceParams {
    pub fn for_scene(scene: &SdfScene) -> TraceParams {
        let diag = scene.bounds.diagonal();
        TraceParams {
            max_steps: 256,
            hit_eps: 1e-4 * diag,
            t_max: 4.0 * diag,
            // Smooth blends only bound the true distance; under-step there.
            step_scale: if scene.has_blend { 0.9 } else { 1.0 },
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

fn prim_distance(node: &SdfNode, p: Vec3, vals: &[f64]) -> f64 {
    match *node {
        SdfNode::Sphere { center, radius } => (p - center).length() - radius,
        SdfNode::Box { center, half } => {
            let q = (p - center).abs() - half;
            q.max(Vec3::ZERO).length() + q.max_component().min(0.0)
        }
        SdfNode::RoundBox { center, half, radius } => {
            let q = (p - center).abs() - half;
            q.max(Vec3::ZERO).length() + q.max_component().min(0.0) - radius
        }
        SdfNode::Torus { center, major, minor } => {
            let q = p - center;
            let ring = (q.x * q.x + q.z * q.z).sqrt() - major;
            (ring * ring + q.y * q.y).sqrt() - minor
        }
        SdfNode::Plane { normal, offset } => normal.dot(p) - offset,
        SdfNode::Union { a, b } => vals[a].min(vals[b]),
        SdfNode::Intersect { a, b } => vals[a].max(vals[b]),
        SdfNode::Subtract { a, b } => vals[a].max(-vals[b]),
        SdfNode::SmoothUnion { a, b, k } => {
            let (da, db) = (vals[a], vals[b]);
            let h = (0.5 + 0.5 * (db - da) / k).clamp(0.0, 1.0);
            // mix(b, a, h) − k·h·(1−h)
            db + (da - db) * h - k * h * (1.0 - h)
        }
    }
}

impl SdfScene {
    pub fn new(nodes: Vec<SdfNode>, root: usize, bounds: Aabb) -> Result<SdfScene> {
        if nodes.is_empty() {
            return Err(Error::input("SDF scene has no nodes"));
        }
        if root >= nodes.len() {
            return Err(Error::input("SDF root index out of range"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let SdfNode::Union { a, b }
            | SdfNode::Intersect { a, b }
            | SdfNode::Subtract { a, b }
            | SdfNode::SmoothUnion { a, b, .. } = *node
            {
                if a >= i || b >= i {
                    return Err(Error::input(format!(
                        "SDF operator {i} references a node at or after itself"
                    )));
                }
            }
        }
        let ext = bounds.extent();
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !bounds.min.is_finite() || !bounds.max.is_finite() {
            return Err(Error::input("SDF bounds must be a finite non-degenerate box"));
        }
        let has_blend = nodes.iter().any(|n| matches!(n, SdfNode::SmoothUnion { .. }));
        Ok(SdfScene { nodes, root, bounds, has_blend })
    }

    /// Signed distance (exact for primitives, a lower bound across blends).
    pub fn eval(&self, p: Vec3) -> f64 {
        SCRATCH.with(|s| {
            let mut vals = s.borrow_mut();
            vals.clear();
            for node in &self.nodes {
                let d = prim_distance(node, p, &vals);
                vals.push(d);
            }
            vals[self.root]
        })
    }

    /// Central-difference surface normal with scene-scaled step.
    pub fn normal(&self, p: Vec3) -> Result<Vec3> {
        let h = 1e-4 * self.bounds.diagonal();
        let g = vec3(
            self.eval(p + vec3(h, 0.0, 0.0)) - self.eval(p - vec3(h, 0.0, 0.0)),
            self.eval(p + vec3(0.0, h, 0.0)) - self.eval(p - vec3(0.0, h, 0.0)),
            self.eval(p + vec3(0.0, 0.0, h)) - self.eval(p - vec3(0.0, 0.0, h)),
        ) / (2.0 * h);
        if g.length() < 1e-9 {
            return Err(Error::data(format!(
                "degenerate SDF gradient at ({}, {}, {})",
                p.x, p.y, p.z
            )));
        }
        Ok(g.normalized())
    }

    /// March from `ray.at(t_min)`; Some(t) on a hit, None on escape past
    /// t_max or step exhaustion.
    pub fn sphere_trace(&self, ray: &Ray, t_min: f64, params: &TraceParams) -> Option<f64> {
        let mut t = t_min;
        for _ in 0..params.max_steps {
            if t > params.t_max {
                return None;
            }
            let d = self.eval(ray.at(t));
            if d < params.hit_eps {
                return Some(t);
            }
            t += d * params.step_scale;
        }
        None
    }

    /// Newton-style projection onto the zero level set.
    pub fn project_to_surface(&self, mut p: Vec3, iters: u32) -> Result<SurfaceSample> {
        let hit_eps = 1e-4 * self.bounds.diagonal();
        for _ in 0..=iters {
            let d = self.eval(p);
            if d.abs() < hit_eps {
                return Ok(SurfaceSample { position: p, normal: self.normal(p)? });
            }
            p = p - self.normal(p)? * d;
        }
        Err(Error::data("surface projection did not converge"))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

const MAX_NODES: usize = 4096;

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::parse(line, msg.into())
}

fn parse_f64(line: usize, key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| perr(line, format!("{key}: expected a number, got {s:?}")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("{key}: value must be finite")));
    }
    Ok(v)
}

fn parse_vec3(line: usize, key: &str, s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(perr(line, format!("{key}: expected X,Y,Z")));
    }
    Ok(vec3(
        parse_f64(line, key, parts[0])?,
        parse_f64(line, key, parts[1])?,
        parse_f64(line, key, parts[2])?,
    ))
}

struct LineFields<'a> {
    line: usize,
    kv: HashMap<&'a str, &'a str>,
    bare: Vec<&'a str>,
}

impl<'a> LineFields<'a> {
    fn split(line_no: usize, rest: &'a [&'a str]) -> Result<LineFields<'a>> {
        let mut kv = HashMap::new();
        let mut bare = Vec::new();
        for tok in rest {
            match tok.split_once('=') {
                Some((k, v)) => {
                    if kv.insert(k, v).is_some() {
                        return Err(perr(line_no, format!("duplicate key {k:?}")));
                    }
                }
                None => bare.push(*tok),
            }
        }
        Ok(LineFields { line: line_no, kv, bare })
    }

    fn required(&self, key: &str) -> Result<&'a str> {
        self.kv
            .get(key)
            .copied()
            .ok_or_else(|| perr(self.line, format!("missing {key}=")))
    }

    fn f64_req(&self, key: &str) -> Result<f64> {
        parse_f64(self.line, key, self.required(key)?)
    }

    fn vec3_req(&self, key: &str) -> Result<Vec3> {
        parse_vec3(self.line, key, self.required(key)?)
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for k in self.kv.keys() {
            if !known.contains(k) {
                return Err(perr(self.line, format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }
}

/// Parse the line-oriented scene format:
///
/// ```text
/// # comment
/// sphere    [id=NAME] c=X,Y,Z r=R
/// box       [id=NAME] c=X,Y,Z h=HX,HY,HZ
/// round_box [id=NAME] c=X,Y,Z h=HX,HY,HZ r=R
/// torus     [id=NAME] c=X,Y,Z R=MAJOR r=MINOR
/// plane     [id=NAME] n=NX,NY,NZ d=OFFSET
/// op [id=NAME] union|intersect|subtract|smooth_union [k=K] a=REF b=REF
/// bounds min=X,Y,Z max=X,Y,Z
/// root REF
/// ```
///
/// Operators may only reference ids declared on earlier lines. The root
/// defaults to the last node. `k` defaults to 0.1 x bounds diagonal.
pub fn parse_sdf_scene(text: &str) -> Result<SdfScene> {
    let mut nodes: Vec<SdfNode> = Vec::new();
    let mut default_k: Vec<usize> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut bounds: Option<Aabb> = None;
    let mut root: Option<usize> = None;

    fn resolve(ids: &HashMap<String, usize>, line: usize, name: &str) -> Result<usize> {
        ids.get(name)
            .copied()
            .ok_or_else(|| perr(line, format!("unknown node id {name:?} (forward references are not allowed)")))
    }

    fn push_node(
        nodes: &mut Vec<SdfNode>,
        ids: &mut HashMap<String, usize>,
        line_no: usize,
        node: SdfNode,
        f: &LineFields,
    ) -> Result<()> {
        let i = nodes.len();
        if let Some(name) = f.kv.get("id") {
            if ids.insert((*name).to_string(), i).is_some() {
                return Err(perr(line_no, format!("duplicate id {name:?}")));
            }
        }
        nodes.push(node);
        Ok(())
    }

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let kind = tokens[0];
        let f = LineFields::split(line_no, &tokens[1..])?;

        if nodes.len() >= MAX_NODES {
            return Err(perr(line_no, format!("too many nodes (limit {MAX_NODES})")));
        }

        match kind {
            "sphere" => {
                f.check_known(&["id", "c", "r"])?;
                if !f.bare.is_empty() {
                    return Err(perr(line_no, format!("unexpected token {:?}", f.bare[0])));
                }
                let r = f.f64_req("r")?;
                if r <= 0.0 {
                    return Err(perr(line_no, "r must be positive"));
                }
                push_node(&mut nodes, &mut ids, line_no, SdfNode::Sphere { center: f.vec3_req("c")?, radius: r }, &f)?;
            }
            "box" | "round_box" => {
                let known: &[&str] = if kind == "box" { &["id", "c", "h"] } else { &["id", "c", "h", "r"] };
                f.check_known(known)?;
                if !f.bare.is_empty() {
                    return Err(perr(line_no, format!("unexpected token {:?}", f.bare[0])));
                }
                let half = f.vec3_req("h")?;
                if !(half.x > 0.0 && half.y > 0.0 && half.z > 0.0) {
                    return Err(perr(line_no, "h components must be positive"));
                }
                let center = f.vec3_req("c")?;
                if kind == "box" {
                    push_node(&mut nodes, &mut ids, line_no, SdfNode::Box { center, half }, &f)?;
                } else {
                    let r = f.f64_req("r")?;
                    if r <= 0.0 {
                        return Err(perr(line_no, "r must be positive"));
                    }
                    push_node(&mut nodes, &mut ids, line_no, SdfNode::RoundBox { center, half, radius: r }, &f)?;
                }
            }
            "torus" => {
                f.check_known(&["id", "c", "R", "r"])?;
                if !f.bare.is_empty() {
                    return Err(perr(line_no, format!("unexpected token {:?}", f.bare[0])));
                }
                let major = f.f64_req("R")?;
                let minor = f.f64_req("r")?;
                if major <= 0.0 || minor <= 0.0 {
                    return Err(perr(line_no, "R and r must be positive"));
                }
                push_node(&mut nodes, &mut ids, line_no, SdfNode::Torus { center: f.vec3_req("c")?, major, minor }, &f)?;
            }
            "plane" => {
                f.check_known(&["id", "n", "d"])?;
                if !f.bare.is_empty() {
                    return Err(perr(line_no, format!("unexpected token {:?}", f.bare[0])));
                }
                let n = f.vec3_req("n")?;
                if n.length() < 1e-12 {
                    return Err(perr(line_no, "plane normal must be non-zero"));
                }
                push_node(
                    &mut nodes,
                    &mut ids,
                    line_no,
                    SdfNode::Plane { normal: n.normalized(), offset: f.f64_req("d")? },
                    &f,
                )?;
            }
            "op" => {
                f.check_known(&["id", "a", "b", "k"])?;
                if f.bare.len() != 1 {
                    return Err(perr(line_no, "op needs exactly one operator name (union|intersect|subtract|smooth_union)"));
                }
                let a = resolve(&ids, line_no, f.required("a")?)?;
                let b = resolve(&ids, line_no, f.required("b")?)?;
                let node = match f.bare[0] {
                    "union" => SdfNode::Union { a, b },
                    "intersect" => SdfNode::Intersect { a, b },
                    "subtract" => SdfNode::Subtract { a, b },
                    "smooth_union" => match f.kv.get("k") {
                        Some(s) => {
                            let k = parse_f64(line_no, "k", s)?;
                            if k <= 0.0 {
                                return Err(perr(line_no, "k must be positive"));
                            }
                            SdfNode::SmoothUnion { a, b, k }
                        }
                        None => {
                            default_k.push(nodes.len());
                            SdfNode::SmoothUnion { a, b, k: 1.0 }
                        }
                    },
                    other => return Err(perr(line_no, format!("unknown operator {other:?}"))),
                };
                if !matches!(node, SdfNode::SmoothUnion { .. }) && f.kv.contains_key("k") {
                    return Err(perr(line_no, "k only applies to smooth_union"));
                }
                push_node(&mut nodes, &mut ids, line_no, node, &f)?;
            }
            "bounds" => {
                f.check_known(&["min", "max"])?;
                if bounds.is_some() {
                    return Err(perr(line_no, "bounds specified twice"));
                }
                let bb = Aabb::new(f.vec3_req("min")?, f.vec3_req("max")?);
                let ext = bb.extent();
                if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
                    return Err(perr(line_no, "bounds must have positive extent"));
                }
                bounds = Some(bb);
            }
            "root" => {
                if f.bare.len() != 1 || !f.kv.is_empty() {
                    return Err(perr(line_no, "root takes exactly one node id"));
                }
                root = Some(resolve(&ids, line_no, f.bare[0])?);
            }
            other => return Err(perr(line_no, format!("unknown directive {other:?}"))),
        }
    }

    let bounds = bounds.ok_or_else(|| Error::parse(0, "scene is missing a bounds line"))?;
    if nodes.is_empty() {
        return Err(Error::parse(0, "scene declares no geometry"));
    }
    let diag = bounds.diagonal();
    for i in default_k {
        if let SdfNode::SmoothUnion { k, .. } = &mut nodes[i] {
            *k = 0.1 * diag;
        }
    }
    let root = root.unwrap_or(nodes.len() - 1);
    SdfScene::new(nodes, root, bounds)
}

pub fn load_sdf_scene(path: &Path) -> Result<SdfScene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sdf_scene(&text)
}

/// Render a scene back to the text format (used by fixtures and tests).
pub fn format_sdf_scene(scene: &SdfScene) -> String {
    let mut out = String::new();
    for (i, node) in scene.nodes.iter().enumerate() {
        match *node {
            SdfNode::Sphere { center, radius } => {
                let _ = writeln!(out, "sphere id=n{i} c={},{},{} r={}", center.x, center.y, center.z, radius);
            }
            SdfNode::Box { center, half } => {
                let _ = writeln!(
                    out,
                    "box id=n{i} c={},{},{} h={},{},{}",
                    center.x, center.y, center.z, half.x, half.y, half.z
                );
            }
            SdfNode::RoundBox { center, half, radius } => {
                let _ = writeln!(
                    out,
                    "round_box id=n{i} c={},{},{} h={},{},{} r={}",
                    center.x, center.y, center.z, half.x, half.y, half.z, radius
                );
            }
            SdfNode::Torus { center, major, minor } => {
                let _ = writeln!(out, "torus id=n{i} c={},{},{} R={} r={}", center.x, center.y, center.z, major, minor);
            }
            SdfNode::Plane { normal, offset } => {
                let _ = writeln!(out, "plane id=n{i} n={},{},{} d={}", normal.x, normal.y, normal.z, offset);
            }
            SdfNode::Union { a, b } => {
                let _ = writeln!(out, "op id=n{i} union a=n{a} b=n{b}");
            }
            SdfNode::Intersect { a, b } => {
                let _ = writeln!(out, "op id=n{i} intersect a=n{a} b=n{b}");
            }
            SdfNode::Subtract { a, b } => {
                let _ = writeln!(out, "op id=n{i} subtract a=n{a} b=n{b}");
            }
            SdfNode::SmoothUnion { a, b, k } => {
                let _ = writeln!(out, "op id=n{i} smooth_union k={k} a=n{a} b=n{b}");
            }
        }
    }
    let bb = scene.bounds;
    let _ = writeln!(out, "bounds min={},{},{} max={},{},{}", bb.min.x, bb.min.y, bb.min.z, bb.max.x, bb.max.y, bb.max.z);
    let _ = writeln!(out, "root n{}", scene.root);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sphere() -> SdfScene {
        parse_sdf_scene("sphere c=0,0,0 r=1\nbounds min=-2,-2,-2 max=2,2,2\n").unwrap()
    }

    #[test]
    fn sphere_distance_is_exact() {
        let s = unit_sphere();
        assert_eq!(s.eval(vec3(2.0, 0.0, 0.0)), 1.0);
        assert!((s.eval(vec3(0.0, 0.0, 0.0)) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn plane_distance_is_signed() {
        let s = parse_sdf_scene("plane n=0,1,0 d=-1\nbounds min=-2,-2,-2 max=2,2,2\n").unwrap();
        assert!((s.eval(vec3(0.0, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((s.eval(vec3(5.0, -1.0, 3.0))).abs() < 1e-15);
        assert!(s.eval(vec3(0.0, -2.0, 0.0)) < 0.0);
    }

    #[test]
    fn normals_match_analytic_gradients() {
        let sphere = unit_sphere();
        let cube = parse_sdf_scene("box c=0,0,0 h=1,1,1\nbounds min=-2,-2,-2 max=2,2,2\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let max_angle = 0.1_f64.to_radians();
        for _ in 0..200 {
            let d = vec3(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).normalized();
            let n = sphere.normal(d * 1.0).unwrap();
            assert!(n.dot(d).acos() < max_angle, "sphere normal off at {d:?}");
        }
        // Box face interior points: analytic normal is the face axis.
        let n = cube.normal(vec3(1.0, 0.2, -0.3)).unwrap();
        assert!(n.dot(vec3(1.0, 0.0, 0.0)).acos() < max_angle);
        let n = cube.normal(vec3(0.1, -1.0, 0.4)).unwrap();
        assert!(n.dot(vec3(0.0, -1.0, 0.0)).acos() < max_angle);
    }

    #[test]
    fn subtraction_matches_dense_grid_oracle() {
        let text = "box id=b c=0,0,0 h=1,1,1\nsphere id=s c=0,0,1 r=0.6\nop subtract a=b b=s\nbounds min=-1.3,-1.3,-1.3 max=1.3,1.3,1.3\n";
        let scene = parse_sdf_scene(text).unwrap();
        // Probe point inside the carved pocket: outside the solid.
        let p = vec3(0.0, 0.0, 0.8);
        let d = scene.eval(p);
        assert!(d > 0.0);
        // Dense-grid oracle: distance from p to the interpolated zero
        // crossings of the same field.
        let res = 96usize;
        let bb = scene.bounds;
        let cell = bb.extent() / res as f64;
        let at = |i: usize, j: usize, k: usize| {
            bb.min + vec3(cell.x * i as f64, cell.y * j as f64, cell.z * k as f64)
        };
        let mut best = f64::INFINITY;
        for i in 0..=res {
            for j in 0..=res {
                for k in 0..=res {
                    let a = at(i, j, k);
                    let va = scene.eval(a);
                    for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        if i + di > res || j + dj > res || k + dk > res {
                            continue;
                        }
                        let bpt = at(i + di, j + dj, k + dk);
                        let vb = scene.eval(bpt);
                        if (va < 0.0) != (vb < 0.0) {
                            let t = va / (va - vb);
                            let q = a + (bpt - a) * t;
                            best = best.min((p - q).length());
                        }
                    }
                }
            }
        }
        let h = cell.max_component();
        assert!((d - best).abs() < 2.0 * h, "sdf {d} vs grid {best} (h={h})");
    }

    #[test]
    fn smooth_union_dips_quarter_k_at_tie() {
        let text = "sphere id=a c=-1,0,0 r=1\nsphere id=b c=1,0,0 r=1\nop smooth_union k=0.4 a=a b=b\nbounds min=-3,-3,-3 max=3,3,3\n";
        let scene = parse_sdf_scene(text).unwrap();
        // Midpoint: both spheres at distance 0, so the blend dips to −k/4.
        let d = scene.eval(vec3(0.0, 0.0, 0.0));
        assert!((d - -0.1).abs() < 1e-12);
        // Far away the blend equals plain min.
        let far = scene.eval(vec3(3.0, 0.0, 0.0));
        assert!((far - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_hits_unit_sphere_head_on() {
        let s = unit_sphere();
        let params = TraceParams::for_scene(&s);
        let ray = Ray::new(vec3(-3.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0));
        let t = s.sphere_trace(&ray, 0.0, &params).unwrap();
        assert!((t - 2.0).abs() < 2.0 * params.hit_eps, "t = {t}");
    }

    #[test]
    fn trace_matches_quadratic_oracle() {
        let s = unit_sphere();
        let params = TraceParams::for_scene(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut traced_hits = 0;
        for _ in 0..10_000 {
            let origin = vec3(
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                -3.0,
            );
            let target = vec3(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let dir = (target - origin).normalized();
            let ray = Ray::new(origin, dir);
            // Analytic first hit of the unit sphere.
            let b = origin.dot(dir);
            let c = origin.length_squared() - 1.0;
            let disc = b * b - c;
            let analytic = if disc > 0.0 {
                let t = -b - disc.sqrt();
                (t > 0.0).then_some(t)
            } else {
                None
            };
            if let Some(t) = s.sphere_trace(&ray, 0.0, &params) {
                traced_hits += 1;
                let ta = analytic.expect("trace hit but analytic miss");
                assert!((t - ta).abs() < 10.0 * params.hit_eps, "t {t} vs {ta}");
            } else if let Some(ta) = analytic {
                // Only near-grazing rays may be missed by marching.
                let closest = (origin + dir * (-b)).length();
                assert!(
                    closest > 1.0 - 10.0 * params.hit_eps || ta > params.t_max,
                    "non-grazing analytic hit missed: closest {closest}"
                );
            }
        }
        assert!(traced_hits > 1000, "fixture degenerate: {traced_hits} hits");
    }

    #[test]
    fn step_exhaustion_is_a_miss() {
        let s = unit_sphere();
        let mut params = TraceParams::for_scene(&s);
        params.max_steps = 8;
        // Grazing ray: infinite-loop bait, must terminate as a miss.
        let ray = Ray::new(vec3(-3.0, 0.9995, 0.0), vec3(1.0, 0.0, 0.0));
        assert!(s.sphere_trace(&ray, 0.0, &params).is_none());
    }

    #[test]
    fn projection_lands_on_sphere() {
        let s = unit_sphere();
        let sample = s.project_to_surface(vec3(1.5, 0.0, 0.0), 16).unwrap();
        assert!((sample.position - vec3(1.0, 0.0, 0.0)).length() < 1e-3);
        assert!((sample.normal - vec3(1.0, 0.0, 0.0)).length() < 1e-3);
        // Fixed point: a point already on the surface stays put.
        let p0 = vec3(0.0, 1.0, 0.0);
        let back = s.project_to_surface(p0, 16).unwrap();
        assert!((back.position - p0).length() < 2e-3);
    }

    #[test]
    fn parser_rejects_malformed_scenes() {
        let cases: &[(&str, &str)] = &[
            ("sphere c=0,0,0 r=1\n", "missing a bounds"),
            ("sphere c=0,0,0\nbounds min=-1,-1,-1 max=1,1,1\n", "missing r="),
            ("sphere c=0,0,0 r=-1\nbounds min=-1,-1,-1 max=1,1,1\n", "positive"),
            ("blob c=0,0,0 r=1\nbounds min=-1,-1,-1 max=1,1,1\n", "unknown directive"),
            ("sphere id=a c=0,0,0 r=1\nop union a=a b=z\nbounds min=-1,-1,-1 max=1,1,1\n", "unknown node id"),
            ("sphere id=a c=0,0,0 r=1\nsphere id=a c=1,0,0 r=1\nbounds min=-1,-1,-1 max=1,1,1\n", "duplicate id"),
            ("sphere c=0,0,nan r=1\nbounds min=-1,-1,-1 max=1,1,1\n", "finite"),
            ("sphere c=0,0,0 r=1\nbounds min=1,1,1 max=-1,-1,-1\n", "positive extent"),
        ];
        for (text, needle) in cases {
            let err = parse_sdf_scene(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
        }
    }

    #[test]
    fn parser_reports_line_numbers() {
        let err = parse_sdf_scene("sphere c=0,0,0 r=1\nwat\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn root_and_comments_are_honored() {
        let text = "# two spheres, root forced to the first\n\
                    sphere id=a c=0,0,0 r=1   # inline comment\n\
                    sphere id=b c=9,0,0 r=1\n\
                    bounds min=-2,-2,-2 max=11,2,2\n\
                    root a\n";
        let s = parse_sdf_scene(text).unwrap();
        assert_eq!(s.eval(vec3(2.0, 0.0, 0.0)), 1.0);
        // Root = a only; sphere b is not part of the field.
        assert_eq!(s.eval(vec3(9.0, 0.0, 0.0)), 8.0);
    }

    #[test]
    fn format_round_trips() {
        let text = "plane id=g n=0,1,0 d=-1\nsphere id=s c=0,0,0 r=1\nop id=u smooth_union a=g b=s\nbounds min=-4,-2,-4 max=4,2,4\n";
        let scene = parse_sdf_scene(text).unwrap();
        let reparsed = parse_sdf_scene(&format_sdf_scene(&scene)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = vec3(
                rng.gen::<f64>() * 8.0 - 4.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 8.0 - 4.0,
            );
            assert_eq!(scene.eval(p), reparsed.eval(p));
        }
    }

    #[test]
    fn default_smooth_k_scales_with_bounds() {
        let text = "sphere id=a c=0,0,0 r=1\nsphere id=b c=1,0,0 r=1\nop smooth_union a=a b=b\nbounds min=-2,-2,-2 max=2,2,2\n";
        let scene = parse_sdf_scene(text).unwrap();
        let diag = scene.bounds.diagonal();
        match scene.nodes[2] {
            SdfNode::SmoothUnion { k, .. } => assert!((k - 0.1 * diag).abs() < 1e-12),
            _ => panic!("expected smooth union"),
        }
    }
}
