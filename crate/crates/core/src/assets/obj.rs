//! OBJ ingestion subset: `v`/`vn`/`vt`, triangular `f v/vt/vn`, `g` group
//! names and `usemtl N` where the material index is the trailing integer of
//! the material name. Groups become contiguous face runs in encounter order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{vec2, vec3, Vec2, Vec3};

use super::mesh::{Group, TriangleMesh};

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut uvs: Vec<Vec2> = Vec::new();
    let mut triangles: Vec<[[u32; 3]; 3]> = Vec::new();
    let mut groups: Vec<Group> = Vec::new();

    let mut cur_name = String::from("default");
    let mut cur_material: u32 = 0;
    let mut run_start = 0usize;

    let flush = |groups: &mut Vec<Group>,
                     name: &str,
                     material: u32,
                     start: usize,
                     end: usize| {
        if end > start {
            groups.push(Group {
                name: name.to_string(),
                material_index: material,
                face_start: start,
                face_count: end - start,
            });
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap();
        let ctx = || format!("line {}", lineno + 1);
        match keyword {
            "v" => vertices.push(parse_vec3(path, &ctx(), &mut parts)?),
            "vn" => normals.push(parse_vec3(path, &ctx(), &mut parts)?),
            "vt" => {
                let u = parse_f64(path, &ctx(), parts.next())?;
                let v = parse_f64(path, &ctx(), parts.next())?;
                uvs.push(vec2(u, v));
            }
            "g" | "o" => {
                flush(&mut groups, &cur_name, cur_material, run_start, triangles.len());
                run_start = triangles.len();
                cur_name = parts.next().unwrap_or("default").to_string();
            }
            "usemtl" => {
                flush(&mut groups, &cur_name, cur_material, run_start, triangles.len());
                run_start = triangles.len();
                let name = parts.next().unwrap_or("");
                cur_material = trailing_int(name).ok_or_else(|| {
                    Error::parse(
                        path,
                        ctx(),
                        format!("usemtl `{name}` has no trailing material index"),
                    )
                })?;
            }
            "f" => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    return Err(Error::parse(
                        path,
                        ctx(),
                        format!("only triangular faces supported, got {} corners", corners.len()),
                    ));
                }
                let mut tri = [[0u32; 3]; 3];
                for (ci, corner) in corners.iter().enumerate() {
                    tri[ci] = parse_corner(path, &ctx(), corner)?;
                }
                triangles.push(tri);
            }
            // mtllib, s and others are ignored
            _ => {}
        }
    }
    flush(&mut groups, &cur_name, cur_material, run_start, triangles.len());

    // meshes missing normals or uvs get a single default attribute
    if normals.is_empty() {
        normals.push(vec3(0.0, 0.0, 1.0));
    }
    if uvs.is_empty() {
        uvs.push(vec2(0.0, 0.0));
    }

    let mesh = TriangleMesh {
        vertices,
        normals,
        uvs,
        triangles,
        groups,
    };
    mesh.validate()
        .map_err(|e| Error::parse(path, "obj", e.to_string()))?;
    Ok(mesh)
}

/// `v/vt/vn`, `v//vn`, `v/vt` or bare `v`; 1-based per OBJ.
fn parse_corner(path: &Path, ctx: &str, corner: &str) -> Result<[u32; 3]> {
    let fields: Vec<&str> = corner.split('/').collect();
    let idx = |s: &str| -> Result<u32> {
        let v: i64 = s
            .parse()
            .map_err(|_| Error::parse(path, ctx, format!("bad index `{s}`")))?;
        if v < 1 {
            return Err(Error::parse(path, ctx, format!("index `{s}` must be >= 1")));
        }
        Ok((v - 1) as u32)
    };
    match fields.as_slice() {
        [v] => Ok([idx(v)?, 0, 0]),
        [v, t] => Ok([idx(v)?, 0, idx(t)?]),
        [v, "", n] => Ok([idx(v)?, idx(n)?, 0]),
        [v, t, n] => Ok([idx(v)?, idx(n)?, idx(t)?]),
        _ => Err(Error::parse(path, ctx, format!("bad face corner `{corner}`"))),
    }
}

fn parse_vec3<'a>(
    path: &Path,
    ctx: &str,
    parts: &mut impl Iterator<Item = &'a str>,
) -> Result<Vec3> {
    let x = parse_f64(path, ctx, parts.next())?;
    let y = parse_f64(path, ctx, parts.next())?;
    let z = parse_f64(path, ctx, parts.next())?;
    Ok(vec3(x, y, z))
}

fn parse_f64(path: &Path, ctx: &str, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(path, ctx, "missing number"))?;
    tok.parse()
        .map_err(|_| Error::parse(path, ctx, format!("bad number `{tok}`")))
}

fn trailing_int(name: &str) -> Option<u32> {
    let digits: String = name
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let digits: String = digits.chars().rev().collect();
    digits.parse().ok()
}
