//! Line-oriented scene file format.
//!
//! ```text
//! # comment
//! [frequency]
//! f_center half_band n_points
//! [bs]
//! x y
//! [ue_grid]
//! x0 y0 x1 y1 nx ny
//! [wall]            (repeatable; one segment per line)
//! x0 y0 x1 y1
//! [ris]             (one element per line; order defines the bit index)
//! x y
//! [sense]
//! i j k ...
//! [object]          (repeatable; one block per object)
//! f_res chi gamma_l
//! offset dx dy
//! phase s           (optional, fraction of the loop)
//! [trajectory]      (closed polyline vertices)
//! x y
//! ```
//!
//! Values may also follow the section header on the same line.
//! [`write_scene`] emits a canonical form that [`parse_scene`] reads back
//! exactly (floats use the shortest round-trip representation).

use std::fmt::Write as _;

use crate::wavesim::{DipoleProperties, FrequencyGrid, Point};

use super::{ObjectSpec, SceneError, SceneTemplate, UeGrid, Wall};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Frequency,
    Bs,
    UeGrid,
    Wall,
    Ris,
    Sense,
    Object,
    Trajectory,
}

fn section_name(s: &str) -> Option<Section> {
    Some(match s {
        "frequency" => Section::Frequency,
        "bs" => Section::Bs,
        "ue_grid" => Section::UeGrid,
        "wall" => Section::Wall,
        "ris" => Section::Ris,
        "sense" => Section::Sense,
        "object" => Section::Object,
        "trajectory" => Section::Trajectory,
        _ => return None,
    })
}

fn perr(line: usize, msg: impl Into<String>) -> SceneError {
    SceneError::Parse {
        line,
        msg: msg.into(),
    }
}

fn nums(line: usize, fields: &[&str], n: usize, what: &str) -> Result<Vec<f64>, SceneError> {
    if fields.len() != n {
        return Err(perr(
            line,
            format!("{what} expects {n} numbers, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("{what}: '{f}' is not a finite number")))
        })
        .collect()
}

fn count(line: usize, s: &str, what: &str) -> Result<usize, SceneError> {
    s.parse::<usize>()
        .map_err(|_| perr(line, format!("{what}: '{s}' is not a non-negative integer")))
}

#[derive(Default)]
struct Partial {
    grid: Option<FrequencyGrid>,
    bs: Option<Point>,
    ue_grid: Option<UeGrid>,
    walls: Vec<Wall>,
    seen_wall: bool,
    ris: Vec<Point>,
    seen_ris: bool,
    sense: Option<Vec<usize>>,
    objects: Vec<(usize, Option<DipoleProperties>, Vec<Point>, Option<f64>)>,
    trajectory: Vec<Point>,
    seen_trajectory: bool,
}

pub fn parse_scene(text: &str) -> Result<SceneTemplate, SceneError> {
    let mut part = Partial::default();
    let mut current: Option<Section> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut rest = content;
        if let Some(stripped) = content.strip_prefix('[') {
            let close = stripped
                .find(']')
                .ok_or_else(|| perr(line, "unterminated section header"))?;
            let name = &stripped[..close];
            let sec = section_name(name)
                .ok_or_else(|| perr(line, format!("unknown section [{name}]")))?;
            match sec {
                Section::Wall => part.seen_wall = true,
                Section::Ris => part.seen_ris = true,
                Section::Trajectory => part.seen_trajectory = true,
                Section::Object => part.objects.push((line, None, Vec::new(), None)),
                _ => {}
            }
            current = Some(sec);
            rest = stripped[close + 1..].trim();
            if rest.is_empty() {
                continue;
            }
        }
        let sec = current.ok_or_else(|| perr(line, "entity line before any section header"))?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        match sec {
            Section::Frequency => {
                if part.grid.is_some() {
                    return Err(perr(line, "duplicate frequency line"));
                }
                if fields.len() != 3 {
                    return Err(perr(line, "frequency expects f_center half_band n_points"));
                }
                let v = nums(line, &fields[..2], 2, "frequency")?;
                let n = count(line, fields[2], "n_points")?;
                part.grid = Some(FrequencyGrid {
                    f_center: v[0],
                    half_band: v[1],
                    n_points: n,
                });
            }
            Section::Bs => {
                if part.bs.is_some() {
                    return Err(perr(line, "duplicate bs line"));
                }
                let v = nums(line, &fields, 2, "bs")?;
                part.bs = Some(Point::new(v[0], v[1]));
            }
            Section::UeGrid => {
                if part.ue_grid.is_some() {
                    return Err(perr(line, "duplicate ue_grid line"));
                }
                if fields.len() != 6 {
                    return Err(perr(line, "ue_grid expects x0 y0 x1 y1 nx ny"));
                }
                let v = nums(line, &fields[..4], 4, "ue_grid")?;
                part.ue_grid = Some(UeGrid {
                    x0: v[0],
                    y0: v[1],
                    x1: v[2],
                    y1: v[3],
                    nx: count(line, fields[4], "nx")?,
                    ny: count(line, fields[5], "ny")?,
                });
            }
            Section::Wall => {
                let v = nums(line, &fields, 4, "wall")?;
                part.walls.push(Wall {
                    a: Point::new(v[0], v[1]),
                    b: Point::new(v[2], v[3]),
                });
            }
            Section::Ris => {
                let v = nums(line, &fields, 2, "ris")?;
                part.ris.push(Point::new(v[0], v[1]));
            }
            Section::Sense => {
                let list = part.sense.get_or_insert_with(Vec::new);
                for f in fields {
                    list.push(count(line, f, "sense index")?);
                }
            }
            Section::Object => {
                let obj = part.objects.last_mut().expect("object section opened");
                match fields[0] {
                    "offset" => {
                        let v = nums(line, &fields[1..], 2, "offset")?;
                        obj.2.push(Point::new(v[0], v[1]));
                    }
                    "phase" => {
                        let v = nums(line, &fields[1..], 1, "phase")?;
                        obj.3 = Some(v[0]);
                    }
                    _ => {
                        if obj.1.is_some() {
                            return Err(perr(line, "object properties given twice"));
                        }
                        let v = nums(line, &fields, 3, "object properties")?;
                        obj.1 = Some(DipoleProperties::new(v[0], v[1], v[2]));
                    }
                }
            }
            Section::Trajectory => {
                let v = nums(line, &fields, 2, "trajectory vertex")?;
                part.trajectory.push(Point::new(v[0], v[1]));
            }
        }
    }

    let grid = part.grid.ok_or(SceneError::MissingSection("frequency"))?;
    let bs = part.bs.ok_or(SceneError::MissingSection("bs"))?;
    let ue_grid = part.ue_grid.ok_or(SceneError::MissingSection("ue_grid"))?;
    if !part.seen_wall {
        return Err(SceneError::MissingSection("wall"));
    }
    if !part.seen_ris {
        return Err(SceneError::MissingSection("ris"));
    }
    let sense = part.sense.ok_or(SceneError::MissingSection("sense"))?;
    if !part.objects.is_empty() && !part.seen_trajectory {
        return Err(SceneError::MissingSection("trajectory"));
    }
    let objects = part
        .objects
        .into_iter()
        .map(|(line, props, offsets, phase)| {
            let props =
                props.ok_or_else(|| perr(line, "object block without f_res chi gamma_l line"))?;
            Ok(ObjectSpec {
                props,
                offsets,
                phase,
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;

    let tpl = SceneTemplate {
        grid,
        bs,
        ue_grid,
        walls: part.walls,
        ris: part.ris,
        sense,
        objects,
        trajectory: part.trajectory,
    };
    tpl.validate()?;
    Ok(tpl)
}

pub fn write_scene(tpl: &SceneTemplate) -> String {
    let mut s = String::new();
    let g = &tpl.grid;
    let _ = writeln!(s, "# ris-lab scene");
    let _ = writeln!(
        s,
        "[frequency]\n{} {} {}",
        g.f_center, g.half_band, g.n_points
    );
    let _ = writeln!(s, "[bs]\n{} {}", tpl.bs.x, tpl.bs.y);
    let u = &tpl.ue_grid;
    let _ = writeln!(
        s,
        "[ue_grid]\n{} {} {} {} {} {}",
        u.x0, u.y0, u.x1, u.y1, u.nx, u.ny
    );
    for w in &tpl.walls {
        let _ = writeln!(s, "[wall]\n{} {} {} {}", w.a.x, w.a.y, w.b.x, w.b.y);
    }
    let _ = writeln!(s, "[ris]");
    for p in &tpl.ris {
        let _ = writeln!(s, "{} {}", p.x, p.y);
    }
    let sense: Vec<String> = tpl.sense.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(s, "[sense]\n{}", sense.join(" "));
    for o in &tpl.objects {
        let _ = writeln!(
            s,
            "[object]\n{} {} {}",
            o.props.f_res, o.props.chi, o.props.gamma_l
        );
        for off in &o.offsets {
            let _ = writeln!(s, "offset {} {}", off.x, off.y);
        }
        if let Some(ph) = o.phase {
            let _ = writeln!(s, "phase {ph}");
        }
    }
    if !tpl.trajectory.is_empty() {
        let _ = writeln!(s, "[trajectory]");
        for p in &tpl.trajectory {
            let _ = writeln!(s, "{} {}", p.x, p.y);
        }
    }
    s
}
