use std::fmt::Write as _;

use super::{MotionClip, TARGET_FRAME_RATE};
use crate::error::{Error, Result};
use crate::math::{from_euler, to_euler_zyx, Axis, Quat, Vec3};
use crate::pose::RootState;
use crate::skeleton::{Joint, Skeleton};

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    motion_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut motion_line = 0;
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed == "MOTION" {
                motion_line = i + 1;
                break;
            }
            for t in trimmed.split_whitespace() {
                items.push((t, i + 1));
            }
        }
        Tokens {
            items,
            pos: 0,
            motion_line,
        }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |t| t.1)
    }

    fn next(&mut self) -> Result<(&'a str, usize)> {
        let t = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| perr(self.last_line(), "unexpected end of hierarchy"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        let (t, line) = self.next()?;
        if t != word {
            return Err(perr(line, format!("expected `{word}`, found `{t}`")));
        }
        Ok(line)
    }

    fn number(&mut self) -> Result<f64> {
        let (t, line) = self.next()?;
        t.parse()
            .map_err(|_| perr(line, format!("expected a number, found `{t}`")))
    }
}

/// Channel layout of one joint: indices of X/Y/Z position channels within
/// the joint's block (root only) and the rotation order.
struct Channels {
    count: usize,
    position: Option<[usize; 3]>,
    rotation: [(Axis, usize); 3],
}

struct RawJoint {
    name: String,
    parent: Option<usize>,
    offset: Vec3,
    channels: Channels,
}

fn parse_channels(tok: &mut Tokens, is_root: bool) -> Result<Channels> {
    let line = tok.expect("CHANNELS")?;
    let n = tok.number()?;
    if n.fract() != 0.0 || !(0.0..=6.0).contains(&n) {
        return Err(perr(line, format!("invalid channel count {n}")));
    }
    let n = n as usize;
    let mut pos = [None; 3];
    let mut rot = Vec::new();
    for i in 0..n {
        let (c, l) = tok.next()?;
        match c {
            "Xposition" => pos[0] = Some(i),
            "Yposition" => pos[1] = Some(i),
            "Zposition" => pos[2] = Some(i),
            "Xrotation" => rot.push((Axis::X, i)),
            "Yrotation" => rot.push((Axis::Y, i)),
            "Zrotation" => rot.push((Axis::Z, i)),
            other => return Err(perr(l, format!("unknown channel `{other}`"))),
        }
    }
    let axes: Vec<Axis> = rot.iter().map(|r| r.0).collect();
    let distinct = axes.len() == 3 && axes[0] != axes[1] && axes[1] != axes[2] && axes[0] != axes[2];
    if !distinct {
        return Err(perr(line, "unsupported rotation order: need one channel per axis"));
    }
    let position = match pos {
        [Some(x), Some(y), Some(z)] if is_root => Some([x, y, z]),
        [None, None, None] => None,
        _ if !is_root => return Err(perr(line, "position channels are only supported on the root")),
        _ => return Err(perr(line, "root needs all three position channels or none")),
    };
    Ok(Channels {
        count: n,
        position,
        rotation: [rot[0], rot[1], rot[2]],
    })
}

fn parse_offset(tok: &mut Tokens) -> Result<Vec3> {
    tok.expect("OFFSET")?;
    Ok(Vec3::new(tok.number()?, tok.number()?, tok.number()?))
}

fn parse_joint(tok: &mut Tokens, parent: Option<usize>, out: &mut Vec<RawJoint>) -> Result<()> {
    let (name, _) = tok.next()?;
    tok.expect("{")?;
    let offset = parse_offset(tok)?;
    let channels = parse_channels(tok, parent.is_none())?;
    let me = out.len();
    out.push(RawJoint {
        name: name.to_string(),
        parent,
        offset,
        channels,
    });
    loop {
        let (t, line) = tok.next()?;
        match t {
            "JOINT" => parse_joint(tok, Some(me), out)?,
            "End" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                parse_offset(tok)?;
                tok.expect("}")?;
            }
            "}" => return Ok(()),
            other => return Err(perr(line, format!("unexpected `{other}` in joint `{name}`"))),
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Parses BVH text into a clip at [`TARGET_FRAME_RATE`].
pub fn parse_bvh(text: &str) -> Result<MotionClip> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let mut raw = Vec::new();
    parse_joint(&mut tok, None, &mut raw)?;
    if tok.pos != tok.items.len() {
        let (t, line) = tok.items[tok.pos];
        return Err(perr(line, format!("unexpected `{t}` after hierarchy")));
    }
    if tok.motion_line == 0 {
        return Err(perr(tok.last_line(), "missing MOTION section"));
    }
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .skip(tok.motion_line)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let header = |idx: usize, key: &str| -> Result<f64> {
        let (line, l) = lines
            .get(idx)
            .copied()
            .ok_or_else(|| perr(tok.motion_line, format!("missing `{key}`")))?;
        let rest = l
            .strip_prefix(key)
            .ok_or_else(|| perr(line, format!("expected `{key}`")))?;
        rest.trim()
            .parse()
            .map_err(|_| perr(line, format!("invalid value for `{key}`")))
    };
    let frames = header(0, "Frames:")?;
    let frame_time = header(1, "Frame Time:")?;
    if frames.fract() != 0.0 || frames < 1.0 {
        return Err(perr(lines[0].0, "frame count must be a positive integer"));
    }
    if !(frame_time > 0.0) {
        return Err(perr(lines[1].0, "frame time must be positive"));
    }
    let frames = frames as usize;
    let width: usize = raw.iter().map(|j| j.channels.count).sum();
    let rows = &lines[2..];
    if rows.len() != frames {
        let line = rows.last().map_or(lines[1].0, |r| r.0);
        return Err(perr(line, format!("expected {frames} motion rows, found {}", rows.len())));
    }

    let bone_lengths: Vec<f64> = raw.iter().skip(1).map(|j| j.offset.norm()).collect();
    let scale = if median(bone_lengths) > 10.0 {
        log::warn!("BVH offsets look like centimeters; scaling to meters");
        0.01
    } else {
        1.0
    };

    let mut roots = Vec::with_capacity(frames);
    let mut locals = Vec::with_capacity(frames);
    for (line, row) in rows {
        let values = row
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| perr(*line, format!("invalid number `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(perr(*line, format!("channel-count mismatch: expected {width} values, found {}", values.len())));
        }
        let mut at = 0;
        let mut rots = Vec::with_capacity(raw.len());
        let mut root_pos = Vec3::ZERO;
        for j in &raw {
            let block = &values[at..at + j.channels.count];
            at += j.channels.count;
            let order = j.channels.rotation.map(|r| r.0);
            let angles = j.channels.rotation.map(|r| block[r.1]);
            rots.push(from_euler(order, angles).normalize().map_err(|e| perr(*line, e.to_string()))?);
            if let Some([x, y, z]) = j.channels.position {
                root_pos = Vec3::new(block[x], block[y], block[z]);
            }
        }
        roots.push(RootState::new(rots[0], (raw[0].offset + root_pos) * scale));
        locals.push(rots);
    }

    let joints = raw
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            parent: j.parent,
            offset: j.offset * scale,
        })
        .collect();
    let skeleton = Skeleton::from_joints(joints)?;
    let rate = 1.0 / frame_time;
    // Writers round the frame time to six decimals, so 60 Hz arrives as 59.9988 Hz.
    let (roots, locals) = if (rate / TARGET_FRAME_RATE - 1.0).abs() > 1e-4 {
        resample(&skeleton, &roots, &locals, rate)
    } else {
        (roots, locals)
    };
    MotionClip::from_global(skeleton, TARGET_FRAME_RATE, &roots, &locals)
}

/// Resamples global root placements and root-space rotations to the target
/// rate by slerp/lerp, keeping the clip duration.
fn resample(
    sk: &Skeleton,
    roots: &[RootState],
    locals: &[Vec<Quat>],
    rate: f64,
) -> (Vec<RootState>, Vec<Vec<Quat>>) {
    let j = sk.joint_count();
    let root_space: Vec<Vec<Quat>> = locals
        .iter()
        .map(|l| {
            let mut rs = vec![Quat::IDENTITY; j];
            for k in 1..j {
                rs[k] = rs[sk.parent(k).unwrap()] * l[k];
            }
            rs
        })
        .collect();
    let duration = (roots.len() - 1) as f64 / rate;
    let count = (duration * TARGET_FRAME_RATE + 1e-6).floor() as usize + 1;
    let mut out_roots = Vec::with_capacity(count);
    let mut out_locals = Vec::with_capacity(count);
    for k in 0..count {
        let src = k as f64 / TARGET_FRAME_RATE * rate;
        let i0 = (src.floor() as usize).min(roots.len() - 1);
        let i1 = (i0 + 1).min(roots.len() - 1);
        let a = src - i0 as f64;
        out_roots.push(RootState::new(
            roots[i0].world_rotation.slerp(roots[i1].world_rotation, a),
            roots[i0].world_position.lerp(roots[i1].world_position, a),
        ));
        let rs: Vec<Quat> = (0..j)
            .map(|q| root_space[i0][q].slerp(root_space[i1][q], a))
            .collect();
        let mut l = vec![Quat::IDENTITY; j];
        for q in 1..j {
            l[q] = rs[sk.parent(q).unwrap()].conjugate() * rs[q];
        }
        out_locals.push(l);
    }
    (out_roots, out_locals)
}

fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn write_joint(out: &mut String, sk: &Skeleton, children: &[Vec<usize>], j: usize, depth: usize) {
    let pad = "\t".repeat(depth);
    let joint = &sk.joints()[j];
    let o = joint.offset;
    if j == 0 {
        let _ = writeln!(out, "ROOT {}", joint.name);
    } else {
        let _ = writeln!(out, "{pad}JOINT {}", joint.name);
    }
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}\tOFFSET {} {} {}", fmt6(o.x), fmt6(o.y), fmt6(o.z));
    if j == 0 {
        let _ = writeln!(out, "{pad}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation");
    } else {
        let _ = writeln!(out, "{pad}\tCHANNELS 3 Zrotation Yrotation Xrotation");
    }
    for &c in &children[j] {
        write_joint(out, sk, children, c, depth + 1);
    }
    if children[j].is_empty() {
        let _ = writeln!(out, "{pad}\tEnd Site");
        let _ = writeln!(out, "{pad}\t{{");
        let _ = writeln!(out, "{pad}\t\tOFFSET 0.000000 0.000000 0.000000");
        let _ = writeln!(out, "{pad}\t}}");
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Serializes a clip with ZYX Euler channels and six-decimal numbers.
/// Joints are written depth-first, which preserves their order for skeletons
/// whose indices already follow a depth-first traversal.
pub fn write_bvh(clip: &MotionClip) -> Result<String> {
    let sk = &clip.skeleton;
    let children = sk.children();
    let mut order = Vec::with_capacity(sk.joint_count());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, sk, &children, 0, 0);
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", clip.len());
    let _ = writeln!(out, "Frame Time: {}", fmt6(1.0 / clip.frame_rate));
    let roots = clip.root_states()?;
    let root_offset = sk.joints()[0].offset;
    for (t, root) in roots.iter().enumerate() {
        let locals = clip.local_rotations(t, root.world_rotation);
        let p = root.world_position - root_offset;
        let mut row: Vec<String> = vec![fmt6(p.x), fmt6(p.y), fmt6(p.z)];
        for &j in &order {
            row.extend(to_euler_zyx(locals[j]).iter().map(|a| fmt6(*a)));
        }
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}
