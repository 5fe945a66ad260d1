//! URDF-subset reading and canonical writing.
//!
//! ```text
//! <robot name="...">
//!   <link name="link_<id>">
//!     <inertial>
//!       <mass value="r"/> <inertia value="r"/> <damping value="r"/>
//!     </inertial>
//!     <visual>                                   (zero or more)
//!       <origin xyz="r r r"/>
//!       <geometry><box size="r r r"/></geometry>
//!     </visual>
//!     <points count="n">r r r ...</points>
//!   </link>
//!   <joint name="..." type="revolute|prismatic|fixed">
//!     <parent link="link_<id>"/> <child link="link_<id>"/>
//!     <origin xyz="r r r" rotvec="r r r"/>
//!     <axis xyz="r r r"/>
//!     <limit lower="r" upper="r"/>
//!   </joint>
//! </robot>
//! ```

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{ArticulatedModel, BoxPrimitive, Joint, JointType, Link, LinkId, PhysicalAttrs, SceneError, AXIS_TOL};

/// Round to 9 significant digits, the precision of emitted documents.
pub fn round9(x: f64) -> f64 {
    let r: f64 = fmt_real(x).parse().expect("formatted real parses");
    r
}

fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.8e}")
}

fn fmt3(v: &[f64; 3]) -> String {
    format!("{} {} {}", fmt_real(v[0]), fmt_real(v[1]), fmt_real(v[2]))
}

fn round3(v: [f64; 3]) -> [f64; 3] {
    v.map(round9)
}

/// Deterministic form: links by id, joints by child id, reals rounded to 9
/// significant digits, each axis with its first nonzero component positive.
pub fn canonicalize(model: &ArticulatedModel) -> ArticulatedModel {
    let mut links = model.links.clone();
    links.sort_by_key(|l| l.id);
    for l in &mut links {
        l.attrs = PhysicalAttrs {
            mass: round9(l.attrs.mass),
            damping: round9(l.attrs.damping),
            inertia: round9(l.attrs.inertia),
        };
        for p in &mut l.points {
            *p = round3(*p);
        }
        for b in &mut l.boxes {
            b.center = round3(b.center);
            b.size = round3(b.size);
        }
    }
    let mut joints = model.joints.clone();
    joints.sort_by_key(|j| j.child);
    for j in &mut joints {
        j.axis = round3(j.axis);
        j.origin = round3(j.origin);
        j.orientation = round3(j.orientation);
        j.limits = j.limits.map(round9);
        let first = j.axis.iter().copied().find(|&a| a != 0.0).unwrap_or(1.0);
        if first < 0.0 {
            j.axis = j.axis.map(|a| -a);
            j.limits = [-j.limits[1], -j.limits[0]];
        }
        // -0 prints as 0 and must compare equal after a round trip
        j.limits = j.limits.map(|x| x + 0.0);
    }
    ArticulatedModel {
        name: model.name.clone(),
        links,
        joints,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Canonical document for `model`.
pub fn emit_urdf(model: &ArticulatedModel) -> String {
    let m = canonicalize(model);
    let mut out = String::new();
    let _ = writeln!(out, "<robot name=\"{}\">", escape(&m.name));
    for l in &m.links {
        let _ = writeln!(out, "  <link name=\"link_{}\">", l.id);
        out.push_str("    <inertial>\n");
        let _ = writeln!(out, "      <mass value=\"{}\"/>", fmt_real(l.attrs.mass));
        let _ = writeln!(out, "      <inertia value=\"{}\"/>", fmt_real(l.attrs.inertia));
        let _ = writeln!(out, "      <damping value=\"{}\"/>", fmt_real(l.attrs.damping));
        out.push_str("    </inertial>\n");
        for b in &l.boxes {
            out.push_str("    <visual>\n");
            let _ = writeln!(out, "      <origin xyz=\"{}\"/>", fmt3(&b.center));
            let _ = writeln!(out, "      <geometry><box size=\"{}\"/></geometry>", fmt3(&b.size));
            out.push_str("    </visual>\n");
        }
        let _ = write!(out, "    <points count=\"{}\">", l.points.len());
        for p in &l.points {
            let _ = write!(out, "\n      {}", fmt3(p));
        }
        out.push_str("\n    </points>\n");
        out.push_str("  </link>\n");
    }
    for j in &m.joints {
        let _ = writeln!(out, "  <joint name=\"joint_{}\" type=\"{}\">", j.child, j.kind.name());
        let _ = writeln!(out, "    <parent link=\"link_{}\"/>", j.parent);
        let _ = writeln!(out, "    <child link=\"link_{}\"/>", j.child);
        let _ = writeln!(
            out,
            "    <origin xyz=\"{}\" rotvec=\"{}\"/>",
            fmt3(&j.origin),
            fmt3(&j.orientation)
        );
        let _ = writeln!(out, "    <axis xyz=\"{}\"/>", fmt3(&j.axis));
        let _ = writeln!(
            out,
            "    <limit lower=\"{}\" upper=\"{}\"/>",
            fmt_real(j.limits[0]),
            fmt_real(j.limits[1])
        );
        out.push_str("  </joint>\n");
    }
    out.push_str("</robot>\n");
    out
}

struct Ctx<'a> {
    doc: &'a Document<'a>,
}

impl<'a> Ctx<'a> {
    fn line(&self, n: Node) -> u32 {
        self.doc.text_pos_at(n.range().start).row
    }

    fn err(&self, n: Node, msg: impl Into<String>) -> SceneError {
        SceneError::Urdf {
            line: self.line(n),
            message: msg.into(),
        }
    }

    fn attr<'n>(&self, n: Node<'n, 'n>, name: &str) -> Result<&'n str, SceneError> {
        n.attribute(name)
            .ok_or_else(|| self.err(n, format!("<{}> missing attribute '{name}'", n.tag_name().name())))
    }

    fn real(&self, n: Node, name: &str) -> Result<f64, SceneError> {
        let s = self.attr(n, name)?;
        parse_real(s).ok_or_else(|| self.err(n, format!("attribute '{name}': bad number '{s}'")))
    }

    fn vec3(&self, n: Node, name: &str) -> Result<[f64; 3], SceneError> {
        let s = self.attr(n, name)?;
        let v: Vec<f64> = s
            .split_whitespace()
            .map(parse_real)
            .collect::<Option<_>>()
            .ok_or_else(|| self.err(n, format!("attribute '{name}': bad number in '{s}'")))?;
        <[f64; 3]>::try_from(v).map_err(|v| self.err(n, format!("attribute '{name}': expected 3 reals, got {}", v.len())))
    }

    fn link_ref(&self, n: Node, name: &str) -> Result<LinkId, SceneError> {
        let s = self.attr(n, name)?;
        parse_link_name(s).ok_or_else(|| self.err(n, format!("bad link reference '{s}'")))
    }

    fn elements<'n>(&self, n: Node<'n, 'n>) -> Result<Vec<Node<'n, 'n>>, SceneError> {
        let mut out = Vec::new();
        for c in n.children() {
            if c.is_element() {
                out.push(c);
            } else if c.is_text() && !c.text().unwrap_or("").trim().is_empty() {
                return Err(self.err(c, format!("unexpected text inside <{}>", n.tag_name().name())));
            }
        }
        Ok(out)
    }

    fn unknown(&self, n: Node, parent: &str) -> SceneError {
        self.err(n, format!("unknown element <{}> in <{parent}>", n.tag_name().name()))
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_link_name(s: &str) -> Option<LinkId> {
    s.strip_prefix("link_")?.parse().ok().filter(|&id: &LinkId| id >= 1)
}

/// Parse a URDF-subset document. Every rejection names the offending line.
pub fn parse_urdf(text: &str) -> Result<ArticulatedModel, SceneError> {
    let doc = Document::parse(text).map_err(|e| SceneError::Urdf {
        line: e.pos().row,
        message: format!("malformed markup: {e}"),
    })?;
    let cx = Ctx { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "robot" {
        return Err(cx.err(root, format!("expected <robot>, found <{}>", root.tag_name().name())));
    }
    let name = cx.attr(root, "name")?.to_string();
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for n in cx.elements(root)? {
        match n.tag_name().name() {
            "link" => links.push(parse_link(&cx, n)?),
            "joint" => joints.push(parse_joint(&cx, n)?),
            _ => return Err(cx.unknown(n, "robot")),
        }
    }
    ArticulatedModel::new(name, links, joints)
}

fn parse_link(cx: &Ctx, n: Node) -> Result<Link, SceneError> {
    let id = cx.link_ref(n, "name")?;
    let mut attrs = None;
    let mut boxes = Vec::new();
    let mut points = None;
    for c in cx.elements(n)? {
        match c.tag_name().name() {
            "inertial" => {
                let (mut mass, mut inertia, mut damping) = (None, None, None);
                for e in cx.elements(c)? {
                    let slot = match e.tag_name().name() {
                        "mass" => &mut mass,
                        "inertia" => &mut inertia,
                        "damping" => &mut damping,
                        _ => return Err(cx.unknown(e, "inertial")),
                    };
                    *slot = Some(cx.real(e, "value")?);
                }
                let missing = |what: &str| cx.err(c, format!("<inertial> missing <{what}>"));
                attrs = Some(PhysicalAttrs {
                    mass: mass.ok_or_else(|| missing("mass"))?,
                    inertia: inertia.ok_or_else(|| missing("inertia"))?,
                    damping: damping.ok_or_else(|| missing("damping"))?,
                });
            }
            "visual" => {
                let (mut center, mut size) = (None, None);
                for e in cx.elements(c)? {
                    match e.tag_name().name() {
                        "origin" => center = Some(cx.vec3(e, "xyz")?),
                        "geometry" => {
                            let inner = cx.elements(e)?;
                            match inner.as_slice() {
                                [b] if b.tag_name().name() == "box" => size = Some(cx.vec3(*b, "size")?),
                                [b] => return Err(cx.unknown(*b, "geometry")),
                                _ => return Err(cx.err(e, "<geometry> must hold exactly one <box>")),
                            }
                        }
                        _ => return Err(cx.unknown(e, "visual")),
                    }
                }
                boxes.push(BoxPrimitive {
                    center: center.unwrap_or([0.0; 3]),
                    size: size.ok_or_else(|| cx.err(c, "<visual> missing <geometry>"))?,
                });
            }
            "points" => {
                let count: usize = cx
                    .attr(c, "count")?
                    .parse()
                    .map_err(|_| cx.err(c, "bad point count"))?;
                let vals: Vec<f64> = c
                    .text()
                    .unwrap_or("")
                    .split_whitespace()
                    .map(parse_real)
                    .collect::<Option<_>>()
                    .ok_or_else(|| cx.err(c, "bad number in <points>"))?;
                if vals.len() != 3 * count {
                    return Err(cx.err(c, format!("<points> declares {count} points but holds {} reals", vals.len())));
                }
                points = Some(vals.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect());
            }
            _ => return Err(cx.unknown(c, "link")),
        }
    }
    Ok(Link {
        id,
        points: points.ok_or_else(|| cx.err(n, "<link> missing <points>"))?,
        attrs: attrs.ok_or_else(|| cx.err(n, "<link> missing <inertial>"))?,
        boxes,
    })
}

fn parse_joint(cx: &Ctx, n: Node) -> Result<Joint, SceneError> {
    let kind = match cx.attr(n, "type")? {
        "revolute" => JointType::Revolute,
        "prismatic" => JointType::Prismatic,
        "fixed" => JointType::Fixed,
        other => return Err(cx.err(n, format!("unsupported joint type '{other}'"))),
    };
    let (mut parent, mut child, mut origin, mut orientation, mut axis, mut limits) =
        (None, None, None, None, None, None);
    for c in cx.elements(n)? {
        match c.tag_name().name() {
            "parent" => parent = Some(cx.link_ref(c, "link")?),
            "child" => child = Some(cx.link_ref(c, "link")?),
            "origin" => {
                origin = Some(cx.vec3(c, "xyz")?);
                orientation = Some(if c.has_attribute("rotvec") {
                    cx.vec3(c, "rotvec")?
                } else {
                    [0.0; 3]
                });
            }
            "axis" => {
                let a = cx.vec3(c, "xyz")?;
                let norm = crate::geom::norm(&a);
                if (norm - 1.0).abs() > AXIS_TOL {
                    return Err(cx.err(c, format!("non-unit axis (norm {norm})")));
                }
                axis = Some(a);
            }
            "limit" => limits = Some([cx.real(c, "lower")?, cx.real(c, "upper")?]),
            _ => return Err(cx.unknown(c, "joint")),
        }
    }
    let missing = |what: &str| cx.err(n, format!("<joint> missing <{what}>"));
    let axis = match (axis, kind) {
        (Some(a), _) => a,
        (None, JointType::Fixed) => [1.0, 0.0, 0.0],
        (None, _) => return Err(missing("axis")),
    };
    let limits = match (limits, kind) {
        (Some(l), _) => l,
        (None, JointType::Fixed) => [0.0, 0.0],
        (None, _) => return Err(missing("limit")),
    };
    Ok(Joint {
        parent: parent.ok_or_else(|| missing("parent"))?,
        child: child.ok_or_else(|| missing("child"))?,
        kind,
        axis,
        origin: origin.unwrap_or([0.0; 3]),
        orientation: orientation.unwrap_or([0.0; 3]),
        limits,
    })
}
