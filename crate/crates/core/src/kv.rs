//! Line-oriented `key = value` manifests, shared by scene descriptions,
//! dataset manifests and checkpoints.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.
//! Floats are written in Rust's shortest round-trip form so values survive a
//! write/read cycle bit-exactly.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::body::{BodySpec, LinkSpec, DEFAULT_DENSITY};
use crate::error::{Error, Result};
use crate::geom::{Capsule, Vec3};

pub const SCENE_FORMAT: &str = "larp-scene/1";

#[derive(Debug, Default, Clone)]
pub struct KvDoc {
    path: PathBuf,
    entries: Vec<(String, String)>,
    lines: HashMap<String, (usize, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut doc = KvDoc { path, ..Default::default() };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(doc.error_at(n + 1, format!("expected 'key = value', got '{line}'")));
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(doc.error_at(n + 1, "empty key".into()));
            }
            if doc.lines.contains_key(&k) {
                return Err(doc.error_at(n + 1, format!("duplicate key '{k}'")));
            }
            doc.lines.insert(k.clone(), (n + 1, doc.entries.len()));
            doc.entries.push((k, v));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        KvDoc::parse(&text, path)
    }

    fn error_at(&self, line: usize, message: String) -> Error {
        Error::Parse { path: self.path.clone(), line, message }
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        let line = self.lines.get(key).map_or(0, |(l, _)| *l);
        self.error_at(line, message.into())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.get(key).map(|(_, i)| self.entries[*i].1.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| self.error(key, format!("missing key '{key}'")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse().map_err(|e| self.error(key, format!("bad value for '{key}': {e}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(_) => self.parse_value(key),
        }
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .map(|t| t.parse().map_err(|e| self.error(key, format!("bad element '{t}' in '{key}': {e}"))))
            .collect()
    }

    pub fn parse_vec3(&self, key: &str) -> Result<Vec3> {
        let v: Vec<f64> = self.parse_list(key)?;
        if v.len() != 3 {
            return Err(self.error(key, format!("'{key}' needs 3 components, got {}", v.len())));
        }
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str("# ");
        self.out.push_str(text);
        self.out.push('\n');
        self
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn put_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.put(key, format!("{value:?}"))
    }

    pub fn put_list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        self.put(key, joined.join(" "))
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Write body topology and dimensions under `body.<b>.` keys.
pub fn write_bodies(w: &mut KvWriter, specs: &[BodySpec]) {
    w.put("bodies", specs.len());
    for (b, spec) in specs.iter().enumerate() {
        w.put(&format!("body.{b}.name"), &spec.name);
        w.put(&format!("body.{b}.links"), spec.n_links());
        for (i, link) in spec.links.iter().enumerate() {
            let k = |f: &str| format!("body.{b}.link.{i}.{f}");
            w.put_f64(&k("length"), link.capsule.length);
            w.put_f64(&k("radius"), link.capsule.radius);
            w.put_f64(&k("mass"), link.mass);
            match link.parent {
                None => {
                    w.put(&k("parent"), "none");
                }
                Some(p) => {
                    w.put(&k("parent"), p);
                    w.put_list(&k("anchor_parent"), &link.anchor_parent.to_array());
                    w.put_list(&k("anchor_child"), &link.anchor_child.to_array());
                }
            }
        }
    }
}

/// Inverse of [`write_bodies`]. A missing `mass` defaults to the
/// [`DEFAULT_DENSITY`] solid-capsule mass.
pub fn read_bodies(doc: &KvDoc) -> Result<Vec<BodySpec>> {
    let n: usize = doc.parse_value("bodies")?;
    let mut specs = Vec::with_capacity(n.min(1024));
    for b in 0..n {
        let name = doc.require(&format!("body.{b}.name"))?.to_string();
        let n_links: usize = doc.parse_value(&format!("body.{b}.links"))?;
        let mut links = Vec::with_capacity(n_links.min(1024));
        for i in 0..n_links {
            let k = |f: &str| format!("body.{b}.link.{i}.{f}");
            let capsule = Capsule::new(doc.parse_value(&k("length"))?, doc.parse_value(&k("radius"))?);
            let mass = doc.parse_or(&k("mass"), DEFAULT_DENSITY * capsule.volume())?;
            let parent_key = k("parent");
            let parent = match doc.get(&parent_key) {
                None | Some("none") => None,
                Some(_) => Some(doc.parse_value::<usize>(&parent_key)?),
            };
            let link = match parent {
                None => LinkSpec::root(capsule, mass),
                Some(p) => LinkSpec {
                    capsule,
                    mass,
                    parent: Some(p),
                    anchor_parent: doc.parse_vec3(&k("anchor_parent"))?,
                    anchor_child: doc.parse_vec3(&k("anchor_child"))?,
                },
            };
            links.push(link);
        }
        let spec = BodySpec { name, links };
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

/// A scene description file: body specs plus the time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFile {
    pub dt: f64,
    pub specs: Vec<BodySpec>,
}

impl SceneFile {
    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("format", SCENE_FORMAT);
        w.put_f64("dt", self.dt);
        write_bodies(&mut w, &self.specs);
        w.finish()
    }

    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let doc = KvDoc::parse(text, path)?;
        let format = doc.require("format")?;
        if format != SCENE_FORMAT {
            return Err(Error::VersionMismatch { expected: SCENE_FORMAT.into(), found: format.into() });
        }
        Ok(SceneFile { dt: doc.parse_or("dt", 0.01)?, specs: read_bodies(&doc)? })
    }

    pub fn read(path: &Path) -> Result<Self> {
        SceneFile::parse(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::assemble_chain;
    use crate::geom::Pose;

    #[test]
    fn scene_round_trip() {
        let (a, _) = assemble_chain("chain2", &[0.31, 0.27], &[0.05, 0.061], Pose::default()).unwrap();
        let (b, _) = assemble_chain("ball", &[0.1], &[0.1], Pose::default()).unwrap();
        let scene = SceneFile { dt: 0.01, specs: vec![a, b] };
        let back = SceneFile::parse(&scene.to_text(), "mem").unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn hand_written_scene() {
        let text = "\
# two-link pendulum
format = larp-scene/1
bodies = 1
body.0.name = pendulum
body.0.links = 2
body.0.link.0.length = 0.4
body.0.link.0.radius = 0.05
body.0.link.0.parent = none
body.0.link.1.length = 0.4
body.0.link.1.radius = 0.05
body.0.link.1.mass = 1.5
body.0.link.1.parent = 0
body.0.link.1.anchor_parent = 0 0 -0.2
body.0.link.1.anchor_child = 0 0 0.2
";
        let scene = SceneFile::parse(text, "p.scene").unwrap();
        assert_eq!(scene.dt, 0.01);
        let s = &scene.specs[0];
        assert_eq!(s.links[1].mass, 1.5);
        assert!((s.links[0].mass - DEFAULT_DENSITY * Capsule::new(0.4, 0.05).volume()).abs() < 1e-12);
        assert_eq!(s.links[1].anchor_parent, Vec3::new(0.0, 0.0, -0.2));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = KvDoc::parse("a = 1\nnot a pair\n", "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = KvDoc::parse("a = 1\na = 2\n", "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let doc = KvDoc::parse("n = abc\n", "x").unwrap();
        assert!(matches!(doc.parse_value::<usize>("n"), Err(Error::Parse { line: 1, .. })));
        assert!(doc.require("missing").is_err());
    }

    #[test]
    fn scene_with_bad_topology_is_rejected() {
        let text = "format = larp-scene/1\nbodies = 1\nbody.0.name = x\nbody.0.links = 1\n\
                    body.0.link.0.length = 0.1\nbody.0.link.0.radius = 0.1\nbody.0.link.0.parent = 0\n\
                    body.0.link.0.anchor_parent = 0 0 0\nbody.0.link.0.anchor_child = 0 0 0\n";
        assert!(matches!(SceneFile::parse(text, "x"), Err(Error::InvalidBody(_))));
    }
}
