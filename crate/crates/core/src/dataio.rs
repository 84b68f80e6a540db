//! Dataset and checkpoint persistence.
//!
//! A dataset is a directory:
//!
//! * `manifest.txt`: `key = value` lines (format version, counts, dt, body
//!   topology).
//! * `specs.f32`: per sequence, per body, per link `length radius mass
//!   anchor_parent(3) anchor_child(3)`.
//! * `states.f32`: `[sequence][timestep][body][link]` x(3) q(4) v(3) ω(3),
//!   `seq_len + 1` timesteps.
//! * `controls.f32`: `[sequence][timestep][body][link]` Q(4) τ(3), `seq_len`
//!   timesteps.
//!
//! Blobs are little-endian `f32`. A checkpoint is a directory holding
//! `model.txt` (architecture, statistics, dt, layout version) and
//! `weights.f32` (for each network in manifest order, for each layer, the
//! row-major `fan_in x fan_out` weight followed by the bias).

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::adnn::{Activation, Mlp, Real, Tensor};
use crate::body::{BodySpec, LinkControl, LinkSpec, LinkState, Trajectory};
use crate::error::{Error, Result};
use crate::features::{NormStats, FEATURE_LAYOUT_VERSION};
use crate::geom::{Capsule, Vec3};
use crate::kv::{read_bodies, write_bodies, KvDoc, KvWriter};
use crate::model::{BodyNet, ContactNet, ContactVariant, ModelConfig, ModelParams};

pub const DATASET_FORMAT: &str = "larp-dataset/1";
pub const CHECKPOINT_FORMAT: &str = "larp-checkpoint/1";

pub const STATE_FIELDS: usize = 13;
pub const CONTROL_FIELDS: usize = 7;
pub const SPEC_FIELDS: usize = 9;

/// Bytes of the states blob.
pub fn states_blob_len(n_seq: usize, seq_len: usize, links_per_body: &[usize]) -> Option<u64> {
    blob_len(n_seq, seq_len.checked_add(1)?, links_per_body, STATE_FIELDS)
}

pub fn controls_blob_len(n_seq: usize, seq_len: usize, links_per_body: &[usize]) -> Option<u64> {
    blob_len(n_seq, seq_len, links_per_body, CONTROL_FIELDS)
}

pub fn specs_blob_len(n_seq: usize, links_per_body: &[usize]) -> Option<u64> {
    blob_len(n_seq, 1, links_per_body, SPEC_FIELDS)
}

fn blob_len(n_seq: usize, steps: usize, links_per_body: &[usize], fields: usize) -> Option<u64> {
    let links = links_per_body.iter().try_fold(0u64, |a, &n| a.checked_add(n as u64))?;
    (n_seq as u64).checked_mul(steps as u64)?.checked_mul(links)?.checked_mul(fields as u64)?.checked_mul(4)
}

fn push_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

fn write_blob(path: &Path, data: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(data)?;
    Ok(())
}

/// Reads a blob after checking its length against the manifest.
fn read_blob(path: &Path, expected: u64) -> Result<Vec<f64>> {
    let found = fs::metadata(path)?.len();
    if found < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, found });
    }
    if found > expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, found });
    }
    let bytes = fs::read(path)?;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, found: bytes.len() as u64 });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

fn same_topology(a: &[BodySpec], b: &[BodySpec]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.name == y.name
                && x.n_links() == y.n_links()
                && x.links.iter().zip(&y.links).all(|(l, m)| l.parent == m.parent)
        })
}

/// Writes trajectories sharing one topology, dt and length.
pub fn write_dataset(trajs: &[Trajectory], dir: &Path) -> Result<()> {
    let (seq_len, dt, specs0) = match trajs.first() {
        Some(t) => (t.len(), t.dt, t.specs.clone()),
        None => (0, 0.01, Vec::new()),
    };
    for (k, t) in trajs.iter().enumerate() {
        t.validate()?;
        if t.len() != seq_len || t.dt != dt || !same_topology(&t.specs, &specs0) {
            return Err(Error::InvalidTrajectory(format!(
                "sequence {k} differs in length, dt or topology from sequence 0"
            )));
        }
    }
    fs::create_dir_all(dir)?;
    let mut w = KvWriter::new();
    w.put("format_version", DATASET_FORMAT);
    w.put("n_sequences", trajs.len());
    w.put("seq_len", seq_len);
    w.put_f64("dt", dt);
    w.put("n_bodies", specs0.len());
    w.put("link_counts", specs0.iter().map(|s| s.n_links().to_string()).collect::<Vec<_>>().join(" "));
    w.put("specs", "specs.f32");
    w.put("states", "states.f32");
    w.put("controls", "controls.f32");
    w.comment("body topology of sequence 0; per-sequence dimensions live in specs.f32");
    write_bodies(&mut w, &specs0);
    fs::write(dir.join("manifest.txt"), w.finish())?;

    let mut specs = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    for t in trajs {
        for b in &t.specs {
            for l in &b.links {
                for v in [l.capsule.length, l.capsule.radius, l.mass] {
                    push_f32(&mut specs, v);
                }
                for v in l.anchor_parent.to_array().into_iter().chain(l.anchor_child.to_array()) {
                    push_f32(&mut specs, v);
                }
            }
        }
        for s in t.states.iter().flatten().flatten() {
            for v in s.to_array() {
                push_f32(&mut states, v);
            }
        }
        for u in t.controls.iter().flatten().flatten() {
            for v in u.to_array() {
                push_f32(&mut controls, v);
            }
        }
    }
    write_blob(&dir.join("specs.f32"), &specs)?;
    write_blob(&dir.join("states.f32"), &states)?;
    write_blob(&dir.join("controls.f32"), &controls)?;
    Ok(())
}

/// Manifest-level description of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetInfo {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub dt: f64,
    pub bodies: Vec<BodySpec>,
}

pub fn read_dataset_info(dir: &Path) -> Result<DatasetInfo> {
    let doc = KvDoc::read(&dir.join("manifest.txt"))?;
    let version = doc.require("format_version")?;
    if version != DATASET_FORMAT {
        return Err(Error::VersionMismatch { expected: DATASET_FORMAT.into(), found: version.into() });
    }
    let n_sequences: usize = doc.parse_value("n_sequences")?;
    let seq_len: usize = doc.parse_value("seq_len")?;
    let dt: f64 = doc.parse_value("dt")?;
    let n_bodies: usize = doc.parse_value("n_bodies")?;
    let bodies = read_bodies(&doc)?;
    let counts: Vec<usize> = if n_bodies == 0 { Vec::new() } else { doc.parse_list("link_counts")? };
    if bodies.len() != n_bodies || counts != bodies.iter().map(BodySpec::n_links).collect::<Vec<_>>() {
        return Err(doc.error("n_bodies", "body counts disagree with the body sections"));
    }
    Ok(DatasetInfo { n_sequences, seq_len, dt, bodies })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Trajectory>> {
    let info = read_dataset_info(dir)?;
    let counts: Vec<usize> = info.bodies.iter().map(BodySpec::n_links).collect();
    let overflow = || Error::InvalidConfig("dataset dimensions overflow".into());
    let specs = read_blob(&dir.join("specs.f32"), specs_blob_len(info.n_sequences, &counts).ok_or_else(overflow)?)?;
    let states = read_blob(
        &dir.join("states.f32"),
        states_blob_len(info.n_sequences, info.seq_len, &counts).ok_or_else(overflow)?,
    )?;
    let controls = read_blob(
        &dir.join("controls.f32"),
        controls_blob_len(info.n_sequences, info.seq_len, &counts).ok_or_else(overflow)?,
    )?;
    let (mut sp, mut st, mut ct) =
        (specs.chunks_exact(SPEC_FIELDS), states.chunks_exact(STATE_FIELDS), controls.chunks_exact(CONTROL_FIELDS));
    let mut out = Vec::with_capacity(info.n_sequences);
    for _ in 0..info.n_sequences {
        let specs: Vec<BodySpec> = info
            .bodies
            .iter()
            .map(|b| BodySpec {
                name: b.name.clone(),
                links: b
                    .links
                    .iter()
                    .map(|l| {
                        let f = sp.next().expect("length checked");
                        LinkSpec {
                            capsule: Capsule::new(f[0], f[1]),
                            mass: f[2],
                            parent: l.parent,
                            anchor_parent: Vec3::from_slice(&f[3..6]),
                            anchor_child: Vec3::from_slice(&f[6..9]),
                        }
                    })
                    .collect(),
            })
            .collect();
        let states = (0..=info.seq_len)
            .map(|_| {
                counts
                    .iter()
                    .map(|&n| (0..n).map(|_| LinkState::from_array(st.next().expect("length checked"))).collect())
                    .collect()
            })
            .collect();
        let controls = (0..info.seq_len)
            .map(|_| {
                counts
                    .iter()
                    .map(|&n| (0..n).map(|_| LinkControl::from_array(ct.next().expect("length checked"))).collect())
                    .collect()
            })
            .collect();
        let traj = Trajectory { specs, dt: info.dt, states, controls };
        traj.validate()?;
        out.push(traj);
    }
    Ok(out)
}

fn put_stats(w: &mut KvWriter, prefix: &str, s: &NormStats) {
    w.put_list(&format!("{prefix}.mean"), &s.mean);
    w.put_list(&format!("{prefix}.std"), &s.std);
}

fn get_stats(doc: &KvDoc, prefix: &str, dim: usize) -> Result<NormStats> {
    let key = format!("{prefix}.mean");
    let s = NormStats { mean: doc.parse_list(&key)?, std: doc.parse_list(&format!("{prefix}.std"))? };
    if s.dim() != dim {
        return Err(doc.error(&key, format!("expected {dim} statistics, found {}", s.dim())));
    }
    s.validate().map_err(|e| doc.error(&key, e.to_string()))?;
    Ok(s)
}

/// Writes `model.txt` and `weights.f32` into `dir`.
pub fn save_checkpoint<T: Real>(model: &ModelParams<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let c = &model.config;
    let mut w = KvWriter::new();
    w.put("format_version", CHECKPOINT_FORMAT);
    w.put("feature_layout", FEATURE_LAYOUT_VERSION);
    w.put_f64("dt", model.dt);
    w.put("hidden_width", c.hidden_width);
    w.put("dyn_layers", c.dyn_layers);
    w.put("contact_layers", c.contact_layers);
    w.put("activation", c.activation);
    w.put("contact_variant", c.contact_variant);
    w.put("stop_grad", c.stop_grad);
    w.put("disp_feature", c.disp_feature);
    w.put("n_body_types", model.bodies.len());
    let mut blob = Vec::new();
    let mut dump = |m: &Mlp<T>| {
        for (wt, b) in m.weights.iter().zip(&m.biases) {
            for v in wt.data().iter().chain(b.data()) {
                push_f32(&mut blob, v.as_f64());
            }
        }
    };
    for (k, b) in model.bodies.iter().enumerate() {
        w.put(&format!("body.{k}.name"), &b.name);
        w.put(&format!("body.{k}.links"), b.n_links);
        put_stats(&mut w, &format!("body.{k}.input"), &b.input);
        put_stats(&mut w, &format!("body.{k}.output"), &b.output);
        dump(&b.mlp);
    }
    w.put("contact", model.contact.is_some());
    if let Some(cn) = &model.contact {
        put_stats(&mut w, "contact.input", &cn.input);
        dump(&cn.mlp);
    }
    fs::write(dir.join("model.txt"), w.finish())?;
    write_blob(&dir.join("weights.f32"), &blob)
}

/// Loads a checkpoint; `expected_dt` makes a different model time step an error.
pub fn load_checkpoint(dir: &Path, expected_dt: Option<f64>) -> Result<ModelParams<f64>> {
    let doc = KvDoc::read(&dir.join("model.txt"))?;
    let version = doc.require("format_version")?;
    if version != CHECKPOINT_FORMAT {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_FORMAT.into(), found: version.into() });
    }
    let layout = doc.require("feature_layout")?;
    if layout != FEATURE_LAYOUT_VERSION {
        return Err(Error::VersionMismatch { expected: FEATURE_LAYOUT_VERSION.into(), found: layout.into() });
    }
    let dt: f64 = doc.parse_value("dt")?;
    if let Some(e) = expected_dt {
        if e != dt {
            return Err(Error::ModelMismatch(format!("model was trained at dt = {dt}, requested dt = {e}")));
        }
    }
    let config = ModelConfig {
        hidden_width: doc.parse_value("hidden_width")?,
        dyn_layers: doc.parse_value("dyn_layers")?,
        contact_layers: doc.parse_value("contact_layers")?,
        activation: doc.parse_value::<Activation>("activation")?,
        contact_variant: doc.parse_value::<ContactVariant>("contact_variant")?,
        stop_grad: doc.parse_value("stop_grad")?,
        disp_feature: doc.parse_value("disp_feature")?,
    };
    let n_types: usize = doc.parse_value("n_body_types")?;
    let has_contact: bool = doc.parse_value("contact")?;
    let mut types = Vec::new();
    for k in 0..n_types.min(1 << 16) {
        types.push((
            doc.require(&format!("body.{k}.name"))?.to_string(),
            doc.parse_value::<usize>(&format!("body.{k}.links"))?,
        ));
    }
    if types.len() != n_types {
        return Err(doc.error("n_body_types", "too many body types"));
    }
    let mut model: ModelParams<f64> = ModelParams::init(config, dt, &types, has_contact, 0)?;
    let total: usize = model.n_params();
    let weights = read_blob(&dir.join("weights.f32"), (total as u64) * 4)?;
    let mut cursor = weights.iter().copied();
    let mut fill = |m: &Mlp<f64>| -> Result<Mlp<f64>> {
        let mut ws = Vec::new();
        let mut bs = Vec::new();
        for (i, o) in m.spec.layer_dims() {
            ws.push(Tensor::new(i, o, cursor.by_ref().take(i * o).collect())?);
            bs.push(Tensor::new(1, o, cursor.by_ref().take(o).collect())?);
        }
        Mlp::from_layers(m.spec, ws, bs)
    };
    let mut bodies = Vec::new();
    for (k, b) in model.bodies.iter().enumerate() {
        bodies.push(BodyNet {
            name: b.name.clone(),
            n_links: b.n_links,
            mlp: fill(&b.mlp)?,
            input: get_stats(&doc, &format!("body.{k}.input"), b.mlp.spec.in_dim)?,
            output: get_stats(&doc, &format!("body.{k}.output"), b.mlp.spec.out_dim)?,
        });
    }
    let contact = match &model.contact {
        Some(c) => Some(ContactNet { mlp: fill(&c.mlp)?, input: get_stats(&doc, "contact.input", c.mlp.spec.in_dim)? }),
        None => None,
    };
    model.bodies = bodies;
    model.contact = contact;
    Ok(model)
}

/// Parameters rounded to the `f32` checkpoint precision.
pub fn round_to_storage(model: &ModelParams<f64>) -> ModelParams<f64> {
    let mut m = model.clone();
    for t in m.tensors_mut() {
        *t = Arc::new(t.map(|v| v as f32 as f64));
    }
    m
}
