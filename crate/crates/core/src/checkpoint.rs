//! Binary checkpoints of a [`GaussianSet`]: the 8-byte magic `RIGS0001`, a
//! little-endian u64 header length, a JSON header, then one little-endian
//! float32 array per field in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::primitives::{GaussianCore, GaussianSet, MotionBases, RigidGaussian, TransientGaussian};

pub const MAGIC: &[u8; 8] = b"RIGS0001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldInfo {
    pub name: String,
    /// Byte offset from the start of the data section.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub counts: BTreeMap<String, usize>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha_gate: f64,
    pub fields: Vec<FieldInfo>,
}

struct Writer {
    fields: Vec<FieldInfo>,
    data: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: &str, shape: Vec<usize>, values: impl Iterator<Item = f64>) {
        let offset = self.data.len();
        let mut n = 0;
        for v in values {
            self.data.extend_from_slice(&(v as f32).to_le_bytes());
            n += 1;
        }
        debug_assert_eq!(n, shape.iter().product::<usize>());
        self.fields.push(FieldInfo { name: name.to_string(), offset, shape });
    }

    fn push_cores<'a>(&mut self, prefix: &str, cores: &[&'a GaussianCore]) {
        let n = cores.len();
        self.push(&format!("{prefix}.mean"), vec![n, 3], cores.iter().flat_map(|c| c.mean.iter().copied().collect::<Vec<_>>()));
        self.push(
            &format!("{prefix}.log_scale"),
            vec![n, 3],
            cores.iter().flat_map(|c| c.log_scale.iter().copied().collect::<Vec<_>>()),
        );
        self.push(&format!("{prefix}.quat"), vec![n, 4], cores.iter().flat_map(|c| c.quat));
        self.push(&format!("{prefix}.opacity_logit"), vec![n], cores.iter().map(|c| c.opacity_logit));
        self.push(&format!("{prefix}.color"), vec![n, 3], cores.iter().flat_map(|c| c.color.iter().copied().collect::<Vec<_>>()));
    }
}

/// Serializes `set` into the checkpoint byte format.
pub fn encode(set: &GaussianSet) -> Vec<u8> {
    let k = set.num_bases();
    let t = set.num_frames();
    let mut w = Writer { fields: Vec::new(), data: Vec::new() };
    let statics: Vec<&GaussianCore> = set.statics.iter().collect();
    w.push_cores("static", &statics);
    let rc: Vec<&GaussianCore> = set.rigids.iter().map(|g| &g.core).collect();
    w.push_cores("rigid", &rc);
    let nr = set.rigids.len();
    w.push("rigid.weights", vec![nr, k], set.rigids.iter().flat_map(|g| g.weights.clone()));
    w.push("rigid.beta", vec![nr], set.rigids.iter().map(|g| g.beta));
    w.push("rigid.gamma", vec![nr], set.rigids.iter().map(|g| g.gamma));
    w.push("rigid.source", vec![nr], set.rigids.iter().map(|g| g.source as f64));
    let tc: Vec<&GaussianCore> = set.transients.iter().map(|g| &g.core).collect();
    w.push_cores("transient", &tc);
    let nt = set.transients.len();
    w.push(
        "transient.velocity",
        vec![nt, 3],
        set.transients.iter().flat_map(|g| g.velocity.iter().copied().collect::<Vec<_>>()),
    );
    w.push("transient.beta", vec![nt], set.transients.iter().map(|g| g.beta));
    w.push("transient.gamma", vec![nt], set.transients.iter().map(|g| g.gamma));
    w.push("transient.source", vec![nt], set.transients.iter().map(|g| g.source as f64));
    w.push("bases", vec![k, t, 9], set.bases.params.iter().flat_map(|p| *p));

    let counts = BTreeMap::from([
        ("static".to_string(), set.statics.len()),
        ("rigid".to_string(), nr),
        ("transient".to_string(), nt),
    ]);
    let header = Header { counts, k, t, alpha_gate: set.alpha_gate, fields: w.fields };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + w.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.data);
    out
}

fn invalid(path: &Path, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch { path: path.to_path_buf(), detail: detail.into() }
}

/// Parses checkpoint bytes. `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<GaussianSet> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| invalid(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::json(path, e))?;
    let data = &bytes[body..];
    let field = |name: &str| -> Result<Vec<f64>> {
        let f = header.fields.iter().find(|f| f.name == name).ok_or_else(|| invalid(path, format!("missing field {name}")))?;
        let n: usize = f.shape.iter().product();
        let end = f.offset + 4 * n;
        if end > data.len() {
            return Err(invalid(path, format!("field {name} runs past end of file")));
        }
        Ok(data[f.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    };
    let count = |key: &str| header.counts.get(key).copied().unwrap_or(0);
    let cores = |prefix: &str, n: usize| -> Result<Vec<GaussianCore>> {
        let mean = field(&format!("{prefix}.mean"))?;
        let ls = field(&format!("{prefix}.log_scale"))?;
        let q = field(&format!("{prefix}.quat"))?;
        let o = field(&format!("{prefix}.opacity_logit"))?;
        let c = field(&format!("{prefix}.color"))?;
        if mean.len() != 3 * n || ls.len() != 3 * n || q.len() != 4 * n || o.len() != n || c.len() != 3 * n {
            return Err(invalid(path, format!("{prefix} arrays disagree with count {n}")));
        }
        Ok((0..n)
            .map(|i| GaussianCore {
                mean: Vec3::from_column_slice(&mean[3 * i..3 * i + 3]),
                log_scale: Vec3::from_column_slice(&ls[3 * i..3 * i + 3]),
                quat: [q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]],
                opacity_logit: o[i],
                color: Vec3::from_column_slice(&c[3 * i..3 * i + 3]),
            })
            .collect())
    };
    let (k, t) = (header.k, header.t);
    let mut set = GaussianSet::empty(k, t);
    set.alpha_gate = header.alpha_gate;
    set.statics = cores("static", count("static"))?;

    let nr = count("rigid");
    let (w, b, g, s) = (field("rigid.weights")?, field("rigid.beta")?, field("rigid.gamma")?, field("rigid.source")?);
    if w.len() != nr * k || b.len() != nr || g.len() != nr || s.len() != nr {
        return Err(invalid(path, "rigid arrays disagree with count"));
    }
    set.rigids = cores("rigid", nr)?
        .into_iter()
        .enumerate()
        .map(|(i, core)| RigidGaussian { core, weights: w[i * k..(i + 1) * k].to_vec(), beta: b[i], gamma: g[i], source: s[i] as u32 })
        .collect();

    let nt = count("transient");
    let (v, b, g, s) =
        (field("transient.velocity")?, field("transient.beta")?, field("transient.gamma")?, field("transient.source")?);
    if v.len() != 3 * nt || b.len() != nt || g.len() != nt || s.len() != nt {
        return Err(invalid(path, "transient arrays disagree with count"));
    }
    set.transients = cores("transient", nt)?
        .into_iter()
        .enumerate()
        .map(|(i, core)| TransientGaussian {
            core,
            velocity: Vec3::from_column_slice(&v[3 * i..3 * i + 3]),
            beta: b[i],
            gamma: g[i],
            source: s[i] as u32,
        })
        .collect();

    let bases = field("bases")?;
    if bases.len() != k * t * 9 {
        return Err(invalid(path, "bases array disagrees with K and T"));
    }
    let mut mb = MotionBases::identity(k, t);
    for (i, p) in mb.params.iter_mut().enumerate() {
        p.copy_from_slice(&bases[9 * i..9 * i + 9]);
    }
    set.bases = mb;
    Ok(set)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(set: &GaussianSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode(set))
}

pub fn load_checkpoint(path: &Path) -> Result<GaussianSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
