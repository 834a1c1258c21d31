//! Parameter files: one line of JSON header, then every tensor as
//! little-endian `f64`, concatenated in header order.
//!
//! ```text
//! {"format":"higoc-params","version":1,"kind":"cvae","meta":{..},"networks":[..],"data_bytes":N}\n
//! <N bytes>
//! ```
//!
//! Tensor offsets are byte offsets into the data block.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use higoc_core::cvae::Cvae;
use higoc_core::env::StateScale;
use higoc_core::flat::FlatAgent;
use higoc_core::gcrl::GoalAgent;
use higoc_core::nn::{Activation, Mlp, Tensor};
use higoc_core::sac::SacNets;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{io_err, Error, Result};

pub const FORMAT: &str = "higoc-params";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub name: String,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: Value,
    pub networks: Vec<NetEntry>,
    pub data_bytes: usize,
}

pub fn write_params<W: Write>(mut w: W, kind: &str, meta: Value, nets: &[(&str, &Mlp)]) -> std::io::Result<()> {
    let mut offset = 0;
    let mut networks = Vec::with_capacity(nets.len());
    for (name, net) in nets {
        let tensors = net
            .params()
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.len();
                e
            })
            .collect();
        networks.push(NetEntry {
            name: name.to_string(),
            widths: net.widths().to_vec(),
            activations: net.activations().to_vec(),
            tensors,
        });
    }
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        kind: kind.into(),
        meta,
        networks,
        data_bytes: offset,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, net) in nets {
        for t in net.params() {
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

pub fn read_params<R: BufRead>(mut r: R) -> Result<(Header, Vec<(String, Mlp)>)> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header: Header = serde_json::from_slice(&line).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut data = vec![0u8; header.data_bytes];
    r.read_exact(&mut data)
        .map_err(|_| Error::Checkpoint(format!("expected {} data bytes", header.data_bytes)))?;
    if r.read(&mut [0u8; 1]).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after data block".into()));
    }
    let mut nets = Vec::with_capacity(header.networks.len());
    for n in &header.networks {
        let mut params = Vec::with_capacity(n.tensors.len());
        for t in &n.tensors {
            let len: usize = t.shape.iter().product();
            let end = t.offset + 8 * len;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("tensor of {} overruns the data block", n.name)));
            }
            let values = data[t.offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Tensor::new(t.shape.clone(), values)?);
        }
        nets.push((n.name.clone(), Mlp::from_params(&n.widths, &n.activations, params)?));
    }
    Ok((header, nets))
}

fn save(path: &Path, kind: &str, meta: Value, nets: &[(&str, &Mlp)]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_params(BufWriter::new(f), kind, meta, nets).map_err(io_err(path))
}

fn load(path: &Path, kind: &str) -> Result<(Value, Vec<Mlp>, Vec<String>)> {
    let f = File::open(path).map_err(io_err(path))?;
    let (header, nets) = read_params(BufReader::new(f))?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} checkpoint, expected {kind}",
            path.display(),
            header.kind
        )));
    }
    let (names, nets) = nets.into_iter().unzip();
    Ok((header.meta, nets, names))
}

fn field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    serde_json::from_value(meta.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Checkpoint(format!("meta.{key}: {e}")))
}

fn expect_names(names: &[String], want: &[&str]) -> Result<()> {
    if names.iter().map(String::as_str).eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("networks {names:?}, expected {want:?}")))
    }
}

const SAC_NETS: [&str; 5] = ["critic0", "critic1", "target0", "target1", "policy"];

fn sac_entries(n: &SacNets) -> [(&'static str, &Mlp); 5] {
    [
        (SAC_NETS[0], &n.critics[0]),
        (SAC_NETS[1], &n.critics[1]),
        (SAC_NETS[2], &n.targets[0]),
        (SAC_NETS[3], &n.targets[1]),
        (SAC_NETS[4], &n.policy),
    ]
}

fn sac_from(meta: &Value, nets: Vec<Mlp>, names: &[String]) -> Result<SacNets> {
    expect_names(names, &SAC_NETS)?;
    let [c0, c1, t0, t1, policy]: [Mlp; 5] = nets.try_into().unwrap();
    Ok(SacNets {
        critics: [c0, c1],
        targets: [t0, t1],
        policy,
        log_alpha: field(meta, "log_alpha")?,
        obs_dim: field(meta, "obs_dim")?,
    })
}

pub fn save_goal_agent(path: &Path, agent: &GoalAgent) -> Result<()> {
    let meta = json!({
        "scale": agent.scale,
        "n": agent.n,
        "log_alpha": agent.nets.log_alpha,
        "obs_dim": agent.nets.obs_dim,
    });
    save(path, "goal-agent", meta, &sac_entries(&agent.nets))
}

pub fn load_goal_agent(path: &Path) -> Result<GoalAgent> {
    let (meta, nets, names) = load(path, "goal-agent")?;
    Ok(GoalAgent {
        nets: sac_from(&meta, nets, &names)?,
        scale: field::<StateScale>(&meta, "scale")?,
        n: field(&meta, "n")?,
    })
}

pub fn save_flat_agent(path: &Path, agent: &FlatAgent) -> Result<()> {
    let meta = json!({
        "scale": agent.scale,
        "log_alpha": agent.nets.log_alpha,
        "obs_dim": agent.nets.obs_dim,
    });
    save(path, "flat-agent", meta, &sac_entries(&agent.nets))
}

pub fn load_flat_agent(path: &Path) -> Result<FlatAgent> {
    let (meta, nets, names) = load(path, "flat-agent")?;
    Ok(FlatAgent {
        nets: sac_from(&meta, nets, &names)?,
        scale: field(&meta, "scale")?,
    })
}

pub fn save_cvae(path: &Path, cvae: &Cvae) -> Result<()> {
    let meta = json!({ "latent_dim": cvae.latent_dim, "scale": cvae.scale });
    save(path, "cvae", meta, &[("encoder", &cvae.encoder), ("decoder", &cvae.decoder)])
}

pub fn load_cvae(path: &Path) -> Result<Cvae> {
    let (meta, nets, names) = load(path, "cvae")?;
    expect_names(&names, &["encoder", "decoder"])?;
    let [encoder, decoder]: [Mlp; 2] = nets.try_into().unwrap();
    Ok(Cvae {
        encoder,
        decoder,
        latent_dim: field(&meta, "latent_dim")?,
        scale: field(&meta, "scale")?,
    })
}
