//! Versioned binary model container with a JSON manifest twin.
//!
//! Layout: magic `CHIN`, format version (u32 LE), depth (u32), dimension
//! table (u32 count + entries: raw input dim, bond dims, class count), tensor
//! count, then per tensor a name header (u32 length + UTF-8), shape (u32 rank
//! + u32 dims) and the row-major little-endian f64 payload. Round trips are
//! byte-exact.

use crate::error::{ChiError, Result};
use crate::linalg::{Core3, Matrix};
use crate::model::{ChiNet, FactoredCore, LayerCore};
use crate::odt::DiagonalisedNet;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CHIN";
const VERSION: u32 = 1;

/// Everything a command needs to resume from disk: the network plus, for
/// diagonalised models, the retained per-bond eigenvalues and constant
/// coordinates.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: ChiNet,
    pub diag: Option<DiagMeta>,
}

#[derive(Debug, Clone)]
pub struct DiagMeta {
    pub bond_eigenvalues: Vec<Vec<f64>>,
    pub constant_coords: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl Checkpoint {
    pub fn plain(net: ChiNet) -> Self {
        Checkpoint { net, diag: None }
    }

    pub fn diagonalised(d: DiagonalisedNet) -> Self {
        Checkpoint {
            net: d.net,
            diag: Some(DiagMeta {
                bond_eigenvalues: d.bond_eigenvalues,
                constant_coords: d.constant_coords,
                ranks: d.ranks,
            }),
        }
    }

    pub fn into_diagonalised(self) -> Result<DiagonalisedNet> {
        let diag = self.diag.ok_or_else(|| {
            ChiError::Format("checkpoint does not carry a diagonalised model".into())
        })?;
        Ok(DiagonalisedNet {
            net: self.net,
            bond_eigenvalues: diag.bond_eigenvalues,
            constant_coords: diag.constant_coords,
            ranks: diag.ranks,
        })
    }
}

struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn tensors_of(ck: &Checkpoint) -> Vec<Tensor> {
    let net = &ck.net;
    let mut ts = Vec::new();
    ts.push(Tensor {
        name: "embedding".into(),
        shape: vec![net.embedding.rows(), net.embedding.cols()],
        data: net.embedding.data().to_vec(),
    });
    for (i, core) in net.cores.iter().enumerate() {
        match core {
            LayerCore::Factored(f) => {
                ts.push(Tensor {
                    name: format!("core{}.a", i + 1),
                    shape: vec![f.a.rows(), f.a.cols()],
                    data: f.a.data().to_vec(),
                });
                ts.push(Tensor {
                    name: format!("core{}.b", i + 1),
                    shape: vec![f.b.rows(), f.b.cols()],
                    data: f.b.data().to_vec(),
                });
            }
            LayerCore::Dense(c) => {
                ts.push(Tensor {
                    name: format!("core{}", i + 1),
                    shape: vec![c.out_dim(), c.in_dim(), c.in_dim()],
                    data: c.data().to_vec(),
                });
            }
        }
    }
    ts.push(Tensor {
        name: "unembedding".into(),
        shape: vec![net.unembedding.rows(), net.unembedding.cols()],
        data: net.unembedding.data().to_vec(),
    });
    if let Some(diag) = &ck.diag {
        for (b, lam) in diag.bond_eigenvalues.iter().enumerate() {
            ts.push(Tensor {
                name: format!("lambda{}", b + 1),
                shape: vec![lam.len()],
                data: lam.clone(),
            });
        }
        ts.push(Tensor {
            name: "constant_coords".into(),
            shape: vec![diag.constant_coords.len()],
            data: diag.constant_coords.iter().map(|&c| c as f64).collect(),
        });
        ts.push(Tensor {
            name: "ranks".into(),
            shape: vec![diag.ranks.len()],
            data: diag.ranks.iter().map(|&r| r as f64).collect(),
        });
    }
    ts
}

#[derive(Serialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize)]
struct Manifest {
    format: String,
    version: u32,
    depth: usize,
    input_dim: usize,
    bond_dims: Vec<usize>,
    n_classes: usize,
    layout: String,
    diagonalised: bool,
    tensors: Vec<ManifestTensor>,
}

/// Write the binary container and its JSON manifest twin (`<path>.json`).
pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let net = &ck.net;
    net.validate()?;
    let tensors = tensors_of(ck);

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.depth() as u32).to_le_bytes());
    let mut dims = vec![net.input_dim() as u32];
    dims.extend(net.bond_dims().iter().map(|&d| d as u32));
    dims.push(net.n_classes() as u32);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &s in &t.shape {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, &out)?;

    let layout = if net.cores.iter().any(|c| matches!(c, LayerCore::Factored(_))) {
        "factored"
    } else {
        "dense"
    };
    let manifest = Manifest {
        format: "CHIN".into(),
        version: VERSION,
        depth: net.depth(),
        input_dim: net.input_dim(),
        bond_dims: net.bond_dims(),
        n_classes: net.n_classes(),
        layout: layout.into(),
        diagonalised: ck.diag.is_some(),
        tensors: tensors
            .iter()
            .map(|t| ManifestTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let twin = manifest_path(path);
    let mut f = std::fs::File::create(&twin)?;
    f.write_all(serde_json::to_string_pretty(&manifest).expect("serialisable").as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| ChiError::Format(format!("corrupt checkpoint: truncated {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Load a container written by [`save`].
pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| ChiError::Format(format!("cannot open {}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(ChiError::Format(format!(
            "corrupt checkpoint {}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut f, "version")?;
    if version != VERSION {
        return Err(ChiError::Format(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let depth = read_u32(&mut f, "depth")? as usize;
    let n_dims = read_u32(&mut f, "dimension table")? as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u32(&mut f, "dimension entry")? as usize);
    }
    let n_tensors = read_u32(&mut f, "tensor count")? as usize;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut f, "tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut f, &mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ChiError::Format("corrupt checkpoint: tensor name".into()))?;
        let rank = read_u32(&mut f, "tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut f, "tensor shape")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut payload = vec![0u8; len * 8];
        read_exact(&mut f, &mut payload, "tensor payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        order.push(name.clone());
        tensors.insert(name.clone(), Tensor { name, shape, data });
    }

    let take_matrix = |tensors: &BTreeMap<String, Tensor>, name: &str| -> Result<Matrix> {
        let t = tensors
            .get(name)
            .ok_or_else(|| ChiError::Format(format!("checkpoint misses tensor {name}")))?;
        if t.shape.len() != 2 {
            return Err(ChiError::Format(format!("tensor {name} is not a matrix")));
        }
        Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())
    };

    let embedding = take_matrix(&tensors, "embedding")?;
    let unembedding = take_matrix(&tensors, "unembedding")?;
    let mut cores = Vec::with_capacity(depth);
    for i in 1..=depth {
        if let Some(t) = tensors.get(&format!("core{i}")) {
            if t.shape.len() != 3 || t.shape[1] != t.shape[2] {
                return Err(ChiError::Format(format!("tensor core{i} has a bad shape")));
            }
            let mut c = Core3::from_vec(t.shape[0], t.shape[1], t.data.clone())?;
            if c.max_asymmetry() == 0.0 {
                c.mark_symmetric();
            }
            cores.push(LayerCore::Dense(c));
        } else {
            let a = take_matrix(&tensors, &format!("core{i}.a"))?;
            let b = take_matrix(&tensors, &format!("core{i}.b"))?;
            cores.push(LayerCore::Factored(FactoredCore::new(a, b)?));
        }
    }
    let net = ChiNet::new(embedding, cores, unembedding)?;

    let diag = if tensors.contains_key("constant_coords") {
        let mut bond_eigenvalues = Vec::with_capacity(depth + 1);
        for b in 1..=depth + 1 {
            let t = tensors
                .get(&format!("lambda{b}"))
                .ok_or_else(|| ChiError::Format(format!("checkpoint misses lambda{b}")))?;
            bond_eigenvalues.push(t.data.clone());
        }
        let coords = tensors["constant_coords"]
            .data
            .iter()
            .map(|&v| v as usize)
            .collect();
        let ranks = tensors["ranks"].data.iter().map(|&v| v as usize).collect();
        Some(DiagMeta {
            bond_eigenvalues,
            constant_coords: coords,
            ranks,
        })
    } else {
        None
    };
    let _ = order;
    Ok(Checkpoint { net, diag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("chinet_persist");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn factored_roundtrip_byte_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(300);
        let net = ChiNet::random_factored(5, &[4, 4, 3], 3, &mut rng);
        let p = tmp("fac.chin");
        save(&p, &Checkpoint::plain(net)).unwrap();
        let first = std::fs::read(&p).unwrap();
        let ck = load(&p).unwrap();
        save(&p, &ck).unwrap();
        let second = std::fs::read(&p).unwrap();
        assert_eq!(first, second, "save-load-save must be byte identical");
    }

    #[test]
    fn dense_symmetric_flag_survives() {
        let mut rng = ChaCha20Rng::seed_from_u64(301);
        let net = ChiNet::random_factored(4, &[4, 4], 2, &mut rng).symmetrise();
        let p = tmp("dense.chin");
        save(&p, &Checkpoint::plain(net)).unwrap();
        let ck = load(&p).unwrap();
        assert!(ck.net.is_dense_symmetric());
    }

    #[test]
    fn diag_metadata_roundtrip() {
        use crate::odt::{diagonalise, orthogonalise, truncate, TruncationPlan};
        let mut rng = ChaCha20Rng::seed_from_u64(302);
        let net = ChiNet::random_factored(4, &[5, 4], 3, &mut rng).symmetrise();
        let onet = orthogonalise(&net).unwrap();
        let spec = diagonalise(&onet).unwrap();
        let dnet = truncate(&onet, &spec, &TruncationPlan::full_rank(&spec)).unwrap();
        let coords = dnet.constant_coords.clone();
        let ranks = dnet.ranks.clone();
        let p = tmp("diag.chin");
        save(&p, &Checkpoint::diagonalised(dnet)).unwrap();
        let back = load(&p).unwrap().into_diagonalised().unwrap();
        assert_eq!(back.constant_coords, coords);
        assert_eq!(back.ranks, ranks);
        assert!(manifest_path(&p).exists());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let p = tmp("bad.chin");
        std::fs::write(&p, b"NOPE....").unwrap();
        assert!(matches!(load(&p), Err(ChiError::Format(_))));
    }

    #[test]
    fn plain_checkpoint_refuses_diag_use() {
        let mut rng = ChaCha20Rng::seed_from_u64(303);
        let net = ChiNet::random_factored(3, &[3, 3], 2, &mut rng);
        let ck = Checkpoint::plain(net);
        assert!(ck.into_diagonalised().is_err());
    }
}
