//! Encode-process-decode graph network over simulation-step graphs.
//!
//! A step graph carries node states, mesh-space edges, and world-space
//! proximity edges. Four encoders embed the raw features, k rounds of
//! skew-symmetric message passing update node and edge embeddings, and three
//! decoders emit one acceleration component each. All message aggregation
//! runs in fixed index order so identical inputs give bit-identical outputs.

pub mod grad;
pub mod mlp;

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::ccd::Trajectory;
use crate::error::{Error, Result};
use crate::graph::{GraphSample, NodeState};
pub use mlp::{Layer, MlpParams};

type V3 = Vector3<f64>;

/// How node embeddings combine with the graph embedding before decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Scalar dot product per node; each decoder sees one number.
    Dot,
    /// Componentwise product; each decoder sees an embed_dim vector.
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub embed_dim: usize,
    pub mlp_width: usize,
    pub node_feat_dim: usize,
    pub edge_feat_dim: usize,
    /// Graph features are [t, dt, globals...], so this is n_globals + 2.
    pub global_feat_dim: usize,
    /// Message-passing rounds k, each with its own parameters.
    pub rounds: usize,
    pub encoder_depth: usize,
    pub global_encoder_depth: usize,
    pub processor_depth: usize,
    pub decoder_depth: usize,
    pub decode_mode: DecodeMode,
}

fn mlp_param_count(in_dim: usize, width: usize, depth: usize, out_dim: usize) -> usize {
    (in_dim * width + width) + (depth - 1) * (width * width + width) + (width * out_dim + out_dim)
}

impl GnnConfig {
    /// Small aortic-valve network: 64-wide embeddings, 128-wide MLPs of
    /// depth 2, three message rounds, six graph features.
    pub fn valve_small() -> Self {
        GnnConfig {
            embed_dim: 64,
            mlp_width: 128,
            node_feat_dim: 9,
            edge_feat_dim: 4,
            global_feat_dim: 6,
            rounds: 3,
            encoder_depth: 2,
            global_encoder_depth: 2,
            processor_depth: 2,
            decoder_depth: 2,
            decode_mode: DecodeMode::Elementwise,
        }
    }

    /// Small varying-geometry network: depth-3 encoders and processors,
    /// five message rounds, four graph features.
    pub fn varying_geometry_small() -> Self {
        GnnConfig {
            embed_dim: 64,
            mlp_width: 128,
            node_feat_dim: 9,
            edge_feat_dim: 4,
            global_feat_dim: 4,
            rounds: 5,
            encoder_depth: 3,
            global_encoder_depth: 2,
            processor_depth: 3,
            decoder_depth: 2,
            decode_mode: DecodeMode::Elementwise,
        }
    }

    /// Desk-scale configuration for tests and the bundled trainer.
    pub fn tiny(global_feat_dim: usize) -> Self {
        GnnConfig {
            embed_dim: 8,
            mlp_width: 16,
            node_feat_dim: 9,
            edge_feat_dim: 4,
            global_feat_dim,
            rounds: 1,
            encoder_depth: 2,
            global_encoder_depth: 2,
            processor_depth: 2,
            decoder_depth: 2,
            decode_mode: DecodeMode::Dot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("mlp_width", self.mlp_width),
            ("node_feat_dim", self.node_feat_dim),
            ("edge_feat_dim", self.edge_feat_dim),
            ("global_feat_dim", self.global_feat_dim),
            ("rounds", self.rounds),
            ("encoder_depth", self.encoder_depth),
            ("global_encoder_depth", self.global_encoder_depth),
            ("processor_depth", self.processor_depth),
            ("decoder_depth", self.decoder_depth),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.global_feat_dim < 2 {
            return Err(Error::InvalidConfig(
                "global_feat_dim counts [t, dt, globals...] and must be >= 2".into(),
            ));
        }
        Ok(())
    }

    fn decoder_in_dim(&self) -> usize {
        match self.decode_mode {
            DecodeMode::Dot => 1,
            DecodeMode::Elementwise => self.embed_dim,
        }
    }

    /// Exact number of trainable scalars, in closed form.
    pub fn param_count(&self) -> usize {
        let e = self.embed_dim;
        let w = self.mlp_width;
        let encoders = mlp_param_count(self.global_feat_dim, w, self.global_encoder_depth, e)
            + mlp_param_count(self.node_feat_dim, w, self.encoder_depth, e)
            + 2 * mlp_param_count(self.edge_feat_dim, w, self.encoder_depth, e);
        let per_round = 3 * mlp_param_count(3 * e, w, self.processor_depth, e);
        let decoders = 3 * mlp_param_count(self.decoder_in_dim(), w, self.decoder_depth, 1);
        encoders + self.rounds * per_round + decoders
    }
}

/// Message and update functions for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundParams {
    pub phi_mesh: MlpParams,
    pub phi_world: MlpParams,
    pub gamma: MlpParams,
}

/// Every trainable parameter of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub config: GnnConfig,
    pub enc_g: MlpParams,
    pub enc_x: MlpParams,
    pub enc_e_mesh: MlpParams,
    pub enc_e_world: MlpParams,
    pub rounds: Vec<RoundParams>,
    pub decoders: [MlpParams; 3],
}

impl GnnParams {
    fn build(config: GnnConfig, mut make: impl FnMut(usize, usize, usize, usize) -> MlpParams) -> Self {
        let e = config.embed_dim;
        let w = config.mlp_width;
        let enc_g = make(config.global_feat_dim, w, config.global_encoder_depth, e);
        let enc_x = make(config.node_feat_dim, w, config.encoder_depth, e);
        let enc_e_mesh = make(config.edge_feat_dim, w, config.encoder_depth, e);
        let enc_e_world = make(config.edge_feat_dim, w, config.encoder_depth, e);
        let rounds = (0..config.rounds)
            .map(|_| RoundParams {
                phi_mesh: make(3 * e, w, config.processor_depth, e),
                phi_world: make(3 * e, w, config.processor_depth, e),
                gamma: make(3 * e, w, config.processor_depth, e),
            })
            .collect();
        let din = config.decoder_in_dim();
        let decoders = [
            make(din, w, config.decoder_depth, 1),
            make(din, w, config.decoder_depth, 1),
            make(din, w, config.decoder_depth, 1),
        ];
        GnnParams {
            config,
            enc_g,
            enc_x,
            enc_e_mesh,
            enc_e_world,
            rounds,
            decoders,
        }
    }

    /// Seed-determined initialization. Components fill in declaration order
    /// (encoders, rounds, decoders) from one ChaCha8 stream, so equal seeds
    /// give bit-identical parameters.
    pub fn init(config: GnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |i, w, d, o| {
            MlpParams::init(i, w, d, o, &mut rng)
        }))
    }

    pub fn zeros(config: GnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, MlpParams::zeros))
    }

    fn mlps(&self) -> Vec<&MlpParams> {
        let mut v = vec![&self.enc_g, &self.enc_x, &self.enc_e_mesh, &self.enc_e_world];
        for r in &self.rounds {
            v.push(&r.phi_mesh);
            v.push(&r.phi_world);
            v.push(&r.gamma);
        }
        v.extend(self.decoders.iter());
        v
    }

    fn mlps_mut(&mut self) -> Vec<&mut MlpParams> {
        let mut v: Vec<&mut MlpParams> = vec![
            &mut self.enc_g,
            &mut self.enc_x,
            &mut self.enc_e_mesh,
            &mut self.enc_e_world,
        ];
        for r in &mut self.rounds {
            v.push(&mut r.phi_mesh);
            v.push(&mut r.phi_world);
            v.push(&mut r.gamma);
        }
        v.extend(self.decoders.iter_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        self.mlps().iter().map(|m| m.num_params()).sum()
    }

    /// All parameters in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.mlps() {
            m.append_flat(&mut out);
        }
        out
    }

    pub fn from_flat(config: GnnConfig, data: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut pos = 0;
        for m in params.mlps_mut() {
            m.read_flat(data, &mut pos)?;
        }
        if pos != data.len() {
            return Err(Error::Checkpoint(format!(
                "parameter stream has {} values but the config needs {}",
                data.len(),
                pos
            )));
        }
        Ok(params)
    }

    /// self += s * other, used for gradient accumulation and updates.
    pub fn add_scaled(&mut self, other: &GnnParams, s: f64) {
        let others = other.mlps();
        for (mine, theirs) in self.mlps_mut().into_iter().zip(others) {
            mine.add_scaled(theirs, s);
        }
    }
}

/// Embedded graph state between pipeline stages.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub g: DVector<f64>,
    pub x: Vec<DVector<f64>>,
    pub e_mesh: Vec<DVector<f64>>,
    pub e_world: Vec<DVector<f64>>,
}

pub(crate) fn concat3(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.len() + b.len() + c.len(),
        a.iter().chain(b.iter()).chain(c.iter()).copied(),
    )
}

/// For each directed edge, the index of its reverse. Errors when a reverse
/// orientation is missing, since skew symmetrization needs both.
pub fn reverse_index(edges: &[(usize, usize)]) -> Result<Vec<usize>> {
    let map: HashMap<(usize, usize), usize> =
        edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
    edges
        .iter()
        .map(|&(i, j)| {
            map.get(&(j, i)).copied().ok_or_else(|| {
                Error::InvalidMesh(format!(
                    "directed edge list is missing the reverse of ({i}, {j})"
                ))
            })
        })
        .collect()
}

pub(crate) fn check_sample_dims(sample: &GraphSample, cfg: &GnnConfig) -> Result<()> {
    if sample.g.len() != cfg.global_feat_dim {
        return Err(Error::DimMismatch(format!(
            "sample has {} graph features but the config expects {}",
            sample.g.len(),
            cfg.global_feat_dim
        )));
    }
    if cfg.node_feat_dim != 9 || cfg.edge_feat_dim != 4 {
        return Err(Error::DimMismatch(format!(
            "samples carry 9 node and 4 edge features, config wants {} and {}",
            cfg.node_feat_dim, cfg.edge_feat_dim
        )));
    }
    if sample.mesh_edge_feats.len() != sample.mesh_edges.len()
        || sample.world_edge_feats.len() != sample.world_edges.len()
    {
        return Err(Error::DimMismatch(
            "edge feature rows do not match edge lists".into(),
        ));
    }
    Ok(())
}

/// Maps each raw feature through its encoder.
pub fn encode(sample: &GraphSample, params: &GnnParams) -> Result<Embeddings> {
    check_sample_dims(sample, &params.config)?;
    let g = params.enc_g.forward(&DVector::from_vec(sample.g.clone()))?;
    let x = sample
        .nodes
        .iter()
        .map(|n| params.enc_x.forward(&DVector::from_row_slice(&n.features())))
        .collect::<Result<Vec<_>>>()?;
    let e_mesh = sample
        .mesh_edge_feats
        .iter()
        .map(|f| params.enc_e_mesh.forward(&DVector::from_row_slice(f)))
        .collect::<Result<Vec<_>>>()?;
    let e_world = sample
        .world_edge_feats
        .iter()
        .map(|f| params.enc_e_world.forward(&DVector::from_row_slice(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Embeddings {
        g,
        x,
        e_mesh,
        e_world,
    })
}

fn raw_messages(
    phi: &MlpParams,
    x: &[DVector<f64>],
    e: &[DVector<f64>],
    edges: &[(usize, usize)],
) -> Result<Vec<DVector<f64>>> {
    edges
        .iter()
        .zip(e.iter())
        .map(|(&(i, j), ea)| phi.forward(&concat3(&x[i], &x[j], ea)))
        .collect()
}

fn skew_symmetrize(m: &[DVector<f64>], rev: &[usize]) -> Vec<DVector<f64>> {
    m.iter()
        .enumerate()
        .map(|(a, ma)| (ma - &m[rev[a]]) * 0.5)
        .collect()
}

/// Sums the skew messages onto their source nodes in edge-index order.
fn aggregate(
    skew: &[DVector<f64>],
    edges: &[(usize, usize)],
    num_nodes: usize,
    embed_dim: usize,
) -> Vec<DVector<f64>> {
    let mut agg = vec![DVector::zeros(embed_dim); num_nodes];
    for (a, &(i, _)) in edges.iter().enumerate() {
        agg[i] += &skew[a];
    }
    agg
}

/// One round of message passing. Node embeddings are replaced through the
/// update function; edge embeddings accumulate their skew message. Returns
/// the skew messages of both edge types for inspection.
#[allow(clippy::too_many_arguments)]
pub fn message_round(
    round: &RoundParams,
    emb: &mut Embeddings,
    mesh_edges: &[(usize, usize)],
    mesh_rev: &[usize],
    world_edges: &[(usize, usize)],
    world_rev: &[usize],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let embed_dim = emb.g.len();
    let n = emb.x.len();

    let m_mesh = raw_messages(&round.phi_mesh, &emb.x, &emb.e_mesh, mesh_edges)?;
    let m_world = raw_messages(&round.phi_world, &emb.x, &emb.e_world, world_edges)?;
    let skew_mesh = skew_symmetrize(&m_mesh, mesh_rev);
    let skew_world = skew_symmetrize(&m_world, world_rev);

    let agg_mesh = aggregate(&skew_mesh, mesh_edges, n, embed_dim);
    let agg_world = aggregate(&skew_world, world_edges, n, embed_dim);

    let mut new_x = Vec::with_capacity(n);
    for i in 0..n {
        new_x.push(
            round
                .gamma
                .forward(&concat3(&emb.x[i], &agg_mesh[i], &agg_world[i]))?,
        );
    }
    emb.x = new_x;
    for (a, s) in skew_mesh.iter().enumerate() {
        emb.e_mesh[a] += s;
    }
    for (a, s) in skew_world.iter().enumerate() {
        emb.e_world[a] += s;
    }
    Ok((skew_mesh, skew_world))
}

/// Combines each final node embedding with the graph embedding and runs the
/// three component decoders.
pub fn decode(
    x_final: &[DVector<f64>],
    g: &DVector<f64>,
    params: &GnnParams,
) -> Result<Vec<V3>> {
    let mut out = Vec::with_capacity(x_final.len());
    for x in x_final {
        let input = match params.config.decode_mode {
            DecodeMode::Dot => DVector::from_element(1, x.dot(g)),
            DecodeMode::Elementwise => x.component_mul(g),
        };
        out.push(V3::new(
            params.decoders[0].forward(&input)?[0],
            params.decoders[1].forward(&input)?[0],
            params.decoders[2].forward(&input)?[0],
        ));
    }
    Ok(out)
}

/// Full forward pass: encode, k message rounds, decode.
pub fn predict_accelerations(sample: &GraphSample, params: &GnnParams) -> Result<Vec<V3>> {
    let mesh_rev = reverse_index(&sample.mesh_edges)?;
    let world_rev = reverse_index(&sample.world_edges)?;
    let mut emb = encode(sample, params)?;
    for round in &params.rounds {
        message_round(
            round,
            &mut emb,
            &sample.mesh_edges,
            &mesh_rev,
            &sample.world_edges,
            &world_rev,
        )?;
    }
    decode(&emb.x, &emb.g, params)
}

/// Forward pass that keeps the per-round skew messages.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub predictions: Vec<V3>,
    /// Indexed [round][directed mesh edge].
    pub skew_mesh: Vec<Vec<DVector<f64>>>,
    /// Indexed [round][directed world edge].
    pub skew_world: Vec<Vec<DVector<f64>>>,
}

pub fn forward_trace(sample: &GraphSample, params: &GnnParams) -> Result<ForwardTrace> {
    let mesh_rev = reverse_index(&sample.mesh_edges)?;
    let world_rev = reverse_index(&sample.world_edges)?;
    let mut emb = encode(sample, params)?;
    let mut skew_mesh = Vec::with_capacity(params.rounds.len());
    let mut skew_world = Vec::with_capacity(params.rounds.len());
    for round in &params.rounds {
        let (sm, sw) = message_round(
            round,
            &mut emb,
            &sample.mesh_edges,
            &mesh_rev,
            &sample.world_edges,
            &world_rev,
        )?;
        skew_mesh.push(sm);
        skew_world.push(sw);
    }
    let predictions = decode(&emb.x, &emb.g, params)?;
    Ok(ForwardTrace {
        predictions,
        skew_mesh,
        skew_world,
    })
}

/// Double integration of predicted accelerations over one step:
/// v+ = v + y dt and r+ = r + v dt + y dt^2 / 2.
pub fn integrate_step(nodes: &[NodeState], y: &[V3], dt: f64) -> Result<Vec<NodeState>> {
    if nodes.len() != y.len() {
        return Err(Error::DimMismatch(format!(
            "{} nodes but {} accelerations",
            nodes.len(),
            y.len()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("bad dt {dt}")));
    }
    Ok(nodes
        .iter()
        .zip(y.iter())
        .map(|(n, &a)| NodeState {
            r: n.r + n.v * dt + a * (0.5 * dt * dt),
            v: n.v + a * dt,
            a,
        })
        .collect())
}

/// The step trajectory handed to collision detection: uniform average
/// velocity between the current and the integrated next positions.
pub fn predicted_trajectory(nodes: &[NodeState], y: &[V3], dt: f64) -> Result<Trajectory> {
    let next = integrate_step(nodes, y, dt)?;
    let r0: Vec<V3> = nodes.iter().map(|n| n.r).collect();
    let r1: Vec<V3> = next.iter().map(|n| n.r).collect();
    Ok(Trajectory::from_endpoints(r0, &r1, dt))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GNCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    config: GnnConfig,
    seed: u64,
}

/// Writes a parameter checkpoint: magic bytes, a JSON header with config and
/// seed, then every parameter as little-endian doubles in declaration order.
/// A JSON sidecar `<path>.json` repeats the header for external tools.
pub fn save_checkpoint(params: &GnnParams, seed: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        config: params.config,
        seed,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    let flat = params.flatten();

    let mut buf = Vec::with_capacity(24 + header_json.len() + 8 * flat.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in &flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.json", ext.to_string_lossy()),
        None => "json".into(),
    });
    crate::jsonio::save_json(&sidecar, &header)?;
    Ok(())
}

/// Reads a checkpoint written by `save_checkpoint` and returns the
/// parameters and the recorded seed.
pub fn load_checkpoint(path: &Path) -> Result<(GnnParams, u64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let fail = |detail: &str| Error::Checkpoint(format!("{}: {detail}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("missing or unknown magic bytes"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end + 8 {
        return Err(fail("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| fail(&format!("bad header json: {e}")))?;
    let count =
        u64::from_le_bytes(bytes[header_end..header_end + 8].try_into().unwrap()) as usize;
    let data_start = header_end + 8;
    if bytes.len() != data_start + 8 * count {
        return Err(fail(&format!(
            "expected {count} doubles but file holds {} bytes of data",
            bytes.len() - data_start
        )));
    }
    let flat: Vec<f64> = bytes[data_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = GnnParams::from_flat(header.config, &flat)?;
    Ok((params, header.seed))
}
