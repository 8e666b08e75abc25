//! Reverse-mode gradients of the training losses through the full network.
//!
//! The dynamic term backpropagates the mean-squared acceleration error. The
//! contact term runs collision detection on the step predicted from the
//! current parameters, freezes which sub-tests fired, and differentiates
//! only their response distances through the end-of-step positions, whose
//! sensitivity to the predicted accelerations is dt^2 / 2 per component.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::ccd::{
    detect_contacts, event_node_quad, event_response_grad_at, recompute_field, CcdConfig,
    CollisionEvent, ContactScene,
};
use crate::error::{Error, Result};
use crate::graph::GraphSample;
use crate::loss::LossWeights;
use crate::mesh::TriMesh;

use super::mlp::MlpCache;
use super::{
    check_sample_dims, concat3, predict_accelerations, predicted_trajectory, reverse_index,
    DecodeMode, GnnParams,
};

type V3 = Vector3<f64>;

/// Per-round forward records.
#[derive(Debug)]
struct RoundCache {
    phi_mesh: Vec<MlpCache>,
    phi_world: Vec<MlpCache>,
    gamma: Vec<MlpCache>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug)]
pub struct GnnCache {
    enc_g: MlpCache,
    enc_x: Vec<MlpCache>,
    enc_e_mesh: Vec<MlpCache>,
    enc_e_world: Vec<MlpCache>,
    rounds: Vec<RoundCache>,
    dec: Vec<[MlpCache; 3]>,
    x_final: Vec<DVector<f64>>,
    g: DVector<f64>,
    mesh_rev: Vec<usize>,
    world_rev: Vec<usize>,
}

/// Forward pass recording every intermediate needed for backpropagation.
/// Produces bit-identical predictions to `predict_accelerations`.
pub fn forward_with_cache(
    sample: &GraphSample,
    params: &GnnParams,
) -> Result<(Vec<V3>, GnnCache)> {
    let cfg = &params.config;
    check_sample_dims(sample, cfg)?;
    let embed = cfg.embed_dim;
    let n = sample.nodes.len();
    let mesh_rev = reverse_index(&sample.mesh_edges)?;
    let world_rev = reverse_index(&sample.world_edges)?;

    let (g, enc_g) = params
        .enc_g
        .forward_cached(&DVector::from_vec(sample.g.clone()))?;
    let mut x = Vec::with_capacity(n);
    let mut enc_x = Vec::with_capacity(n);
    for node in &sample.nodes {
        let (xe, c) = params
            .enc_x
            .forward_cached(&DVector::from_row_slice(&node.features()))?;
        x.push(xe);
        enc_x.push(c);
    }
    let mut e_mesh = Vec::with_capacity(sample.mesh_edges.len());
    let mut enc_e_mesh = Vec::with_capacity(sample.mesh_edges.len());
    for f in &sample.mesh_edge_feats {
        let (ee, c) = params.enc_e_mesh.forward_cached(&DVector::from_row_slice(f))?;
        e_mesh.push(ee);
        enc_e_mesh.push(c);
    }
    let mut e_world = Vec::with_capacity(sample.world_edges.len());
    let mut enc_e_world = Vec::with_capacity(sample.world_edges.len());
    for f in &sample.world_edge_feats {
        let (ee, c) = params
            .enc_e_world
            .forward_cached(&DVector::from_row_slice(f))?;
        e_world.push(ee);
        enc_e_world.push(c);
    }

    let mut rounds = Vec::with_capacity(params.rounds.len());
    for round in &params.rounds {
        let mut phi_mesh = Vec::with_capacity(sample.mesh_edges.len());
        let mut m_mesh = Vec::with_capacity(sample.mesh_edges.len());
        for (a, &(i, j)) in sample.mesh_edges.iter().enumerate() {
            let (m, c) = round
                .phi_mesh
                .forward_cached(&concat3(&x[i], &x[j], &e_mesh[a]))?;
            m_mesh.push(m);
            phi_mesh.push(c);
        }
        let mut phi_world = Vec::with_capacity(sample.world_edges.len());
        let mut m_world = Vec::with_capacity(sample.world_edges.len());
        for (a, &(i, j)) in sample.world_edges.iter().enumerate() {
            let (m, c) = round
                .phi_world
                .forward_cached(&concat3(&x[i], &x[j], &e_world[a]))?;
            m_world.push(m);
            phi_world.push(c);
        }

        let skew_mesh: Vec<DVector<f64>> = (0..m_mesh.len())
            .map(|a| (&m_mesh[a] - &m_mesh[mesh_rev[a]]) * 0.5)
            .collect();
        let skew_world: Vec<DVector<f64>> = (0..m_world.len())
            .map(|a| (&m_world[a] - &m_world[world_rev[a]]) * 0.5)
            .collect();

        let mut agg_m = vec![DVector::zeros(embed); n];
        for (a, &(i, _)) in sample.mesh_edges.iter().enumerate() {
            agg_m[i] += &skew_mesh[a];
        }
        let mut agg_w = vec![DVector::zeros(embed); n];
        for (a, &(i, _)) in sample.world_edges.iter().enumerate() {
            agg_w[i] += &skew_world[a];
        }

        let mut gamma = Vec::with_capacity(n);
        let mut new_x = Vec::with_capacity(n);
        for i in 0..n {
            let (nx, c) = round
                .gamma
                .forward_cached(&concat3(&x[i], &agg_m[i], &agg_w[i]))?;
            new_x.push(nx);
            gamma.push(c);
        }
        x = new_x;
        for (a, s) in skew_mesh.iter().enumerate() {
            e_mesh[a] += s;
        }
        for (a, s) in skew_world.iter().enumerate() {
            e_world[a] += s;
        }
        rounds.push(RoundCache {
            phi_mesh,
            phi_world,
            gamma,
        });
    }

    let mut predictions = Vec::with_capacity(n);
    let mut dec = Vec::with_capacity(n);
    for xi in &x {
        let input = match cfg.decode_mode {
            DecodeMode::Dot => DVector::from_element(1, xi.dot(&g)),
            DecodeMode::Elementwise => xi.component_mul(&g),
        };
        let (y0, c0) = params.decoders[0].forward_cached(&input)?;
        let (y1, c1) = params.decoders[1].forward_cached(&input)?;
        let (y2, c2) = params.decoders[2].forward_cached(&input)?;
        predictions.push(V3::new(y0[0], y1[0], y2[0]));
        dec.push([c0, c1, c2]);
    }

    Ok((
        predictions,
        GnnCache {
            enc_g,
            enc_x,
            enc_e_mesh,
            enc_e_world,
            rounds,
            dec,
            x_final: x,
            g,
            mesh_rev,
            world_rev,
        },
    ))
}

/// Backpropagates d(loss)/d(predictions) through the cached forward pass,
/// accumulating parameter gradients into `grads`.
pub fn backward(
    params: &GnnParams,
    sample: &GraphSample,
    cache: &GnnCache,
    dldy: &[V3],
    grads: &mut GnnParams,
) -> Result<()> {
    let cfg = &params.config;
    let embed = cfg.embed_dim;
    let n = cache.x_final.len();
    if dldy.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} prediction gradients for {} nodes",
            dldy.len(),
            n
        )));
    }

    let mut dx: Vec<DVector<f64>> = vec![DVector::zeros(embed); n];
    let mut dg = DVector::zeros(embed);
    for i in 0..n {
        let mut dinput = DVector::zeros(cfg.decoder_in_dim());
        for m in 0..3 {
            let go = DVector::from_element(1, dldy[i][m]);
            let gi = params.decoders[m].backward(&cache.dec[i][m], &go, &mut grads.decoders[m]);
            dinput += gi;
        }
        match cfg.decode_mode {
            DecodeMode::Dot => {
                let s = dinput[0];
                dx[i].axpy(s, &cache.g, 1.0);
                dg.axpy(s, &cache.x_final[i], 1.0);
            }
            DecodeMode::Elementwise => {
                dx[i] += dinput.component_mul(&cache.g);
                dg += dinput.component_mul(&cache.x_final[i]);
            }
        }
    }

    let mut de_mesh: Vec<DVector<f64>> = vec![DVector::zeros(embed); sample.mesh_edges.len()];
    let mut de_world: Vec<DVector<f64>> = vec![DVector::zeros(embed); sample.world_edges.len()];

    for (r, rc) in cache.rounds.iter().enumerate().rev() {
        let rp = &params.rounds[r];
        let gr = &mut grads.rounds[r];
        let mut dx_in: Vec<DVector<f64>> = vec![DVector::zeros(embed); n];
        let mut dagg_m: Vec<DVector<f64>> = vec![DVector::zeros(embed); n];
        let mut dagg_w: Vec<DVector<f64>> = vec![DVector::zeros(embed); n];
        for i in 0..n {
            let gi = rp.gamma.backward(&rc.gamma[i], &dx[i], &mut gr.gamma);
            dx_in[i] += gi.rows(0, embed);
            dagg_m[i] += gi.rows(embed, embed);
            dagg_w[i] += gi.rows(2 * embed, embed);
        }

        // Mesh-space edges: the skew message feeds both the source node's
        // aggregate and the edge update, and the raw message of edge a also
        // enters edge rev(a) with a negative sign.
        for (edges, rev, phi, caches, phi_grads, de, dagg) in [
            (
                &sample.mesh_edges,
                &cache.mesh_rev,
                &rp.phi_mesh,
                &rc.phi_mesh,
                &mut gr.phi_mesh,
                &mut de_mesh,
                &dagg_m,
            ),
            (
                &sample.world_edges,
                &cache.world_rev,
                &rp.phi_world,
                &rc.phi_world,
                &mut gr.phi_world,
                &mut de_world,
                &dagg_w,
            ),
        ] {
            let count = edges.len();
            let dskew: Vec<DVector<f64>> = (0..count)
                .map(|a| &de[a] + &dagg[edges[a].0])
                .collect();
            let mut dm: Vec<DVector<f64>> = vec![DVector::zeros(embed); count];
            for a in 0..count {
                dm[a].axpy(0.5, &dskew[a], 1.0);
                dm[rev[a]].axpy(-0.5, &dskew[a], 1.0);
            }
            for a in 0..count {
                let gi = phi.backward(&caches[a], &dm[a], phi_grads);
                let (i, j) = edges[a];
                dx_in[i] += gi.rows(0, embed);
                dx_in[j] += gi.rows(embed, embed);
                de[a] += gi.rows(2 * embed, embed);
            }
        }
        dx = dx_in;
    }

    for i in 0..n {
        params.enc_x.backward(&cache.enc_x[i], &dx[i], &mut grads.enc_x);
    }
    for (a, d) in de_mesh.iter().enumerate() {
        params
            .enc_e_mesh
            .backward(&cache.enc_e_mesh[a], d, &mut grads.enc_e_mesh);
    }
    for (a, d) in de_world.iter().enumerate() {
        params
            .enc_e_world
            .backward(&cache.enc_e_world[a], d, &mut grads.enc_e_world);
    }
    params.enc_g.backward(&cache.enc_g, &dg, &mut grads.enc_g);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Dynamic,
    DynamicContact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub dynamic: f64,
    pub contact: f64,
}

/// Frozen contact classification of one sample's predicted step.
#[derive(Debug, Clone)]
pub struct SampleContact {
    pub events: Vec<CollisionEvent>,
    /// Degenerate-face threshold of the base detection, kept fixed when
    /// responses are re-evaluated at perturbed positions.
    pub area_tol: f64,
}

#[derive(Debug)]
pub struct LossGradient {
    pub loss: BatchLoss,
    pub grads: GnnParams,
    /// Per-sample frozen classifications; None when contact was inactive.
    pub contacts: Vec<Option<SampleContact>>,
}

fn batch_node_count(batch: &[GraphSample], mesh: &TriMesh) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::DimMismatch("empty training batch".into()));
    }
    let n = batch[0].nodes.len();
    if batch.iter().any(|s| s.nodes.len() != n) {
        return Err(Error::DimMismatch(
            "graphs in one batch must share the node count".into(),
        ));
    }
    if n != mesh.num_nodes() {
        return Err(Error::DimMismatch(format!(
            "batch graphs have {n} nodes but the mesh has {}",
            mesh.num_nodes()
        )));
    }
    Ok(n)
}

/// Gradient of the total loss over one batch with respect to every
/// parameter. With `LossMode::DynamicContact` and a positive contact weight,
/// each sample's predicted step is collision checked and the fired sub-tests
/// contribute their response gradients. A non-finite total loss is rejected
/// with the offending batch id (the caller supplies the epoch context).
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient(
    params: &GnnParams,
    batch: &[GraphSample],
    mesh: &TriMesh,
    l_c: f64,
    ccd_cfg: &CcdConfig,
    weights: &LossWeights,
    mode: LossMode,
    batch_id: usize,
) -> Result<LossGradient> {
    weights.validate()?;
    if !(l_c.is_finite() && l_c > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "length scale must be positive, got {l_c}"
        )));
    }
    let n_nodes = batch_node_count(batch, mesh)?;
    let n_b = batch.len() as f64;
    let contact_active = mode == LossMode::DynamicContact && weights.w_c > 0.0;
    let total_tris = (batch.len() * mesh.num_triangles()) as f64;

    let mut grads = GnnParams::zeros(params.config)?;
    let mut dyn_sum = 0.0;
    let mut contact_sum = 0.0;
    let mut contacts = Vec::with_capacity(batch.len());

    for sample in batch {
        let targets = sample.targets.as_ref().ok_or_else(|| {
            Error::InvalidConfig("training sample lacks target accelerations".into())
        })?;
        let (y_hat, cache) = forward_with_cache(sample, params)?;

        let dyn_scale = 2.0 * weights.w_d / (3.0 * n_b * n_nodes as f64);
        let mut dldy: Vec<V3> = Vec::with_capacity(n_nodes);
        for (yp, yt) in y_hat.iter().zip(targets.iter()) {
            let d = yp - yt;
            dyn_sum += d.norm_squared();
            dldy.push(dyn_scale * d);
        }

        if contact_active {
            let dt = sample.dt();
            let traj = predicted_trajectory(&sample.nodes, &y_hat, dt)?;
            let scene = ContactScene::self_contact(traj, mesh.triangles.clone())?;
            let scale = scene.scale();
            let area_tol = ccd_cfg.area_tol_factor * scale * scale;
            let field = detect_contacts(&scene, ccd_cfg)?;
            let end = scene.traj.end_positions();
            let coeff = weights.w_c / (l_c * total_tris);
            let half_dt2 = 0.5 * dt * dt;

            for &(tri, r) in &field.entries {
                contact_sum += (r / l_c).abs();
                if r <= 0.0 {
                    continue;
                }
                // First event (in sorted order) attaining the triangle's
                // maximum: the frozen argmax of the response.
                let ev = field
                    .events
                    .iter()
                    .find(|e| (e.tri_a == tri || e.tri_b == tri) && e.response == r);
                let Some(ev) = ev else { continue };
                if ev.degenerate {
                    continue;
                }
                let quad =
                    event_node_quad(ev.kind, scene.triangles[ev.tri_a], scene.triangles[ev.tri_b]);
                let quad_end = quad.map(|nidx| end[nidx]);
                if let Some(g4) = event_response_grad_at(ev.kind, quad_end, area_tol) {
                    for (gk, &nidx) in g4.iter().zip(quad.iter()) {
                        dldy[nidx] += coeff * half_dt2 * gk;
                    }
                }
            }
            contacts.push(Some(SampleContact {
                events: field.events,
                area_tol,
            }));
        } else {
            contacts.push(None);
        }

        backward(params, sample, &cache, &dldy, &mut grads)?;
    }

    let l_d = dyn_sum / (3.0 * n_b * n_nodes as f64);
    let l_c_val = if contact_active {
        contact_sum / total_tris
    } else {
        0.0
    };
    let total = weights.w_d * l_d + weights.w_c * l_c_val;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: batch_id,
        });
    }
    Ok(LossGradient {
        loss: BatchLoss {
            total,
            dynamic: l_d,
            contact: l_c_val,
        },
        grads,
        contacts,
    })
}

/// Total loss at the given parameters with the contact classification pinned
/// to `contacts` (as returned by `loss_gradient`). Responses are re-evaluated
/// at the new predicted end positions; which sub-tests fire does not change.
/// This is the scalar function whose finite differences the analytic
/// gradient must match.
pub fn loss_with_frozen_contacts(
    params: &GnnParams,
    batch: &[GraphSample],
    mesh: &TriMesh,
    l_c: f64,
    weights: &LossWeights,
    contacts: &[Option<SampleContact>],
) -> Result<BatchLoss> {
    let n_nodes = batch_node_count(batch, mesh)?;
    if contacts.len() != batch.len() {
        return Err(Error::DimMismatch(format!(
            "{} frozen contact sets for {} samples",
            contacts.len(),
            batch.len()
        )));
    }
    let n_b = batch.len() as f64;
    let total_tris = (batch.len() * mesh.num_triangles()) as f64;
    let mut dyn_sum = 0.0;
    let mut contact_sum = 0.0;
    let mut any_contact = false;

    for (sample, frozen) in batch.iter().zip(contacts.iter()) {
        let targets = sample.targets.as_ref().ok_or_else(|| {
            Error::InvalidConfig("training sample lacks target accelerations".into())
        })?;
        let y_hat = predict_accelerations(sample, params)?;
        for (yp, yt) in y_hat.iter().zip(targets.iter()) {
            dyn_sum += (yp - yt).norm_squared();
        }
        if let Some(sc) = frozen {
            any_contact = true;
            let traj = predicted_trajectory(&sample.nodes, &y_hat, sample.dt())?;
            let end = traj.end_positions();
            let field = recompute_field(
                &sc.events,
                &mesh.triangles,
                &end,
                mesh.num_triangles(),
                sc.area_tol,
            );
            for &(_, r) in &field.entries {
                contact_sum += (r / l_c).abs();
            }
        }
    }

    let l_d = dyn_sum / (3.0 * n_b * n_nodes as f64);
    let l_c_val = if any_contact {
        contact_sum / total_tris
    } else {
        0.0
    };
    Ok(BatchLoss {
        total: weights.w_d * l_d + weights.w_c * l_c_val,
        dynamic: l_d,
        contact: l_c_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::GnnConfig;
    use crate::graph::{assemble_graph_sample, NodeState};

    fn v(x: f64, y: f64, z: f64) -> V3 {
        V3::new(x, y, z)
    }

    /// Two stacked triangles; the upper one moves down fast enough to punch
    /// through the lower within one step regardless of small predicted
    /// accelerations.
    fn crossing_setup() -> (TriMesh, GraphSample) {
        let mesh = TriMesh::from_triangles(
            vec![
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(0.0, 1.0, 0.0),
                v(0.05, 0.05, 0.5),
                v(0.95, 0.05, 0.5),
                v(0.05, 0.95, 0.5),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let nodes: Vec<NodeState> = mesh
            .positions_ref
            .iter()
            .enumerate()
            .map(|(i, &r)| NodeState {
                r,
                v: if i >= 3 { v(0.0, 0.0, -1.0) } else { V3::zeros() },
                a: V3::zeros(),
            })
            .collect();
        let targets: Vec<V3> = (0..6).map(|i| v(0.01 * i as f64, -0.02, 0.005)).collect();
        let sample =
            assemble_graph_sample(&mesh, nodes, &[0.3], 0.0, 1.0, 2.0, Some(targets)).unwrap();
        (mesh, sample)
    }

    /// Same mesh but drifting apart: no contacts on the predicted step.
    fn separating_setup() -> (TriMesh, GraphSample) {
        let (mesh, _) = crossing_setup();
        let nodes: Vec<NodeState> = mesh
            .positions_ref
            .iter()
            .enumerate()
            .map(|(i, &r)| NodeState {
                r,
                v: if i >= 3 { v(0.0, 0.0, 0.5) } else { V3::zeros() },
                a: V3::zeros(),
            })
            .collect();
        let targets: Vec<V3> = (0..6).map(|i| v(0.0, 0.01 * i as f64, 0.0)).collect();
        let sample =
            assemble_graph_sample(&mesh, nodes, &[0.3], 0.0, 1.0, 2.0, Some(targets)).unwrap();
        (mesh, sample)
    }

    #[test]
    fn cached_forward_matches_plain_forward() {
        let (_, sample) = crossing_setup();
        let params = GnnParams::init(GnnConfig::tiny(3), 13).unwrap();
        let plain = predict_accelerations(&sample, &params).unwrap();
        let (cached, _) = forward_with_cache(&sample, &params).unwrap();
        assert_eq!(plain, cached);
    }

    #[test]
    fn perfect_prediction_without_contacts_gives_zero_gradient() {
        let (mesh, mut sample) = separating_setup();
        let params = GnnParams::init(GnnConfig::tiny(3), 8).unwrap();
        let y = predict_accelerations(&sample, &params).unwrap();
        sample.targets = Some(y);
        let out = loss_gradient(
            &params,
            std::slice::from_ref(&sample),
            &mesh,
            1.0,
            &CcdConfig::default(),
            &LossWeights::dynamic_only(),
            LossMode::Dynamic,
            0,
        )
        .unwrap();
        assert_eq!(out.loss.total, 0.0);
        assert!(out.grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dynamic_gradient_matches_finite_differences() {
        let (mesh, mut sample) = separating_setup();
        // The seed is chosen so no hidden preactivation sits within the
        // finite-difference step of a ReLU kink. Small residuals keep the
        // loss near 1e-4, so the cancellation noise of central differences
        // stays far below the 1e-4 relative tolerance even for gradients
        // just above the 1e-8 magnitude floor.
        let params = GnnParams::init(GnnConfig::tiny(3), 18).unwrap();
        let base = predict_accelerations(&sample, &params).unwrap();
        sample.targets = Some(
            base.iter()
                .enumerate()
                .map(|(i, y)| y + v(0.011, -0.009, 0.008 + 0.001 * i as f64))
                .collect(),
        );
        let weights = LossWeights::dynamic_only();
        let batch = std::slice::from_ref(&sample);
        let out = loss_gradient(
            &params,
            batch,
            &mesh,
            1.0,
            &CcdConfig::default(),
            &weights,
            LossMode::Dynamic,
            0,
        )
        .unwrap();
        assert!(out.loss.total > 0.0);

        let flat = params.flatten();
        let gflat = out.grads.flatten();
        let frozen = vec![None; 1];
        let mut checked = 0;
        for k in 0..flat.len() {
            let h = 1e-6 * (1.0 + flat[k].abs());
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let lp = loss_with_frozen_contacts(
                &GnnParams::from_flat(params.config, &plus).unwrap(),
                batch,
                &mesh,
                1.0,
                &weights,
                &frozen,
            )
            .unwrap()
            .total;
            let lm = loss_with_frozen_contacts(
                &GnnParams::from_flat(params.config, &minus).unwrap(),
                batch,
                &mesh,
                1.0,
                &weights,
                &frozen,
            )
            .unwrap()
            .total;
            let fd = (lp - lm) / (2.0 * h);
            let g = gflat[k];
            if g.abs() > 1e-8 {
                let rel = (g - fd).abs() / g.abs().max(fd.abs());
                assert!(rel <= 1e-4, "param {k}: analytic {g} vs fd {fd} (rel {rel})");
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} parameters carried signal");
    }

    #[test]
    fn contact_gradient_matches_finite_differences_with_pinned_events() {
        let (mesh, mut sample) = crossing_setup();
        let mut params = GnnParams::init(GnnConfig::tiny(3), 29).unwrap();
        // Keep the total loss around 1e-2: scale the decoder outputs so the
        // predicted step stays close to the kinematic sweep (responses well
        // away from zero crossings), aim the targets near the predictions,
        // and use a small contact weight. Finite differences then resolve
        // every gradient above the 1e-8 floor to better than 1e-3.
        for dec in params.decoders.iter_mut() {
            let last = dec.layers.last_mut().unwrap();
            last.w *= 0.05;
            last.b *= 0.05;
        }
        let base = predict_accelerations(&sample, &params).unwrap();
        sample.targets = Some(
            base.iter()
                .enumerate()
                .map(|(i, y)| y + v(-0.009, 0.012, 0.007 + 0.001 * i as f64))
                .collect(),
        );
        let weights = LossWeights { w_d: 1.0, w_c: 0.02 };
        let ccd_cfg = CcdConfig::default();
        let batch = std::slice::from_ref(&sample);
        let out = loss_gradient(
            &params,
            batch,
            &mesh,
            1.0,
            &ccd_cfg,
            &weights,
            LossMode::DynamicContact,
            0,
        )
        .unwrap();
        let events = &out.contacts[0].as_ref().unwrap().events;
        assert!(!events.is_empty(), "test scene must actually collide");
        assert!(out.loss.contact > 0.0);

        let flat = params.flatten();
        let gflat = out.grads.flatten();
        let mut checked = 0;
        for k in 0..flat.len() {
            let h = 1e-6 * (1.0 + flat[k].abs());
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let lp = loss_with_frozen_contacts(
                &GnnParams::from_flat(params.config, &plus).unwrap(),
                batch,
                &mesh,
                1.0,
                &weights,
                &out.contacts,
            )
            .unwrap()
            .total;
            let lm = loss_with_frozen_contacts(
                &GnnParams::from_flat(params.config, &minus).unwrap(),
                batch,
                &mesh,
                1.0,
                &weights,
                &out.contacts,
            )
            .unwrap()
            .total;
            let fd = (lp - lm) / (2.0 * h);
            let g = gflat[k];
            if g.abs() > 1e-8 {
                let rel = (g - fd).abs() / g.abs().max(fd.abs());
                assert!(rel <= 1e-3, "param {k}: analytic {g} vs fd {fd} (rel {rel})");
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} parameters carried signal");
    }

    #[test]
    fn non_finite_loss_reports_batch_id() {
        let (mesh, mut sample) = separating_setup();
        sample.targets = Some(vec![v(1e200, 0.0, 0.0); 6]);
        let params = GnnParams::init(GnnConfig::tiny(3), 3).unwrap();
        let err = loss_gradient(
            &params,
            std::slice::from_ref(&sample),
            &mesh,
            1.0,
            &CcdConfig::default(),
            &LossWeights::dynamic_only(),
            LossMode::Dynamic,
            7,
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { batch, .. } => assert_eq!(batch, 7),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn dynamic_mode_never_runs_detection() {
        // Colliding geometry, but D mode with a contact weight must ignore it.
        let (mesh, sample) = crossing_setup();
        let params = GnnParams::init(GnnConfig::tiny(3), 5).unwrap();
        let out = loss_gradient(
            &params,
            std::slice::from_ref(&sample),
            &mesh,
            1.0,
            &CcdConfig::default(),
            &LossWeights { w_d: 1.0, w_c: 5.0 },
            LossMode::Dynamic,
            0,
        )
        .unwrap();
        assert_eq!(out.loss.contact, 0.0);
        assert!(out.contacts.iter().all(|c| c.is_none()));
    }
}
