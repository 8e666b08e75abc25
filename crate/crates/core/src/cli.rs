//! Command-line interface: scene generation, detection, graph assembly,
//! training, inference, rollout, and benchmarks.
//!
//! Every command reads and writes JSON artifacts (floats at full precision)
//! and emits tabular CSV next to them. Commands without an output directory
//! print their report as JSON on stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::bench_scene;
use crate::ccd::{detect_contacts, CcdConfig, ContactField, SubTestKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{load_checkpoint, save_checkpoint, GnnConfig};
use crate::jsonio;
use crate::rollout::{rollout, RolloutMode, RolloutOutput};
use crate::scene::{generate_scene, GeneratedScene, SceneFile, SceneSpec};
use crate::train::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "contact-gnn", version, about = "Contact detection and surrogate dynamics for thin shells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scene from a spec; membrane and parabola generators also
    /// emit a kinematic dataset bundle.
    GenScene {
        /// Path to a SceneSpec JSON file.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect contacts over one time step of a scene.
    Detect {
        /// Path to a scene JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Use the historical edge-edge test without the collinearity guard.
        #[arg(long)]
        unmodified_ee: bool,
    },
    /// Assemble graph samples from a dataset bundle.
    Graph {
        /// Dataset bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate on a dataset.
    Train {
        /// Dataset bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Path to a JSON file with {"gnn": GnnConfig, "train": TrainConfig}.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Teacher-forced one-step evaluation of a checkpoint on one split.
    Infer {
        /// Checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Split name (train | val | test).
        #[arg(long)]
        split: String,
        /// Optional output directory for report.json and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll a checkpoint out over a split, feeding states forward.
    Rollout {
        /// Checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Rollout mode: tf (teacher-forced) or self.
        #[arg(long)]
        mode: String,
        /// Split name.
        #[arg(long, default_value = "test")]
        split: String,
        /// Optional output directory for the report and trajectories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the detection pipeline stages on a scene.
    Bench {
        /// Path to a scene JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// Number of repetitions (at least 3).
        #[arg(long)]
        reps: usize,
        /// Optional output directory for bench.json and bench.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScene { spec, out } => cmd_gen_scene(&spec, &out),
        Command::Detect {
            scene,
            out,
            unmodified_ee,
        } => cmd_detect(&scene, &out, unmodified_ee),
        Command::Graph { dataset, out } => cmd_graph(&dataset, &out),
        Command::Train {
            dataset,
            config,
            out,
        } => cmd_train(&dataset, &config, &out),
        Command::Infer {
            checkpoint,
            dataset,
            split,
            out,
        } => cmd_infer(&checkpoint, &dataset, &split, out.as_deref()),
        Command::Rollout {
            checkpoint,
            dataset,
            mode,
            split,
            out,
        } => cmd_rollout(&checkpoint, &dataset, &mode, &split, out.as_deref()),
        Command::Bench { scene, reps, out } => cmd_bench(&scene, reps, out.as_deref()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_mode(mode: &str) -> Result<RolloutMode> {
    match mode {
        "tf" => Ok(RolloutMode::TeacherForced),
        "self" => Ok(RolloutMode::SelfRollout),
        other => Err(Error::InvalidConfig(format!(
            "unknown rollout mode {other:?}, expected tf or self"
        ))),
    }
}

#[derive(Debug, Serialize)]
struct BodySummary {
    num_nodes: usize,
    num_triangles: usize,
}

#[derive(Debug, Serialize)]
struct DatasetSummary {
    num_sims: usize,
    num_samples: usize,
    l_c: f64,
    r_collision: f64,
    split_sizes: Vec<(String, usize)>,
}

#[derive(Debug, Serialize)]
struct SceneSummary {
    dt: f64,
    body_a: BodySummary,
    body_b: BodySummary,
    dataset: Option<DatasetSummary>,
}

fn scene_summary(gen: &GeneratedScene) -> SceneSummary {
    let body = |b: &crate::scene::BodyInit| BodySummary {
        num_nodes: b.r0.len(),
        num_triangles: b.triangles.len(),
    };
    SceneSummary {
        dt: gen.scene.dt,
        body_a: body(&gen.scene.body_a),
        body_b: body(&gen.scene.body_b),
        dataset: gen.dataset.as_ref().map(|ds| DatasetSummary {
            num_sims: ds.sims.len(),
            num_samples: ds.num_samples(),
            l_c: ds.meta.l_c,
            r_collision: ds.meta.r_collision,
            split_sizes: vec![
                ("train".into(), ds.meta.splits.train.len()),
                ("val".into(), ds.meta.splits.val.len()),
                ("test".into(), ds.meta.splits.test.len()),
            ],
        }),
    }
}

fn cmd_gen_scene(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: SceneSpec = jsonio::load_json(spec_path)?;
    let gen = generate_scene(&spec)?;
    create_dir(out)?;
    gen.scene.save(out.join("scene.json"))?;
    if let Some(ds) = &gen.dataset {
        ds.save(out.join("dataset"))?;
    }
    let summary = scene_summary(&gen);
    jsonio::save_json(out.join("summary.json"), &summary)?;
    let mut csv = String::from("body,num_nodes,num_triangles\n");
    let _ = writeln!(
        csv,
        "a,{},{}",
        summary.body_a.num_nodes, summary.body_a.num_triangles
    );
    let _ = writeln!(
        csv,
        "b,{},{}",
        summary.body_b.num_nodes, summary.body_b.num_triangles
    );
    jsonio::write_text(out.join("summary.csv"), &csv)?;
    println!("{}", jsonio::to_string_precise(&summary)?);
    Ok(())
}

fn kind_columns(kind: SubTestKind) -> (&'static str, u8) {
    match kind {
        SubTestKind::VertexFace(k) => ("vertex_face", k),
        SubTestKind::EdgeEdge(k) => ("edge_edge", k),
    }
}

fn field_csv(field: &ContactField) -> String {
    let mut out = String::from("triangle,response\n");
    for tri in 0..field.num_triangles {
        let _ = writeln!(out, "{tri},{:.16e}", field.response(tri));
    }
    out
}

fn events_csv(field: &ContactField) -> String {
    let mut out = String::from("tri_a,tri_b,test,index,t_star,response,degenerate\n");
    for e in &field.events {
        let (test, index) = kind_columns(e.kind);
        let _ = writeln!(
            out,
            "{},{},{test},{index},{:.16e},{:.16e},{}",
            e.tri_a, e.tri_b, e.t_star, e.response, e.degenerate
        );
    }
    out
}

fn cmd_detect(scene_path: &Path, out: &Path, unmodified_ee: bool) -> Result<()> {
    let scene_file = SceneFile::load(scene_path)?;
    let scene = scene_file.to_contact_scene()?;
    let config = CcdConfig {
        unmodified_ee,
        ..CcdConfig::default()
    };
    let field = detect_contacts(&scene, &config)?;
    create_dir(out)?;
    jsonio::save_json(out.join("contacts.json"), &field)?;
    jsonio::write_text(out.join("field.csv"), &field_csv(&field))?;
    jsonio::write_text(out.join("events.csv"), &events_csv(&field))?;
    println!(
        "{}",
        jsonio::to_string_precise(&serde_json::json!({
            "num_events": field.events.len(),
            "max_response": field.max_response(),
        }))?
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDump {
    r: [f64; 3],
    v: [f64; 3],
    a: [f64; 3],
}

/// Serializable view of one assembled graph sample.
#[derive(Debug, Serialize, Deserialize)]
struct GraphDump {
    sim: String,
    step: usize,
    g: Vec<f64>,
    nodes: Vec<NodeDump>,
    mesh_edges: Vec<(usize, usize)>,
    mesh_edge_feats: Vec<[f64; 4]>,
    world_edges: Vec<(usize, usize)>,
    world_edge_feats: Vec<[f64; 4]>,
    targets: Option<Vec<[f64; 3]>>,
}

fn cmd_graph(dataset: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    let mut dumps = Vec::with_capacity(ds.num_samples());
    let mut csv = String::from("sim,step,num_nodes,num_mesh_edges,num_world_edges\n");
    for sim in &ds.sims {
        for (step, s) in sim.samples.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{step},{},{},{}",
                sim.name,
                s.num_nodes(),
                s.mesh_edges.len(),
                s.world_edges.len()
            );
            dumps.push(GraphDump {
                sim: sim.name.clone(),
                step,
                g: s.g.clone(),
                nodes: s
                    .nodes
                    .iter()
                    .map(|n| NodeDump {
                        r: n.r.into(),
                        v: n.v.into(),
                        a: n.a.into(),
                    })
                    .collect(),
                mesh_edges: s.mesh_edges.clone(),
                mesh_edge_feats: s.mesh_edge_feats.clone(),
                world_edges: s.world_edges.clone(),
                world_edge_feats: s.world_edge_feats.clone(),
                targets: s
                    .targets
                    .as_ref()
                    .map(|ys| ys.iter().map(|y| (*y).into()).collect()),
            });
        }
    }
    create_dir(out)?;
    jsonio::save_json(out.join("graphs.json"), &dumps)?;
    jsonio::write_text(out.join("graphs.csv"), &csv)?;
    println!(
        "{}",
        jsonio::to_string_precise(&serde_json::json!({
            "num_sims": ds.sims.len(),
            "num_samples": dumps.len(),
        }))?
    );
    Ok(())
}

/// On-disk training configuration: the network and the optimizer protocol.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub gnn: GnnConfig,
    pub train: TrainConfig,
}

fn history_csv(history: &[crate::train::EpochLog]) -> String {
    let mut out = String::from(
        "epoch,lr,w_c,train_total,train_dynamic,train_contact,train_position,\
         val_total,val_dynamic,val_contact,val_position\n",
    );
    for log in history {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            log.epoch,
            log.lr,
            log.w_c,
            log.train.total,
            log.train.dynamic,
            log.train.contact,
            log.train.position,
            log.val.total,
            log.val.dynamic,
            log.val.contact,
            log.val.position
        );
    }
    out
}

fn cmd_train(dataset: &Path, config_path: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::load(dataset)?;
    let cfg: TrainFileConfig = jsonio::load_json(config_path)?;
    let result = train(&cfg.train, &ds, cfg.gnn)?;
    create_dir(out)?;
    jsonio::save_json(out.join("history.json"), &result.history)?;
    jsonio::write_text(out.join("history.csv"), &history_csv(&result.history))?;
    save_checkpoint(&result.params, cfg.train.seed, &out.join("checkpoint.bin"))?;
    for (epoch, params) in &result.snapshots {
        save_checkpoint(
            params,
            cfg.train.seed,
            &out.join(format!("checkpoint_epoch_{epoch:04}.bin")),
        )?;
    }
    let last = result.history.last();
    println!(
        "{}",
        jsonio::to_string_precise(&serde_json::json!({
            "epochs": result.history.len(),
            "w_c": result.w_c,
            "final_train_total": last.map(|l| l.train.total),
            "final_val_total": last.map(|l| l.val.total),
        }))?
    );
    Ok(())
}

fn write_report(output: &RolloutOutput, out: Option<&Path>, trajectories: bool) -> Result<()> {
    if let Some(dir) = out {
        create_dir(dir)?;
        jsonio::save_json(dir.join("report.json"), &output.report)?;
        jsonio::write_text(dir.join("report.csv"), &output.report.to_csv())?;
        if trajectories {
            jsonio::save_json(dir.join("trajectories.json"), &output.sims)?;
        }
    }
    println!("{}", jsonio::to_string_precise(&output.report)?);
    Ok(())
}

fn cmd_infer(checkpoint: &Path, dataset: &Path, split: &str, out: Option<&Path>) -> Result<()> {
    let (params, _seed) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(dataset)?;
    let output = rollout(
        &params,
        &ds,
        split,
        RolloutMode::TeacherForced,
        &CcdConfig::default(),
    )?;
    write_report(&output, out, false)
}

fn cmd_rollout(
    checkpoint: &Path,
    dataset: &Path,
    mode: &str,
    split: &str,
    out: Option<&Path>,
) -> Result<()> {
    let mode = parse_mode(mode)?;
    let (params, _seed) = load_checkpoint(checkpoint)?;
    let ds = Dataset::load(dataset)?;
    let output = rollout(&params, &ds, split, mode, &CcdConfig::default())?;
    write_report(&output, out, true)
}

fn cmd_bench(scene_path: &Path, reps: usize, out: Option<&Path>) -> Result<()> {
    let scene_file = SceneFile::load(scene_path)?;
    let scene = scene_file.to_contact_scene()?;
    let report = bench_scene(&scene, &CcdConfig::default(), reps)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        jsonio::save_json(dir.join("bench.json"), &report)?;
        jsonio::write_text(dir.join("bench.csv"), &report.to_csv())?;
    }
    println!("{}", jsonio::to_string_precise(&report)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollout_mode_strings_match_the_serde_names() {
        assert_eq!(parse_mode("tf").unwrap(), RolloutMode::TeacherForced);
        assert_eq!(parse_mode("self").unwrap(), RolloutMode::SelfRollout);
        assert!(parse_mode("teacher").is_err());
    }

    #[test]
    fn event_rows_expand_the_subtest_kind() {
        assert_eq!(kind_columns(SubTestKind::VertexFace(4)), ("vertex_face", 4));
        assert_eq!(kind_columns(SubTestKind::EdgeEdge(7)), ("edge_edge", 7));
    }

    #[test]
    fn field_csv_lists_every_triangle_densely() {
        let field = ContactField {
            num_triangles: 3,
            entries: vec![(1, 0.25)],
            events: Vec::new(),
        };
        let csv = field_csv(&field);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0"));
        assert!(lines[2].starts_with("1,2.5"));
    }

    #[test]
    fn train_file_config_rejects_unknown_fields() {
        let bad = r#"{"gnn": {}, "train": {}, "extra": 1}"#;
        assert!(serde_json::from_str::<TrainFileConfig>(bad).is_err());
    }

    #[test]
    fn cli_parses_the_documented_invocations() {
        for argv in [
            vec!["contact-gnn", "gen-scene", "--spec", "s.json", "--out", "d"],
            vec!["contact-gnn", "detect", "--scene", "s.json", "--out", "d", "--unmodified-ee"],
            vec!["contact-gnn", "graph", "--dataset", "d", "--out", "o"],
            vec!["contact-gnn", "train", "--dataset", "d", "--config", "c.json", "--out", "o"],
            vec!["contact-gnn", "infer", "--checkpoint", "c.bin", "--dataset", "d", "--split", "val"],
            vec!["contact-gnn", "rollout", "--checkpoint", "c.bin", "--dataset", "d", "--mode", "self"],
            vec!["contact-gnn", "bench", "--scene", "s.json", "--reps", "5"],
        ] {
            Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
    }
}
