//! Subcommand drivers. Each returns the deterministic stdout payload plus a
//! process exit code; wall-clock timing goes straight to stderr so output
//! files stay byte-stable.
//!
//! Exit codes: 0 success, 2 a produced or supplied artifact failed
//! validation, 3 the inputs could not be turned into a problem at all.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use raggedshard::mesh::{DistTensor, MeshError, SimMesh};
use raggedshard::muon::{muon_step, reference_step, MuonConfig, RootLedger, TrainError};
use raggedshard::placement::Placement;
use raggedshard::planner::{
    solve, validate_plan, LayoutPlan, PlanEntry, PlanError, PlanProblem, TensorOrdering,
};
use raggedshard::quant::{
    blockwise_dequantize, blockwise_quantize, first_split_tile, QuantBlockSpec, QuantError,
};
use raggedshard::tensor::TensorSpec;

use crate::config::{coll_unit_elems, ConfigError, ModelConfig, PlanGroup};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("{0}")]
    Document(String),
}

/// What a subcommand wants printed and how the process should exit.
pub struct CmdOutput {
    pub stdout: String,
    pub exit: i32,
}

impl CmdOutput {
    fn ok(stdout: String) -> Self {
        Self { stdout, exit: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlanRequest {
    pub devices: u32,
    pub gcoll_bytes: u64,
    pub ordering: TensorOrdering,
    pub rows_override: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub group: String,
    pub plan: LayoutPlan,
}

/// On-disk plan artifact: one layout per group, plus everything needed to
/// rebuild the planning problems from the model config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_override: Option<u64>,
    pub plans: Vec<GroupPlan>,
}

impl PlanDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Document(format!("bad plan document: {e}")))
    }
}

fn build_problem(
    group: &PlanGroup,
    devices: u32,
    gcoll_bytes: u64,
    ordering: TensorOrdering,
) -> Result<PlanProblem, CliError> {
    let unit = coll_unit_elems(gcoll_bytes, group.tensors[0].elem_bytes)?;
    Ok(PlanProblem::new(
        group.tensors.clone(),
        devices,
        unit,
        ordering,
    )?)
}

pub fn cmd_plan(
    cfg: &ModelConfig,
    req: &PlanRequest,
) -> Result<(PlanDocument, CmdOutput), CliError> {
    let groups = cfg.plan_groups(req.rows_override)?;
    let mut out = String::new();
    let mut plans = Vec::with_capacity(groups.len());
    let mut total_elems = 0u64;
    let mut capacity = 0u64;
    let mut invalid = 0usize;

    writeln!(
        out,
        "model {}: groups={} devices={} gcoll={}B",
        cfg.name,
        groups.len(),
        req.devices,
        req.gcoll_bytes
    )
    .unwrap();

    let t0 = Instant::now();
    for group in &groups {
        let problem = build_problem(group, req.devices, req.gcoll_bytes, req.ordering)?;
        let plan = solve(&problem)?;
        let violations = validate_plan(&plan, &problem);
        writeln!(
            out,
            "group {}: tensors={} S={} padding={} ratio={:.6}",
            group.name,
            plan.tensors.len(),
            plan.shard_elems,
            plan.padding_elems,
            plan.padding_ratio()
        )
        .unwrap();
        if !violations.is_empty() {
            invalid += 1;
            for v in &violations {
                writeln!(out, "group {}: violation: {v}", group.name).unwrap();
            }
        }
        total_elems += plan.total_elems;
        capacity += req.devices as u64 * plan.shard_elems;
        plans.push(GroupPlan {
            group: group.name.clone(),
            plan,
        });
    }
    eprintln!(
        "planned {} groups in {:.3}s",
        plans.len(),
        t0.elapsed().as_secs_f64()
    );

    writeln!(
        out,
        "total: elems={} per-device={} padding={} ratio={:.6}",
        total_elems,
        capacity / req.devices as u64,
        capacity - total_elems,
        (capacity - total_elems) as f64 / total_elems as f64
    )
    .unwrap();

    let doc = PlanDocument {
        model: cfg.name.clone(),
        rows_override: req.rows_override,
        plans,
    };
    let exit = if invalid > 0 { 2 } else { 0 };
    Ok((doc, CmdOutput { stdout: out, exit }))
}

/// Re-checks a plan document from scratch against the config that claims to
/// describe it. Group sets must match exactly.
pub fn cmd_validate(cfg: &ModelConfig, doc: &PlanDocument) -> Result<CmdOutput, CliError> {
    let groups = cfg.plan_groups(doc.rows_override)?;
    if doc.plans.len() != groups.len()
        || doc
            .plans
            .iter()
            .zip(&groups)
            .any(|(gp, g)| gp.group != g.name)
    {
        return Err(CliError::Document(format!(
            "plan document groups do not match config {}",
            cfg.name
        )));
    }

    let mut report = Vec::new();
    for (gp, group) in doc.plans.iter().zip(&groups) {
        let unit_bytes = gp.plan.coll_unit_elems * gp.plan.elem_bytes as u64;
        let problem = build_problem(group, gp.plan.devices, unit_bytes, gp.plan.ordering)?;
        let violations = validate_plan(&gp.plan, &problem);
        if !violations.is_empty() {
            report.push(serde_json::json!({
                "group": gp.group,
                "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            }));
        }
    }

    if report.is_empty() {
        Ok(CmdOutput::ok(format!(
            "ok: {} plans validate clean\n",
            doc.plans.len()
        )))
    } else {
        let mut stdout = serde_json::to_string_pretty(&report).unwrap();
        stdout.push('\n');
        Ok(CmdOutput { stdout, exit: 2 })
    }
}

/// Identical layer groups produce identical problems, so sweeps memoize on
/// the shape/granularity signature rather than re-planning every layer.
fn group_signature(group: &PlanGroup, devices: u32, unit: u64, ordering: TensorOrdering) -> String {
    let mut key = format!("{devices}|{unit}|{ordering:?}");
    for t in &group.tensors {
        write!(
            key,
            "|{:?}:{}:{:?}",
            t.shape, t.elem_bytes, t.granularity
        )
        .unwrap();
    }
    key
}

pub fn cmd_sweep(
    cfg: &ModelConfig,
    devices_list: &[u32],
    granularity_list: &[u64],
    gcoll_bytes: u64,
    ordering: TensorOrdering,
) -> Result<CmdOutput, CliError> {
    let mut csv = String::from("m,granularity,S,padding_ratio\n");
    let mut memo: HashMap<String, (u64, u64, u64)> = HashMap::new();
    let t0 = Instant::now();
    let mut planned = 0usize;

    for &g in granularity_list {
        let groups = cfg.plan_groups(Some(g))?;
        for &m in devices_list {
            let mut per_device = 0u64;
            let mut padding = 0u64;
            let mut elems = 0u64;
            for group in &groups {
                let unit = coll_unit_elems(gcoll_bytes, group.tensors[0].elem_bytes)?;
                let key = group_signature(group, m, unit, ordering);
                let (s, p, e) = match memo.get(&key) {
                    Some(&v) => v,
                    None => {
                        let problem =
                            PlanProblem::new(group.tensors.clone(), m, unit, ordering)?;
                        let plan = solve(&problem)?;
                        planned += 1;
                        let v = (plan.shard_elems, plan.padding_elems, plan.total_elems);
                        memo.insert(key, v);
                        v
                    }
                };
                per_device += s;
                padding += p;
                elems += e;
            }
            writeln!(
                csv,
                "{m},{g},{per_device},{:.6}",
                padding as f64 / elems as f64
            )
            .unwrap();
        }
    }
    eprintln!(
        "sweep: {} unique plans for {} rows in {:.3}s",
        planned,
        devices_list.len() * granularity_list.len(),
        t0.elapsed().as_secs_f64()
    );
    Ok(CmdOutput::ok(csv))
}

#[derive(Debug, Clone, Copy)]
pub struct SimRequest {
    pub devices: u32,
    pub gcoll_bytes: u64,
    pub ordering: TensorOrdering,
    pub steps: u32,
    pub quant_block: u64,
    pub seed: u64,
}

/// Per-rank block counts of one planned tensor, read off its owner segments.
fn ragged_counts(entry: &PlanEntry, devices: u32) -> Vec<u64> {
    let mut counts = vec![0u64; devices as usize];
    for o in &entry.owners {
        counts[o.device as usize] += o.len / entry.block_elems;
    }
    counts
}

fn planned_specs(
    cfg: &ModelConfig,
    req: &SimRequest,
) -> Result<Vec<(TensorSpec, PlanEntry, u64)>, CliError> {
    let groups = cfg.plan_groups(None)?;
    let mut out = Vec::new();
    for group in &groups {
        let problem = build_problem(group, req.devices, req.gcoll_bytes, req.ordering)?;
        let plan = solve(&problem)?;
        for entry in &plan.tensors {
            let spec = group.tensors[entry.input_index].clone();
            out.push((spec, entry.clone(), plan.shard_elems));
        }
    }
    Ok(out)
}

fn uniform_fill(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let dist = Uniform::new(lo, hi);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Runs the sharded optimizer next to the single-rank reference and reports
/// the worst relative weight error per step.
pub fn cmd_simulate_muon(cfg: &ModelConfig, req: &SimRequest) -> Result<CmdOutput, CliError> {
    let mesh = SimMesh::new_1d(req.devices)?;
    let muon_cfg = MuonConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);

    struct Item {
        spec: TensorSpec,
        placement: Placement,
        weight: DistTensor,
        momentum: DistTensor,
        ref_weight: Vec<f64>,
        ref_momentum: Vec<f64>,
    }

    let mut items = Vec::new();
    for (spec, entry, _) in planned_specs(cfg, req)? {
        if spec.shape.len() != 2 {
            return Err(TrainError::NotMatrix(format!(
                "{} has shape {:?}; the optimizer demo needs matrices",
                spec.name, spec.shape
            ))
            .into());
        }
        let placement = Placement::RaggedShard {
            counts: ragged_counts(&entry, req.devices),
        };
        let elems = spec.total_elems() as usize;
        let full = uniform_fill(&mut rng, elems, -0.5, 0.5);
        let weight =
            DistTensor::from_full(&mesh, spec.clone(), vec![placement.clone()], &full)?;
        let momentum = DistTensor::from_full(
            &mesh,
            spec.clone(),
            vec![placement.clone()],
            &vec![0.0; elems],
        )?;
        items.push(Item {
            spec,
            placement,
            weight,
            momentum,
            ref_weight: full,
            ref_momentum: vec![0.0; elems],
        });
    }

    let mut csv = String::from("step,max_rel_err\n");
    let mut ledger = RootLedger::new(req.devices);
    let mut worst_overall = 0.0f64;
    for step in 0..req.steps {
        let mut worst = 0.0f64;
        for item in items.iter_mut() {
            let grad_full = uniform_fill(&mut rng, item.ref_weight.len(), -1.0, 1.0);
            let grad = DistTensor::from_full(
                &mesh,
                item.spec.clone(),
                vec![item.placement.clone()],
                &grad_full,
            )?;
            muon_step(
                &mesh,
                &mut item.weight,
                &grad,
                &mut item.momentum,
                &mut ledger,
                &muon_cfg,
            )?;
            reference_step(
                &item.spec.shape,
                &mut item.ref_weight,
                &grad_full,
                &mut item.ref_momentum,
                &muon_cfg,
            )?;
            let dist_full = item.weight.to_full(&mesh)?;
            for (d, r) in dist_full.iter().zip(&item.ref_weight) {
                let rel = (d - r).abs() / r.abs().max(1e-12);
                worst = worst.max(rel);
            }
        }
        writeln!(csv, "{step},{worst:.3e}").unwrap();
        worst_overall = worst_overall.max(worst);
    }

    let exit = if worst_overall < 1e-6 { 0 } else { 2 };
    Ok(CmdOutput { stdout: csv, exit })
}

/// Quantizes every planned matrix per rank and checks that no tile crosses a
/// device boundary; contained tensors must quantize shard-locally to exactly
/// the whole-matrix result.
pub fn cmd_simulate_quant(cfg: &ModelConfig, req: &SimRequest) -> Result<CmdOutput, CliError> {
    let tile = QuantBlockSpec {
        rows: req.quant_block,
        cols: req.quant_block,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut csv = String::from("tensor,contained,max_abs_err\n");
    let mut exit = 0;

    for (spec, entry, shard_elems) in planned_specs(cfg, req)? {
        let [rows, cols] = spec.shape[..] else {
            continue; // only matrices are quantized
        };
        let split = first_split_tile(&entry, cols, tile, shard_elems)?;
        let contained = split.is_none();

        let values = uniform_fill(&mut rng, (rows * cols) as usize, -10.0, 10.0);
        let global = blockwise_quantize(&values, rows, cols, tile)?;
        let back = blockwise_dequantize(&global);
        let mut max_err = 0.0f64;
        for (a, b) in values.iter().zip(&back) {
            max_err = max_err.max((a - b).abs());
        }

        if contained {
            // Tile containment makes per-rank quantization exact: each owner
            // holds whole tile rows, so codes and scales match the global
            // pass bit for bit.
            let mut cursor = 0usize;
            for o in &entry.owners {
                let local_rows = o.len / cols;
                let local = blockwise_quantize(
                    &values[cursor..cursor + o.len as usize],
                    local_rows,
                    cols,
                    tile,
                )?;
                let code_range = &global.codes[cursor..cursor + o.len as usize];
                let scale_lo = (cursor as u64 / cols / tile.rows * (cols / tile.cols)) as usize;
                if local.codes != code_range
                    || local.scales
                        != global.scales[scale_lo..scale_lo + local.scales.len()]
                {
                    exit = 2;
                    writeln!(csv, "{},mismatch,nan", spec.name).unwrap();
                }
                cursor += o.len as usize;
            }
        } else {
            exit = 2;
        }

        writeln!(csv, "{},{},{:.6e}", spec.name, contained, max_err).unwrap();
    }
    Ok(CmdOutput { stdout: csv, exit })
}
