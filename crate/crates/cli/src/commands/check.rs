use clap::Args;
use mdphd::gradcheck::{check_params, jitter_offsets, op_suite, Batch3, Target};
use mdphd::hybrid::{HybridConfig, HybridModel, PathMode};
use mdphd::models::{presets, ModelConfig};
use mdphd::objectives::LossKind;
use serde::Serialize;

use crate::presets::{all_names, hybrid_preset};
use crate::{print_config, CheckFailed, Global};

pub const OP_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Hybrid preset whose networks are checked end to end.
    #[arg(long, default_value = "toy")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per test signal.
    #[arg(long, default_value_t = 1024)]
    length: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 3)]
    coords: usize,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-7)]
    step: f64,
    /// Offset jitter applied to biases and shifts before checking.
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    preset: &'a str,
    tasnet: &'a str,
    unet: &'a str,
    seed: u64,
    length: usize,
    batch: usize,
    coords: usize,
    step: f64,
    jitter: f64,
    op_tolerance: f64,
    end_to_end_tolerance: f64,
}

fn line(ok: bool, name: &str, err: f64) {
    println!(
        "{} {name}: max rel err {err:.2e}",
        if ok { "ok  " } else { "FAIL" }
    );
}

pub fn gradcheck(a: GradcheckArgs, global: Global) -> anyhow::Result<()> {
    let p = hybrid_preset(&a.preset)?;
    let (tasnet, unet) = p.networks()?;
    let resolved = Resolved {
        preset: p.name,
        tasnet: p.tasnet,
        unet: p.unet,
        seed: a.seed,
        length: a.length,
        batch: a.batch,
        coords: a.coords,
        step: a.step,
        jitter: a.jitter,
        op_tolerance: OP_TOL,
        end_to_end_tolerance: E2E_TOL,
    };
    print_config("gradcheck", global, &resolved);
    let cfg = HybridConfig {
        tasnet,
        unet,
        mode: PathMode::Alternating,
        both_paths_per_step: false,
    };
    let mut model = HybridModel::new(&cfg, a.seed)?;
    model.check_length(a.length)?;
    jitter_offsets(&mut model, a.jitter, a.seed ^ 0xb1a5);
    let data = Batch3::random(a.batch.max(1), a.length, a.seed)?;

    let mut failures = Vec::new();
    let mut worst_op = 0.0f64;
    for (name, res) in op_suite() {
        let err = res?;
        let ok = err <= OP_TOL;
        line(ok, name, err);
        worst_op = worst_op.max(err);
        if !ok {
            failures.push(name.to_string());
        }
    }
    let kinds = [
        LossKind::L2Energy,
        LossKind::L2Energy,
        LossKind::SnrObj,
        LossKind::SpecL2,
    ];
    let mut worst_e2e = 0.0f64;
    for (i, (target, kind)) in Target::ALL.into_iter().zip(kinds).enumerate() {
        let r = check_params(
            &model,
            target,
            kind,
            &data,
            a.coords,
            a.step,
            a.seed + i as u64,
        )?;
        let name = format!("{} {} ({} coords)", target.label(), kind, r.checked);
        let ok = r.passes(E2E_TOL);
        line(ok, &name, r.max_rel_error);
        if let (false, Some(w)) = (ok, &r.worst) {
            println!(
                "     worst: {}[{}] analytic {:.6e} numeric {:.6e}",
                w.param, w.index, w.analytic, w.numeric
            );
        }
        worst_e2e = worst_e2e.max(r.max_rel_error);
        if !ok {
            failures.push(name);
        }
    }
    println!("max rel. error: ops {worst_op:.2e} (tol {OP_TOL:.0e}), end-to-end {worst_e2e:.2e} (tol {E2E_TOL:.0e})");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("gradient check failed: {}", failures.join(", "))).into())
    }
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Hybrid preset (toy, 1.5m, 3m) or a single network such as tasnet-1.5m.
    #[arg(long, default_value = "toy")]
    preset: String,
}

pub fn describe(a: DescribeArgs, global: Global) -> anyhow::Result<()> {
    let nets: Vec<(&str, ModelConfig)> = match hybrid_preset(&a.preset) {
        Ok(p) => {
            let (t, u) = p.networks()?;
            vec![(p.tasnet, t), (p.unet, u)]
        }
        Err(_) if presets().contains(&a.preset) => {
            vec![(a.preset.as_str(), mdphd::models::preset(&a.preset)?)]
        }
        Err(_) => {
            return Err(mdphd::Error::UnknownName {
                kind: "preset",
                name: a.preset.clone(),
                available: all_names().join(", "),
            }
            .into())
        }
    };
    let configs: Vec<(&str, &ModelConfig)> = nets.iter().map(|(n, c)| (*n, c)).collect();
    print_config(
        "describe",
        global,
        &serde_json::json!({ "preset": a.preset, "networks": configs }),
    );
    let mut total = 0;
    for (name, cfg) in &nets {
        let net = cfg.build(0)?;
        println!("== {name}");
        println!("{}", net.describe());
        total += net.param_count();
    }
    if nets.len() > 1 {
        println!("total parameters: {total}");
    }
    Ok(())
}
