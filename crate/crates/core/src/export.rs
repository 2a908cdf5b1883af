//! Trajectory tables: one CSV row per step plus a JSON sidecar.
//!
//! Columns are `iter, <coords>..., objective, p0..p{C-1}, distance_from_origin`.
//! Exemplar trajectories use latent coordinates `z0..`; attack trajectories
//! move in data space and use `x0..`, with the attacked loss as the
//! objective. Floats are written in shortest round-trip form, so a parse of
//! the CSV gives back the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adversarial::{AttackConfig, AttackResult};
use crate::error::Result;
use crate::xgem::{XGemConfig, XGemResult};

struct Row<'a> {
    iter: usize,
    coords: &'a [f64],
    objective: f64,
    proba: &'a [f64],
    distance: f64,
}

fn table<'a>(prefix: &str, rows: impl Iterator<Item = Row<'a>>) -> String {
    let mut rows = rows.peekable();
    let (dim, classes) = rows.peek().map_or((0, 0), |r| (r.coords.len(), r.proba.len()));
    let mut out = String::from("iter");
    for i in 0..dim {
        let _ = write!(out, ",{prefix}{i}");
    }
    out.push_str(",objective");
    for c in 0..classes {
        let _ = write!(out, ",p{c}");
    }
    out.push_str(",distance_from_origin\n");
    for r in rows {
        let _ = write!(out, "{}", r.iter);
        for v in r.coords {
            let _ = write!(out, ",{v}");
        }
        let _ = write!(out, ",{}", r.objective);
        for v in r.proba {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", r.distance);
    }
    out
}

pub fn xgem_csv(result: &XGemResult) -> String {
    table(
        "z",
        result.trajectory.steps.iter().map(|s| Row {
            iter: s.iter,
            coords: s.z.data(),
            objective: s.objective,
            proba: s.proba.data(),
            distance: s.distance_from_origin,
        }),
    )
}

pub fn attack_csv(result: &AttackResult) -> String {
    table(
        "x",
        result.steps.iter().map(|s| Row {
            iter: s.iter,
            coords: s.x.data(),
            objective: s.loss,
            proba: s.proba.data(),
            distance: s.distance_from_origin,
        }),
    )
}

#[derive(Serialize)]
struct XGemSidecar<'a> {
    kind: &'static str,
    config: &'a XGemConfig,
    terminal_status: crate::xgem::TerminalStatus,
    switch_index: Option<usize>,
    steps: usize,
    source_label: usize,
    target_label: usize,
    source: &'a [f64],
    exemplar: &'a [f64],
    exemplar_latent: &'a [f64],
}

pub fn xgem_sidecar(cfg: &XGemConfig, result: &XGemResult) -> Result<String> {
    let t = &result.trajectory;
    Ok(serde_json::to_string_pretty(&XGemSidecar {
        kind: "xgem",
        config: cfg,
        terminal_status: t.terminal_status,
        switch_index: t.switch_index,
        steps: t.steps.len(),
        source_label: t.source.y,
        target_label: t.source.y_tar,
        source: t.source.x.data(),
        exemplar: result.exemplar.data(),
        exemplar_latent: result.exemplar_latent.data(),
    })?)
}

#[derive(Serialize)]
struct AttackSidecar<'a> {
    kind: &'static str,
    config: &'a AttackConfig,
    steps: usize,
    label: usize,
    source: &'a [f64],
    adversarial: &'a [f64],
}

pub fn attack_sidecar(cfg: &AttackConfig, result: &AttackResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(&AttackSidecar {
        kind: "pgd",
        config: cfg,
        steps: result.steps.len(),
        label: result.label,
        source: result.steps[0].x.data(),
        adversarial: result.adversarial.data(),
    })?)
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_pair(dir: &Path, stem: &str, csv: &str, json: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let (c, j) = (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")));
    fs::write(&c, csv)?;
    fs::write(&j, json)?;
    Ok(vec![c, j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::Tensor;
    use crate::xgem::{Source, Step, TerminalStatus, XGemTrajectory};

    #[test]
    fn csv_layout_and_exact_values() {
        let step = |i: usize, z: f64| Step {
            iter: i,
            z: Tensor::vector(vec![z]).unwrap(),
            x: Tensor::vector(vec![z, z * z]).unwrap(),
            proba: Tensor::vector(vec![0.25, 0.75]).unwrap(),
            objective: 0.1 + z,
            distance_from_origin: z / 3.0,
        };
        let r = XGemResult {
            exemplar: Tensor::vector(vec![0.3, 0.09]).unwrap(),
            exemplar_latent: Tensor::vector(vec![0.3]).unwrap(),
            trajectory: XGemTrajectory {
                steps: vec![step(0, 0.0), step(1, 0.3)],
                switch_index: Some(1),
                source: Source {
                    x: Tensor::vector(vec![0.0, 0.0]).unwrap(),
                    y: 0,
                    y_tar: 1,
                },
                terminal_status: TerminalStatus::SwitchedOnly,
            },
        };
        let csv = xgem_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,z0,objective,p0,p1,distance_from_origin");
        let last: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last, vec![1.0, 0.3, 0.1 + 0.3, 0.25, 0.75, 0.3 / 3.0]);
        let json: serde_json::Value = serde_json::from_str(&xgem_sidecar(&XGemConfig::default(), &r).unwrap()).unwrap();
        assert_eq!(json["terminal_status"], "switched_only");
        assert_eq!(json["switch_index"], 1);
    }
}
