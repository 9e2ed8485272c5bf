//! Feature importance of the fused groups before and after the SE gate.

use std::io::Write;

use crate::blocks::FusionMode;
use crate::error::{invalid, Result};
use crate::network::{forward_traced, Model};
use crate::tensor::{Tape, Tensor};

use super::rain::write_rows;

/// Group labels: the three encoder levels, then the decoder term.
pub const GROUP_LABELS: [&str; 4] = ["1", "2", "3", "normal"];

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceProfile {
    pub level: usize,
    /// Normalized L2 norm of each group entering the SE block.
    pub lambdas_before: [f64; 4],
    /// The same for the SE output.
    pub lambdas_after: [f64; 4],
}

#[derive(serde::Serialize)]
struct Row {
    level: usize,
    group: &'static str,
    lambda_before: f64,
    lambda_after: f64,
}

/// Divides each norm by their sum. Absent groups (`None`) get zero; if
/// every present norm is zero the present groups share equally.
fn normalize(norms: [Option<f64>; 4]) -> [f64; 4] {
    let total: f64 = norms.iter().flatten().sum();
    let present = norms.iter().flatten().count() as f64;
    norms.map(|n| match n {
        Some(v) if total > 0.0 => v / total,
        Some(_) => 1.0 / present,
        None => 0.0,
    })
}

fn group_norms(t: &Tensor, channels: &[usize]) -> Result<[Option<f64>; 4]> {
    let mut out = [None; 4];
    let mut start = 0;
    for (k, &c) in channels.iter().enumerate() {
        let slot = if channels.len() == 4 || k < 3 { k } else { 3 };
        out[slot] = Some(t.slice_channels(start, c)?.norm_l2());
        start += c;
    }
    Ok(out)
}

/// Importance profile at every decoder level, ordered 1 to 4. Level 4 has
/// no decoder term, so its `normal` entries are zero.
pub fn se_importance(model: &Model, image: &Tensor) -> Result<Vec<ImportanceProfile>> {
    if model.config.mlc_fusion != FusionMode::Se {
        return Err(invalid(
            "se_importance",
            format!("needs se fusion, model uses `{}`", model.config.mlc_fusion.name()),
        ));
    }
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let trace = forward_traced(&model.config, &vars, tape.leaf(image.clone()))?;
    let mut out = Vec::new();
    for (level, fused) in &trace.fusions {
        let groups: Vec<Tensor> = fused.groups.iter().map(|g| g.value().as_ref().clone()).collect();
        let channels: Vec<usize> = groups.iter().map(|g| g.shape()[1]).collect();
        let concat = Tensor::concat_channels(&groups.iter().collect::<Vec<_>>())?;
        let se = fused.se_out.expect("se fusion records its output").value();
        out.push(ImportanceProfile {
            level: *level,
            lambdas_before: normalize(group_norms(&concat, &channels)?),
            lambdas_after: normalize(group_norms(&se, &channels)?),
        });
    }
    out.sort_by_key(|p| p.level);
    Ok(out)
}

/// Writes `level, group, lambda_before, lambda_after`.
pub fn write_importance_csv(profiles: &[ImportanceProfile], w: impl Write) -> Result<()> {
    let rows: Vec<Row> = profiles
        .iter()
        .flat_map(|p| {
            GROUP_LABELS.iter().enumerate().map(move |(k, &group)| Row {
                level: p.level,
                group,
                lambda_before: p.lambdas_before[k],
                lambda_after: p.lambdas_after[k],
            })
        })
        .collect();
    write_rows(&rows, w)
}

/// Population std of the four values, a measure of how unevenly the
/// importance is spread.
pub fn dispersion(lambdas: &[f64; 4]) -> f64 {
    let mean = lambdas.iter().sum::<f64>() / 4.0;
    (lambdas.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt()
}
