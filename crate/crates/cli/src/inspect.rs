//! The `inspect-flows` command: dump the flow snapshots stored in a
//! checkpoint as CSV on stdout.

use std::path::Path;

use incop::checkpoint::read_checkpoint;
use incop::flow::{flow_distance, FlowDistanceConfig, FlowSnapshot};

use crate::csvio::fmt_f64;

pub const INSPECT_HEADER: &str = "section,kind,layer,shape,l2_norm";

fn dump_snapshot(out: &mut String, section: &str, snap: &FlowSnapshot) {
    for (l, t) in snap.layers.iter().enumerate() {
        let shape = t
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            section,
            snap.kind.label(),
            l,
            shape,
            fmt_f64(t.l2_norm())
        ));
    }
}

pub fn cmd_inspect_flows(checkpoint_path: &Path) -> anyhow::Result<String> {
    let checkpoint = read_checkpoint(checkpoint_path)?;
    if checkpoint.reference.is_none() && checkpoint.current.is_none() {
        return Err(incop::Error::format(
            0,
            "checkpoint has no flow snapshot section".to_string(),
        )
        .into());
    }
    let mut out = String::from(INSPECT_HEADER);
    out.push('\n');
    if let Some(reference) = &checkpoint.reference {
        dump_snapshot(&mut out, "reference", reference);
    }
    if let Some(current) = &checkpoint.current {
        dump_snapshot(&mut out, "current", current);
    }
    if let (Some(reference), Some(current)) = (&checkpoint.reference, &checkpoint.current) {
        let relative = flow_distance(current, reference, &FlowDistanceConfig::default())?;
        let global = flow_distance(current, reference, &FlowDistanceConfig::global_l2())?;
        out.push_str(&format!(
            "distance_to_reference,per_layer_relative,,,{}\n",
            fmt_f64(relative)
        ));
        out.push_str(&format!("distance_to_reference,global_l2,,,{}\n", fmt_f64(global)));
    }
    print!("{out}");
    Ok(out)
}
