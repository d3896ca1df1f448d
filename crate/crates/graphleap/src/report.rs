//! Tab-delimited text reports.
//!
//! Data lines are `key<TAB>value...`; lines starting with `#` are a human
//! summary and can be skipped by parsers. Apart from the optional wall-clock
//! line, every report is a pure function of its inputs.

use std::fmt::{self, Write as _};

use graphleap_core::config::{HardwareParams, ModelSpec, RunConfig, WeightSource};
use graphleap_core::perf::{AlignmentReport, LatencyPrediction};
use graphleap_core::schedule::{DivergenceReport, Trace};

const ABSENT: &str = "absent";

/// Indices and values of the `n` largest logits, ties to the lower index.
pub fn top_k(logits: &[f32], n: usize) -> Vec<(usize, f32)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).map(|i| (i, logits[i])).collect()
}

/// Flat `key, value` echo of the effective configuration.
pub fn config_echo(spec: &ModelSpec, hw: &HardwareParams, run: &RunConfig) -> Vec<(String, String)> {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let weights = match &run.weight_source {
        WeightSource::RandomSeeded => "random".to_owned(),
        WeightSource::File(p) => p.clone(),
    };
    let pairs: [(&str, String); 17] = [
        ("model", spec.display_name().to_owned()),
        ("structure", spec.structure.as_str().to_owned()),
        ("blocks", join(&spec.stages.iter().map(|s| s.num_blocks).collect::<Vec<_>>())),
        ("dims", join(&spec.stages.iter().map(|s| s.dim).collect::<Vec<_>>())),
        ("nodes", join(&spec.stages.iter().map(|s| s.nodes).collect::<Vec<_>>())),
        ("image_size", spec.image_size.to_string()),
        ("patch_size", spec.patch_size.to_string()),
        ("k", spec.k.to_string()),
        ("dilation", join(&spec.dilation_schedule)),
        ("mode", run.mode.as_str().to_owned()),
        ("schedule", run.schedule.as_str().to_owned()),
        ("seed", run.seed.to_string()),
        ("weights", weights),
        ("activation", run.block.activation.as_str().to_owned()),
        ("layer_norm", run.block.layer_norm.to_string()),
        ("n_buf", hw.n_buf.to_string()),
        ("f_clk", hw.f_clk.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

/// Result of one `infer` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: Vec<(String, String)>,
    pub top5: Vec<(usize, f32)>,
    /// `(block, source block, digest)` of every consumed graph.
    pub graphs: Vec<(usize, usize, u64)>,
    pub predicted_ms: f64,
    pub wall_ms: Option<f64>,
    pub divergence: Option<DivergenceReport>,
}

impl RunReport {
    pub fn new(
        spec: &ModelSpec,
        hw: &HardwareParams,
        run: &RunConfig,
        logits: &[f32],
        trace: &Trace,
        predicted_ms: f64,
    ) -> Self {
        RunReport {
            config: config_echo(spec, hw, run),
            top5: top_k(logits, 5),
            graphs: trace.blocks.iter().map(|b| (b.block, b.source_layer, b.digest)).collect(),
            predicted_ms,
            wall_ms: None,
            divergence: None,
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let get = |key: &str| {
            self.config
                .iter()
                .find(|(k, _)| k == key)
                .map_or("?", |(_, v)| v.as_str())
        };
        writeln!(
            f,
            "# {} {}x{}, {} / {}, seed {}",
            get("model"),
            get("image_size"),
            get("image_size"),
            get("mode"),
            get("schedule"),
            get("seed")
        )?;
        if let Some(&(i, v)) = self.top5.first() {
            writeln!(f, "# top-1 class {i} ({v}); predicted {:.4} ms on the modeled accelerator", self.predicted_ms)?;
        }
        for (k, v) in &self.config {
            writeln!(f, "config\t{k}\t{v}")?;
        }
        for (rank, (i, v)) in self.top5.iter().enumerate() {
            writeln!(f, "top5\t{rank}\t{i}\t{v}")?;
        }
        for (block, source, digest) in &self.graphs {
            writeln!(f, "graph\t{block}\t{source}\t{digest:016x}")?;
        }
        writeln!(f, "predicted_ms\t{:.6}", self.predicted_ms)?;
        match self.wall_ms {
            Some(ms) => writeln!(f, "wall_ms\t{ms:.3}")?,
            None => writeln!(f, "wall_ms\t{ABSENT}")?,
        }
        match &self.divergence {
            Some(d) => f.write_str(&divergence_table(d)),
            None => writeln!(f, "divergence\t{ABSENT}"),
        }
    }
}

/// Per-block graph digests and where each graph came from.
pub fn trace_table(trace: &Trace) -> String {
    let mut out = String::from("block\tsource\thash\n");
    for b in &trace.blocks {
        let _ = writeln!(out, "{}\t{}\t{:016x}", b.block, b.source_layer, b.digest);
    }
    out
}

/// Per-block Jaccard overlap between standard and leap-ahead graphs.
pub fn divergence_table(d: &DivergenceReport) -> String {
    let mut out = String::from("block\tstandard_hash\tgraphleap_hash\tjaccard\n");
    for (i, j) in d.jaccard.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i}\t{:016x}\t{:016x}\t{j:.6}",
            d.standard_digests[i], d.graphleap_digests[i]
        );
    }
    let _ = writeln!(out, "logit_l2\t{:.9e}", d.logit_l2);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfRow {
    pub model: String,
    pub resolution: usize,
    pub seq_ms: f64,
    pub overlap_ms: f64,
    pub speedup: f64,
}

impl PerfRow {
    pub fn new(spec: &ModelSpec, p: &LatencyPrediction) -> Self {
        PerfRow {
            model: spec.display_name().to_owned(),
            resolution: spec.image_size,
            seq_ms: p.sequential.total_ms(),
            overlap_ms: p.overlapped.total_ms(),
            speedup: p.speedup(),
        }
    }
}

/// Predicted latency per model and resolution.
pub fn perf_table(rows: &[PerfRow]) -> String {
    let mut out = String::from("model\tresolution\tseq_ms\toverlap_ms\tspeedup\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            r.model, r.resolution, r.seq_ms, r.overlap_ms, r.speedup
        );
    }
    out
}

/// Measured executor schedule against the cost model's.
pub fn alignment_table(a: &AlignmentReport) -> String {
    let mut out = String::from("layer\tmeasured_stall_ratio\tmodel_stall_ratio\tmeasured_hidden\tmodel_hidden\n");
    for r in &a.rows {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{}\t{}",
            r.layer, r.measured_stall_ratio, r.model_stall_ratio, r.measured_hidden, r.model_hidden
        );
    }
    let _ = writeln!(
        out,
        "violations\t{}\t{}",
        a.measured_violations.len(),
        a.model_violations.len()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_by_value_then_index() {
        let t = top_k(&[1.0, 3.0, 3.0, -1.0, 2.0, 0.5], 5);
        assert_eq!(t.iter().map(|p| p.0).collect::<Vec<_>>(), [1, 2, 4, 0, 5]);
        assert_eq!(top_k(&[1.0], 5).len(), 1);
    }

    #[test]
    fn perf_table_shape() {
        let row = PerfRow {
            model: "ViG-Ti".into(),
            resolution: 224,
            seq_ms: 3.2424,
            overlap_ms: 3.23,
            speedup: 1.004,
        };
        let t = perf_table(&[row]);
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().nth(1).unwrap().starts_with("ViG-Ti\t224\t3.2424\t"));
    }
}
