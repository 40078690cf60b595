use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::formats::{
    parse_counter_matrix, parse_kernel_times, parse_pc_samples, parse_roofline, write_counter_matrix,
    write_kernel_times, write_pc_samples, write_roofline,
};
use super::{CounterMatrix, IngestError, KernelProfile, RooflineRaw, StallSample, StallUnit};

/// All diagnostics for one application, normalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticBundle {
    pub app_name: String,
    pub kernels: Vec<KernelProfile>,
    pub roofline: Vec<RooflineRaw>,
    pub stalls: Vec<StallSample>,
    pub stall_unit: StallUnit,
    pub counters: Option<CounterMatrix>,
    /// Diagnostic ID -> rendered summary line.
    pub id_map: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    app_name: String,
    #[serde(default)]
    id_map: BTreeMap<String, String>,
}

impl DiagnosticBundle {
    /// Assembles a bundle, checking that roofline and stall entries refer
    /// to profiled kernels.
    pub fn assemble(
        app_name: impl Into<String>,
        kernels: Vec<KernelProfile>,
        roofline: Vec<RooflineRaw>,
        stalls: Vec<StallSample>,
        stall_unit: StallUnit,
        counters: Option<CounterMatrix>,
    ) -> Result<Self, IngestError> {
        let mut names = HashSet::new();
        for k in &kernels {
            if !names.insert(k.kernel_name.as_str()) {
                return Err(IngestError::DuplicateKernel(k.kernel_name.clone()));
            }
        }
        if let Some(r) = roofline.iter().find(|r| !names.contains(r.kernel_name.as_str())) {
            return Err(IngestError::UnknownKernel { kind: "roofline", kernel: r.kernel_name.clone() });
        }
        if let Some(s) = stalls.iter().find(|s| !names.contains(s.kernel_name.as_str())) {
            return Err(IngestError::UnknownKernel { kind: "stall", kernel: s.kernel_name.clone() });
        }
        Ok(DiagnosticBundle {
            app_name: app_name.into(),
            kernels,
            roofline,
            stalls,
            stall_unit,
            counters,
            id_map: BTreeMap::new(),
        })
    }

    /// Total stalled cycles recorded for `(kernel, line, stall_type)`.
    pub fn stall_cycles(&self, kernel: &str, line: u32, stall_type: &str) -> Option<u64> {
        let mut found = false;
        let total = self
            .stalls
            .iter()
            .filter(|s| s.kernel_name == kernel && s.source_line == line && s.stall_type == stall_type)
            .inspect(|_| found = true)
            .map(|s| s.cycles)
            .sum();
        found.then_some(total)
    }

    pub fn roofline_for(&self, kernel: &str) -> Option<&RooflineRaw> {
        self.roofline.iter().find(|r| r.kernel_name == kernel)
    }

    /// Writes the bundle in the normalized file formats under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            File::create(&path).map(BufWriter::new).map_err(|e| IngestError::io(path, e))
        };
        let csv_err = |name: &str, e: csv::Error| IngestError::io(dir.join(name), std::io::Error::other(e));
        write_kernel_times(create("kernels.csv")?, &self.kernels).map_err(|e| csv_err("kernels.csv", e))?;
        if !self.stalls.is_empty() {
            write_pc_samples(create("pcsamples.csv")?, &self.stalls, self.stall_unit)
                .map_err(|e| csv_err("pcsamples.csv", e))?;
        }
        if let Some(m) = &self.counters {
            write_counter_matrix(create("counters.csv")?, m).map_err(|e| csv_err("counters.csv", e))?;
        }
        if !self.roofline.is_empty() {
            write_roofline(create("roofline.json")?, &self.roofline)
                .map_err(|e| IngestError::io(dir.join("roofline.json"), e.into()))?;
        }
        let meta = BundleMeta { app_name: self.app_name.clone(), id_map: self.id_map.clone() };
        serde_json::to_writer_pretty(create("bundle.json")?, &meta)
            .map_err(|e| IngestError::io(dir.join("bundle.json"), e.into()))?;
        Ok(())
    }

    /// Reads a directory produced by [`write_dir`](Self::write_dir) (or laid
    /// out by hand). Only `kernels.csv` is required.
    pub fn read_dir(dir: &Path) -> Result<Self, IngestError> {
        let kernels = parse_kernel_times(&dir.join("kernels.csv"))?;
        let (stalls, unit) = match dir.join("pcsamples.csv") {
            p if p.exists() => parse_pc_samples(&p)?,
            _ => (Vec::new(), StallUnit::Cycles),
        };
        let roofline = match dir.join("roofline.json") {
            p if p.exists() => parse_roofline(&p)?,
            _ => Vec::new(),
        };
        let counters = match dir.join("counters.csv") {
            p if p.exists() => Some(parse_counter_matrix(&p)?),
            _ => None,
        };
        let meta_path = dir.join("bundle.json");
        let meta = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| IngestError::io(&meta_path, e))?;
            serde_json::from_str(&text).map_err(|source| IngestError::Json {
                origin: meta_path.display().to_string(),
                source,
            })?
        } else {
            BundleMeta { app_name: String::new(), id_map: BTreeMap::new() }
        };
        let mut bundle = Self::assemble(meta.app_name, kernels, roofline, stalls, unit, counters)?;
        bundle.id_map = meta.id_map;
        Ok(bundle)
    }
}
