#![allow(dead_code)]

use optimas_core::ingest::{CounterMatrix, DiagnosticBundle, KernelProfile, RooflineRaw, StallSample, StallUnit};
use optimas_core::insight::{render_stall_summary, SalientStall};
use optimas_core::prompt::{build_prompt, PromptPackage, PromptSections};
use optimas_core::{Anchor, DiagnosticId, DiagnosticLine};

pub const KERNEL: &str = "sgd_update";
pub const ELIGIBLE: &str = "smsp__warps_eligible.avg.per_cycle_active";

/// `n` distinct source lines.
pub fn source(n: usize) -> String {
    (1..=n).map(|i| format!("    stmt_{i}();\n")).collect()
}

pub fn salient(kernel: &str, line: u32, stall: &str) -> SalientStall {
    SalientStall {
        kernel_name: kernel.into(),
        source_line: line,
        stall_type: stall.into(),
        line_cycles: 1000,
        dominant_cycles: 800,
        dominance_share: 0.8,
        kernel_share: 0.2,
        code_snippet: format!("stmt_{line}();"),
    }
}

/// Salient stall_wait lines 28..=31 in one kernel.
pub fn hot_region() -> Vec<SalientStall> {
    (28..=31).map(|l| salient(KERNEL, l, "stall_wait")).collect()
}

pub fn counter_line(index: usize, name: &str, coefficient: f64) -> DiagnosticLine {
    DiagnosticLine {
        id: DiagnosticId::new(optimas_core::Source::Ia, index),
        text: format!("{name} — warps eligible per cycle (impact 0.210)"),
        anchor: Anchor::Counter { name: name.into(), coefficient },
    }
}

pub fn package(src: &str, salient: &[SalientStall], counters: Vec<DiagnosticLine>) -> PromptPackage {
    let sections = PromptSections { stall: render_stall_summary(salient), counters, roofline: vec![] };
    build_prompt(src, sections, &[]).expect("non-empty sections")
}

/// Replaces the given 1-based lines of `src` in place.
pub fn modify_lines(src: &str, lines: &[u32]) -> String {
    src.lines()
        .enumerate()
        .map(|(i, l)| {
            if lines.contains(&(i as u32 + 1)) {
                format!("{l} // changed\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect()
}

/// A reply in the documented format.
pub fn reply(code: &str, applied: &[String], withheld: &[String]) -> String {
    let mut r = format!("### OPTIMIZED CODE\n```cuda\n{code}```\n### APPLIED\n");
    for a in applied {
        r.push_str(&format!("- {a}\n"));
    }
    r.push_str("### WITHHELD\n");
    for w in withheld {
        r.push_str(&format!("- {w}\n"));
    }
    r
}

pub fn bundle(stall_cycles: u64, eligible: f64) -> DiagnosticBundle {
    DiagnosticBundle::assemble(
        "sgd",
        vec![KernelProfile::new(KERNEL, 1_000_000)],
        vec![RooflineRaw {
            kernel_name: KERNEL.into(),
            achieved_compute: 1.0e12,
            peak_compute: 10.0e12,
            achieved_bandwidth: 0.9e12,
            peak_bandwidth: 1.0e12,
            arithmetic_intensity: 1.1,
            profiler_notes: vec![],
        }],
        vec![
            StallSample { kernel_name: KERNEL.into(), source_line: 28, stall_type: "stall_wait".into(), cycles: stall_cycles },
            StallSample { kernel_name: KERNEL.into(), source_line: 28, stall_type: "stall_barrier".into(), cycles: 900 },
        ],
        StallUnit::Cycles,
        Some(CounterMatrix {
            run_ids: vec!["r1".into(), "r2".into()],
            counter_names: vec![ELIGIBLE.into()],
            values: vec![vec![eligible], vec![eligible]],
            runtime_ns: vec![1.0e6, 1.0e6],
        }),
    )
    .expect("consistent fixture")
}

/// Shell-script "application" whose line 7 is the hot spot.
pub const APP_SOURCE: &str = "\
#!/bin/sh
# kernel: saxpy
i=0
while [ $i -lt 3 ]; do
  i=$((i+1))
done
sleep 0.06
echo \"result 42 $i\"
";

/// The scripted model's answer: line 7 sleeps less.
pub fn app_reply(wait: &str) -> String {
    let code = APP_SOURCE.replace("sleep 0.06", &format!("sleep {wait}"));
    reply(&code, &["[A1] lines 7-7 | shorten the wait | evidence: PC-01".into()], &["vectorize | reason: no evidence".into()])
}

/// A self-contained project: source, profile exports, scripted replies and
/// `config.yml`. Returns the config path.
pub fn write_app(root: &std::path::Path, enabled: &str, reply_text: &str) -> std::path::PathBuf {
    use std::fs;
    fs::create_dir_all(root.join("profile")).unwrap();
    fs::create_dir_all(root.join("replies")).unwrap();
    fs::write(root.join("app.sh"), APP_SOURCE).unwrap();
    fs::write(root.join("replies/default.txt"), reply_text).unwrap();
    fs::write(root.join("profile/kernels.csv"), "kernel_name,time_ns\nsaxpy,900000\nhelper,100000\n").unwrap();
    fs::write(
        root.join("profile/pcsamples.csv"),
        "kernel_name,source_line,stall_type,cycles\nsaxpy,7,stall_wait,800\nsaxpy,7,stall_barrier,50\nsaxpy,4,stall_long_sb,100\nhelper,3,stall_wait,10\n",
    )
    .unwrap();
    let mut counters = String::from("run_id,runtime_ns,inst_issued,dram_bytes,l2_hits\n");
    for r in 0..8 {
        let x = r as f64;
        counters.push_str(&format!("r{r},{},{},{},{}\n", 1000.0 + 50.0 * x, 10.0 + x, 5.0 + (x * 1.7).sin(), 3.0 + (x * 0.9).cos()));
    }
    fs::write(root.join("profile/counters.csv"), counters).unwrap();
    fs::write(
        root.join("profile/roofline.json"),
        r#"[{"kernel_name":"saxpy","achieved_compute":1.0e12,"peak_compute":10.0e12,"achieved_bandwidth":0.8e12,"peak_bandwidth":1.0e12,"arithmetic_intensity":0.5}]"#,
    )
    .unwrap();
    let cfg = format!(
        "app:\n  name: saxpy-app\n  source: app.sh\nsources:\n  dir: profile\n  enabled: {enabled}\n\
llm:\n  kind: scripted-mock\n  endpoint: replies\n\
eval:\n  compile_cmd: sh -n {{src}} && cp {{src}} {{bin}}\n  exec_cmd: sh {{bin}} {{args}}\n  runs: 2\n  max_compile_retries: 3\n  workdir: .\n\
output_root: out\n"
    );
    let path = root.join("config.yml");
    fs::write(&path, cfg).unwrap();
    path
}
