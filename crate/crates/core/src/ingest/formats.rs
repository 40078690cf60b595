use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{CounterMatrix, IngestError, KernelProfile, RooflineRaw, StallSample, StallUnit};

const KERNELS_HEADER: &str = "kernel_name,time_ns[,source_file]";
const PC_HEADER: [&str; 4] = ["kernel_name", "source_line", "stall_type", "cycles"];

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(|e| IngestError::io(path, e))
}

fn origin(path: &Path) -> String {
    path.display().to_string()
}

fn csv_error(origin: &str, err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => IngestError::RaggedRow {
            origin: origin.to_string(),
            line,
            expected: *expected_len as usize,
            found: *len as usize,
        },
        _ => IngestError::MalformedRow { origin: origin.to_string(), line, reason: err.to_string() },
    }
}

fn malformed(origin: &str, line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow { origin: origin.to_string(), line, reason: reason.into() }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Parses `kernels.csv`.
pub fn parse_kernel_times(path: &Path) -> Result<Vec<KernelProfile>, IngestError> {
    read_kernel_times(open(path)?, &origin(path))
}

pub fn read_kernel_times<R: Read>(reader: R, origin: &str) -> Result<Vec<KernelProfile>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h.map_err(|e| csv_error(origin, e))?,
    };
    let names: Vec<&str> = header.iter().collect();
    let with_source = match names.as_slice() {
        ["kernel_name", "time_ns"] => false,
        ["kernel_name", "time_ns", "source_file"] => true,
        _ => {
            return Err(IngestError::BadHeader {
                origin: origin.to_string(),
                expected: KERNELS_HEADER.to_string(),
            })
        }
    };
    let width = if with_source { 3 } else { 2 };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(origin, e))?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(IngestError::RaggedRow {
                origin: origin.to_string(),
                line,
                expected: width,
                found: record.len(),
            });
        }
        let name = &record[0];
        if name.is_empty() {
            return Err(malformed(origin, line, "empty kernel_name"));
        }
        let time_ns: u64 = record[1]
            .parse()
            .map_err(|_| malformed(origin, line, format!("time_ns `{}` is not a non-negative integer", &record[1])))?;
        if !seen.insert(name.to_string()) {
            return Err(IngestError::DuplicateKernel(name.to_string()));
        }
        let source_file = if with_source && !record[2].is_empty() { Some(record[2].to_string()) } else { None };
        out.push(KernelProfile { kernel_name: name.to_string(), time_ns, source_file });
    }
    Ok(out)
}

pub fn write_kernel_times<W: Write>(writer: W, kernels: &[KernelProfile]) -> Result<(), csv::Error> {
    let with_source = kernels.iter().any(|k| k.source_file.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_source {
        w.write_record(["kernel_name", "time_ns", "source_file"])?;
    } else {
        w.write_record(["kernel_name", "time_ns"])?;
    }
    for k in kernels {
        let time = k.time_ns.to_string();
        if with_source {
            w.write_record([k.kernel_name.as_str(), &time, k.source_file.as_deref().unwrap_or("")])?;
        } else {
            w.write_record([k.kernel_name.as_str(), &time])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader over `pcsamples.csv`. Memory use is independent of
/// file size; rows are yielded one at a time.
pub struct PcSampleReader<R: Read> {
    origin: String,
    unit: StallUnit,
    records: csv::StringRecordsIntoIter<R>,
    line_offset: u64,
    record: usize,
}

impl PcSampleReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        Self::new(open(path)?, &origin(path))
    }
}

impl<R: BufRead> PcSampleReader<R> {
    /// Reads leading `#` comments (capturing `unit=`) and the header.
    pub fn new(mut reader: R, origin: &str) -> Result<Self, IngestError> {
        let mut unit = StallUnit::Cycles;
        let mut consumed = 0u64;
        loop {
            let buf = reader.fill_buf().map_err(|e| IngestError::io(origin, e))?;
            if buf.first() != Some(&b'#') {
                break;
            }
            let mut line = String::new();
            reader.read_line(&mut line).map_err(|e| IngestError::io(origin, e))?;
            consumed += 1;
            let body = line.trim_start_matches('#').trim();
            if let Some(value) = body.strip_prefix("unit=") {
                unit = match value.trim() {
                    "cycles" => StallUnit::Cycles,
                    "samples" => StallUnit::Samples,
                    other => return Err(malformed(origin, consumed, format!("unknown unit `{other}`"))),
                };
            }
        }
        let rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut records = rdr.into_records();
        match records.next() {
            None => {}
            Some(header) => {
                let header = header.map_err(|e| csv_error(origin, e))?;
                let names: Vec<&str> = header.iter().collect();
                if names != PC_HEADER {
                    return Err(IngestError::BadHeader {
                        origin: origin.to_string(),
                        expected: PC_HEADER.join(","),
                    });
                }
            }
        }
        Ok(PcSampleReader { origin: origin.to_string(), unit, records, line_offset: consumed, record: 0 })
    }
}

impl<R: Read> PcSampleReader<R> {
    pub fn unit(&self) -> StallUnit {
        self.unit
    }

    fn convert(&self, record: csv::StringRecord) -> Result<StallSample, IngestError> {
        let line = line_of(&record) + self.line_offset;
        if record.len() != PC_HEADER.len() {
            return Err(IngestError::RaggedRow {
                origin: self.origin.clone(),
                line,
                expected: PC_HEADER.len(),
                found: record.len(),
            });
        }
        if record[0].is_empty() {
            return Err(malformed(&self.origin, line, "empty kernel_name"));
        }
        let source_line: u32 = record[1]
            .parse()
            .ok()
            .filter(|l| *l >= 1)
            .ok_or_else(|| malformed(&self.origin, line, format!("source_line `{}` must be a positive integer", &record[1])))?;
        if record[2].is_empty() {
            return Err(malformed(&self.origin, line, "empty stall_type"));
        }
        let cycles: u64 = record[3]
            .parse()
            .map_err(|_| malformed(&self.origin, line, format!("cycles `{}` must be a non-negative integer", &record[3])))?;
        Ok(StallSample {
            kernel_name: record[0].to_string(),
            source_line,
            stall_type: record[2].to_string(),
            cycles,
        })
    }
}

impl<R: Read> Iterator for PcSampleReader<R> {
    type Item = Result<StallSample, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.record += 1;
        Some(record.map_err(|e| csv_error(&self.origin, e)).and_then(|r| self.convert(r)))
    }
}

/// Parses a whole `pcsamples.csv` into memory. Use [`PcSampleReader`] for
/// traces that should be streamed.
pub fn parse_pc_samples(path: &Path) -> Result<(Vec<StallSample>, StallUnit), IngestError> {
    let reader = PcSampleReader::open(path)?;
    let unit = reader.unit();
    let samples = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((samples, unit))
}

pub fn write_pc_samples<W: Write>(writer: W, samples: &[StallSample], unit: StallUnit) -> Result<(), csv::Error> {
    let mut writer = writer;
    writeln!(writer, "# unit={}", unit.as_str())?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PC_HEADER)?;
    for s in samples {
        w.write_record([
            s.kernel_name.as_str(),
            &s.source_line.to_string(),
            s.stall_type.as_str(),
            &s.cycles.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the wide `counters.csv`.
pub fn parse_counter_matrix(path: &Path) -> Result<CounterMatrix, IngestError> {
    read_counter_matrix(open(path)?, &origin(path))
}

pub fn read_counter_matrix<R: Read>(reader: R, origin: &str) -> Result<CounterMatrix, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(IngestError::FewerThanTwoRuns { origin: origin.to_string(), runs: 0 }),
        Some(h) => h.map_err(|e| csv_error(origin, e))?,
    };
    if header.get(0) != Some("run_id") {
        return Err(IngestError::BadHeader {
            origin: origin.to_string(),
            expected: "run_id,runtime_ns,<counter...>".to_string(),
        });
    }
    let runtime_col = header
        .iter()
        .position(|h| h == "runtime_ns")
        .ok_or_else(|| IngestError::MissingRuntimeColumn { origin: origin.to_string() })?;
    let counter_cols: Vec<usize> = (1..header.len()).filter(|&c| c != runtime_col).collect();
    if counter_cols.is_empty() {
        return Err(IngestError::NoCounters { origin: origin.to_string() });
    }
    let mut names = HashSet::new();
    let counter_names: Vec<String> = counter_cols.iter().map(|&c| header[c].to_string()).collect();
    for name in &counter_names {
        if name.is_empty() {
            return Err(malformed(origin, 1, "empty counter name"));
        }
        if !names.insert(name.as_str()) {
            return Err(IngestError::DuplicateCounter(name.clone()));
        }
    }

    let width = header.len();
    let mut run_ids = Vec::new();
    let mut values = Vec::new();
    let mut runtime_ns = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(origin, e))?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(IngestError::RaggedRow { origin: origin.to_string(), line, expected: width, found: record.len() });
        }
        let parse = |col: usize| -> Result<f64, IngestError> {
            let cell = &record[col];
            if cell.is_empty() {
                return Err(malformed(origin, line, format!("missing value in column `{}`", &header[col])));
            }
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(origin, line, format!("`{cell}` in column `{}` is not a finite number", &header[col])))
        };
        let runtime = parse(runtime_col)?;
        if runtime <= 0.0 {
            return Err(malformed(origin, line, "runtime_ns must be positive"));
        }
        let row = counter_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>, _>>()?;
        run_ids.push(record[0].to_string());
        runtime_ns.push(runtime);
        values.push(row);
    }
    if run_ids.len() < 2 {
        return Err(IngestError::FewerThanTwoRuns { origin: origin.to_string(), runs: run_ids.len() });
    }
    Ok(CounterMatrix { run_ids, counter_names, values, runtime_ns })
}

pub fn write_counter_matrix<W: Write>(writer: W, m: &CounterMatrix) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["run_id".to_string(), "runtime_ns".to_string()];
    header.extend(m.counter_names.iter().cloned());
    w.write_record(&header)?;
    for ((id, rt), row) in m.run_ids.iter().zip(&m.runtime_ns).zip(&m.values) {
        let mut rec = vec![id.clone(), rt.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `roofline.json` and validates each entry.
pub fn parse_roofline(path: &Path) -> Result<Vec<RooflineRaw>, IngestError> {
    read_roofline(open(path)?, &origin(path))
}

pub fn read_roofline<R: Read>(reader: R, origin: &str) -> Result<Vec<RooflineRaw>, IngestError> {
    let entries: Vec<RooflineRaw> = serde_json::from_reader(reader)
        .map_err(|source| IngestError::Json { origin: origin.to_string(), source })?;
    for e in &entries {
        e.validate()?;
    }
    Ok(entries)
}

pub fn write_roofline<W: Write>(writer: W, entries: &[RooflineRaw]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(writer, entries)
}
