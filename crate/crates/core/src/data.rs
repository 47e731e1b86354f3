//! Dataset ingestion: ETT-style CSV loading, chronological splits, sliding
//! windows and few-shot subsampling.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate series as loaded from disk; `values` is `[T_total × N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub timestamps: Vec<String>,
    pub values: Array2<f64>,
    pub channel_names: Vec<String>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..end`, keeping the original timestamps.
    pub fn segment(&self, start: usize, end: usize) -> RawDataset {
        RawDataset {
            name: self.name.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice(s![start..end, ..]).to_owned(),
            channel_names: self.channel_names.clone(),
        }
    }
}

/// One supervised example: `history` is `[N × L]`, `target` is `[N × H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub history: Array2<f64>,
    pub target: Array2<f64>,
    pub start_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few_shot_ratio: Option<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            few_shot_ratio: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {fractions:?}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if let Some(r) = self.few_shot_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!(
                    "few_shot_ratio must lie in (0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Dataset descriptor file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub name: String,
    pub path: PathBuf,
    pub seq_len: usize,
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Seasonal period used by the decomposition (24 for hourly data, 96 for 15-minute data).
    #[serde(default = "default_period")]
    pub period: usize,
    /// Free-text description used as the prompt's dataset context.
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub split: SplitSpec,
}

fn default_stride() -> usize {
    1
}

fn default_period() -> usize {
    24
}

impl DatasetDescriptor {
    /// Reads a TOML descriptor; a relative `path` is resolved against the descriptor's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut desc: DatasetDescriptor =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if desc.path.is_relative() {
            if let Some(dir) = path.parent() {
                desc.path = dir.join(&desc.path);
            }
        }
        Ok(desc)
    }
}

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Loads a CSV whose first column is a datetime and whose remaining columns are numeric.
///
/// Rows are reported 1-based counting the header as row 1, so the first data
/// row is row 2; columns are 1-based.
pub fn load_csv(path: &Path, name: &str) -> Result<RawDataset> {
    let csv_err = |row: usize, column: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, 1, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(csv_err(1, headers.len(), "need a date column and at least one value column".into()));
    }
    let channel_names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let n = channel_names.len();

    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    let mut previous: Option<NaiveDateTime> = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_err(row, 1, e.to_string()))?;
        if record.len() != n + 1 {
            return Err(csv_err(
                row,
                record.len().min(n + 1),
                format!("expected {} cells, found {}", n + 1, record.len()),
            ));
        }
        let stamp = &record[0];
        let parsed = parse_datetime(stamp)
            .ok_or_else(|| csv_err(row, 1, format!("cannot parse datetime {stamp:?}")))?;
        if let Some(prev) = previous {
            if parsed <= prev {
                return Err(csv_err(row, 1, format!("timestamp {stamp:?} is not after the previous row")));
            }
        }
        previous = Some(parsed);
        timestamps.push(stamp.trim().to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(csv_err(row, c + 2, "missing value".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(row, c + 2, format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(row, c + 2, format!("non-finite value {cell:?}")));
            }
            flat.push(v);
        }
    }
    let rows = timestamps.len();
    let values = Array2::from_shape_vec((rows, n), flat).expect("row-major fill");
    Ok(RawDataset {
        name: name.to_string(),
        timestamps,
        values,
        channel_names,
    })
}

/// Writes a dataset in the same CSV layout [`load_csv`] reads.
pub fn write_csv(ds: &RawDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut header = vec!["date".to_string()];
    header.extend(ds.channel_names.iter().cloned());
    writer.write_record(&header).map_err(io)?;
    for (t, row) in ds.timestamps.iter().zip(ds.values.rows()) {
        let mut rec = vec![t.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&rec).map_err(io)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Sliding windows at offsets `0, stride, 2·stride, …`.
pub fn make_windows(ds: &RawDataset, seq_len: usize, horizon: usize, stride: usize) -> Result<Vec<WindowPair>> {
    if seq_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window sizes must be positive (L={seq_len}, H={horizon}, stride={stride})"
        )));
    }
    let total = ds.len();
    if total < seq_len + horizon {
        return Err(Error::InsufficientLength {
            len: total,
            needed: seq_len + horizon,
        });
    }
    let count = (total - seq_len - horizon) / stride + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            WindowPair {
                history: ds.values.slice(s![start..start + seq_len, ..]).t().to_owned(),
                target: ds
                    .values
                    .slice(s![start + seq_len..start + seq_len + horizon, ..])
                    .t()
                    .to_owned(),
                start_index: start,
            }
        })
        .collect())
}

/// Like [`make_windows`] but a too-short segment yields no windows.
pub fn windows_or_empty(ds: &RawDataset, seq_len: usize, horizon: usize, stride: usize) -> Result<Vec<WindowPair>> {
    match make_windows(ds, seq_len, horizon, stride) {
        Err(Error::InsufficientLength { .. }) => Ok(Vec::new()),
        other => other,
    }
}

/// Result of [`split_dataset`]. `warnings` lists segments too short for one window.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: RawDataset,
    pub val: RawDataset,
    pub test: RawDataset,
    pub warnings: Vec<String>,
}

/// Chronological train/val/test split by row count.
///
/// `min_len` is `L + H`; shorter segments are kept but recorded in `warnings`.
pub fn split_dataset(ds: &RawDataset, spec: &SplitSpec, min_len: usize) -> Result<Splits> {
    spec.validate()?;
    let total = ds.len();
    let train_end = (total as f64 * spec.train_fraction).round() as usize;
    let val_end = ((total as f64 * (spec.train_fraction + spec.val_fraction)).round() as usize).min(total);
    let train = ds.segment(0, train_end);
    let val = ds.segment(train_end, val_end);
    let test = ds.segment(val_end, total);
    let warnings = [("train", &train), ("val", &val), ("test", &test)]
        .iter()
        .filter(|(_, seg)| seg.len() < min_len)
        .map(|(label, seg)| {
            format!(
                "{label} segment has {} rows, fewer than L+H={min_len}; it yields no windows",
                seg.len()
            )
        })
        .collect();
    Ok(Splits {
        train,
        val,
        test,
        warnings,
    })
}

/// The chronologically first `⌈ratio·n⌉` windows.
pub fn subsample_fewshot(windows: &[WindowPair], ratio: f64) -> Result<Vec<WindowPair>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("few-shot ratio must lie in (0, 1], got {ratio}")));
    }
    let keep = ((ratio * windows.len() as f64).ceil() as usize).min(windows.len());
    Ok(windows[..keep].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn ramp(total: usize, channels: usize) -> RawDataset {
        RawDataset {
            name: "ramp".into(),
            timestamps: (0..total).map(|i| format!("t{i}")).collect(),
            values: Array2::from_shape_fn((total, channels), |(t, c)| (t * 10 + c) as f64),
            channel_names: (0..channels).map(|c| format!("c{c}")).collect(),
        }
    }

    #[test]
    fn loads_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "a.csv",
            "date,a,b\n2020-01-01 00:00:00,1,2\n2020-01-01 01:00:00,3,4\n2020-01-01 02:00:00,5,6\n2020-01-01 03:00:00,7,8\n",
        );
        let ds = load_csv(&path, "small").unwrap();
        assert_eq!(ds.channels(), 2);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.values[[3, 1]], 8.0);
        assert_eq!(ds.channel_names, vec!["a", "b"]);
    }

    #[test]
    fn blank_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "a.csv",
            "date,a,b\n2020-01-01 00:00,1,2\n2020-01-01 01:00,,4\n2020-01-01 02:00,5,6\n",
        );
        let err = load_csv(&path, "x").unwrap_err();
        match err {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(load_csv(&path, "x").unwrap_err().to_string().contains("row 3"));
    }

    #[test]
    fn rejects_non_numeric_and_non_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.csv", "date,a\n2020-01-01,1\n2020-01-02,x\n");
        assert!(matches!(load_csv(&p, "x"), Err(Error::Csv { row: 3, column: 2, .. })));
        let p = write(&dir, "c.csv", "date,a\n2020-01-02,1\n2020-01-01,2\n");
        assert!(matches!(load_csv(&p, "x"), Err(Error::Csv { row: 3, column: 1, .. })));
        assert!(matches!(load_csv(&dir.path().join("missing.csv"), "x"), Err(Error::Io { .. })));
    }

    #[test]
    fn ett_header_gives_seven_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "ETTh1.csv",
            "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n\
             2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n\
             2016-07-01 01:00:00,5.693,2.076,1.492,0.426,4.142,1.371,27.787\n",
        );
        let ds = load_csv(&p, "ETTh1").unwrap();
        assert_eq!(ds.channels(), 7);
        assert_eq!(ds.channel_names.last().unwrap(), "OT");
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(10, 1), 4, 2, 1).unwrap().len(), 5);
        assert_eq!(make_windows(&ramp(6, 1), 4, 2, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(10, 1), 4, 2, 3).unwrap().len(), 2);
        assert!(matches!(
            make_windows(&ramp(5, 1), 4, 2, 1),
            Err(Error::InsufficientLength { len: 5, needed: 6 })
        ));
    }

    #[test]
    fn windows_reconstruct_raw_slices() {
        let ds = ramp(12, 2);
        for w in make_windows(&ds, 4, 3, 2).unwrap() {
            for c in 0..2 {
                let joined: Vec<f64> = w.history.row(c).iter().chain(w.target.row(c)).copied().collect();
                let raw: Vec<f64> = ds.values.slice(s![w.start_index..w.start_index + 7, c]).to_vec();
                assert_eq!(joined, raw);
            }
        }
    }

    #[test]
    fn split_lengths() {
        let s = split_dataset(&ramp(100, 1), &SplitSpec::default(), 10).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        assert!(s.warnings.is_empty());
        let spec = SplitSpec {
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            few_shot_ratio: None,
        };
        let s = split_dataset(&ramp(10, 1), &spec, 6).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s.warnings.len(), 2);
        assert_eq!(s.val.timestamps, vec!["t6", "t7"]);
        let bad = SplitSpec {
            train_fraction: 0.5,
            val_fraction: 0.5,
            test_fraction: 0.1,
            few_shot_ratio: None,
        };
        assert!(matches!(split_dataset(&ramp(10, 1), &bad, 1), Err(Error::Config(_))));
    }

    #[test]
    fn fewshot_prefix() {
        let ws = make_windows(&ramp(109, 1), 4, 6, 1).unwrap();
        assert_eq!(ws.len(), 100);
        let few = subsample_fewshot(&ws, 0.1).unwrap();
        assert_eq!(few.len(), 10);
        assert_eq!(few[..], ws[..10]);
        let seven = &ws[..7];
        assert_eq!(subsample_fewshot(seven, 1.0).unwrap(), seven.to_vec());
        assert_eq!(subsample_fewshot(&ws[..3], 0.5).unwrap().len(), 2);
        assert!(subsample_fewshot(&[], 0.5).unwrap().is_empty());
    }

    #[test]
    fn csv_roundtrip_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = ramp(5, 3);
        ds.timestamps = (0..5).map(|i| format!("2021-03-0{} 00:00:00", i + 1)).collect();
        let p = dir.path().join("r.csv");
        write_csv(&ds, &p).unwrap();
        let a = load_csv(&p, "ramp").unwrap();
        let b = load_csv(&p, "ramp").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, ds);
    }
}
