use std::path::Path;

use indexmap::IndexMap;
use log::warn;

use super::RawSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Reads channels from a headed CSV, one series per distinct group value.
///
/// Rows with an empty requested value are dropped. Groups left with fewer
/// than two rows are skipped with a warning. Without a group column the
/// whole file is one series named after the file stem.
pub fn load_csv_series(
    path: &Path,
    channel_names: &[String],
    group_column: Option<&str>,
) -> Result<Vec<RawSeries>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let channel_idx: Vec<usize> = channel_names.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let group_idx = group_column.map(find).transpose()?;
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());

    let mut groups: IndexMap<String, Vec<Vec<f64>>> = IndexMap::new();
    let mut dropped = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(channel_idx.len());
        let mut missing = false;
        for (&ci, cname) in channel_idx.iter().zip(channel_names) {
            let raw = record.get(ci).unwrap_or("").trim();
            if raw.is_empty() {
                missing = true;
                break;
            }
            let v: f64 = raw.parse().map_err(|_| {
                Error::invalid(format!(
                    "{}: line {}: column `{cname}` value `{raw}` is not a number",
                    path.display(),
                    line + 2
                ))
            })?;
            if !v.is_finite() {
                missing = true;
                break;
            }
            row.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        let key = match group_idx {
            Some(g) => record.get(g).unwrap_or("").to_string(),
            None => default_name.clone(),
        };
        groups.entry(key).or_default().push(row);
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing values", path.display());
    }

    let mut out = Vec::new();
    for (name, rows) in groups.into_iter() {
        if rows.len() < 2 {
            warn!("{}: group `{name}` has {} usable rows, skipping", path.display(), rows.len());
            continue;
        }
        let values = Tensor::from_rows(&rows)?;
        out.push(RawSeries::new(name, channel_names.to_vec(), values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ohlc() -> Vec<String> {
        ["open", "high", "low", "close"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_ticker() {
        let f = write_tmp(
            "date,open,high,low,close,volume,Name\n\
             d1,1,2,0.5,1.5,100,AAL\n\
             d2,1.5,2.5,1,2,100,AAL\n\
             d3,2,3,1.5,2.5,100,AAL\n",
        );
        let s = load_csv_series(f.path(), &ohlc(), Some("Name")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 3);
        assert_eq!(s[0].name, "AAL");
        assert_eq!(s[0].values().row(1), &[1.5, 2.5, 1.0, 2.0]);
    }

    #[test]
    fn interleaved_tickers() {
        let f = write_tmp(
            "open,high,low,close,Name\n\
             1,1,1,1,A\n2,2,2,2,B\n3,3,3,3,A\n4,4,4,4,B\n5,5,5,5,B\n",
        );
        let s = load_csv_series(f.path(), &ohlc(), Some("Name")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].name.as_str(), s[0].len()), ("A", 2));
        assert_eq!((s[1].name.as_str(), s[1].len()), ("B", 3));
        assert_eq!(s[1].channel(0), vec![2.0, 4.0, 5.0]);
    }

    #[test]
    fn empty_value_drops_row() {
        let f = write_tmp("open,high,low,close\n1,1,1,1\n2,2,2,\n3,3,3,3\n");
        let s = load_csv_series(f.path(), &ohlc(), None).unwrap();
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[0].channel(3), vec![1.0, 3.0]);
    }

    #[test]
    fn short_group_is_skipped() {
        let f = write_tmp("open,high,low,close,Name\n1,1,1,1,A\n2,2,2,2,B\n3,3,3,3,B\n");
        let s = load_csv_series(f.path(), &ohlc(), Some("Name")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].name, "B");
    }

    #[test]
    fn missing_column_and_file() {
        let f = write_tmp("open,high,low\n1,1,1\n");
        assert!(matches!(
            load_csv_series(f.path(), &ohlc(), None),
            Err(Error::MissingColumn(c)) if c == "close"
        ));
        assert!(matches!(
            load_csv_series(Path::new("/nonexistent/x.csv"), &ohlc(), None),
            Err(Error::Io { .. })
        ));
    }
}
