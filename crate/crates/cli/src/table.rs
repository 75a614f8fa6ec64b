//! CSV exchange formats: one row per time step, one column per sensor, and a
//! long table for QoI predictions.

use std::path::Path;

use lti_twin::SpaceTimeField;

use crate::error::{CliError, CliResult};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn column_name(id: usize) -> String {
    format!("s{id}")
}

/// Writes `time, s<id>...` with one row per time step.
pub fn write_traces(path: &Path, field: &SpaceTimeField, ids: &[usize]) -> CliResult<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header = vec!["time".to_string()];
    header.extend(ids.iter().map(|&i| column_name(i)));
    w.write_record(&header).map_err(&err)?;
    for t in 0..field.n_time() {
        let mut row = vec![format_f64(t as f64 * field.dt())];
        row.extend(field.slice(t).iter().map(|v| format_f64(*v)));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| {
        CliError::Core(lti_twin::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Reads a trace table, checking the sensor columns against `ids`.
pub fn read_traces(path: &Path, ids: &[usize], dt: f64) -> CliResult<SpaceTimeField> {
    let err = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&err)?;
    let header = r.headers().map_err(&err)?.clone();
    let expected: Vec<String> = std::iter::once("time".to_string())
        .chain(ids.iter().map(|&i| column_name(i)))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::Usage(format!(
            "{}: header {:?} does not match the configured sensors {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut values = Vec::new();
    let mut n_time = 0;
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(&err)?;
        for cell in record.iter().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: row {} has non-numeric value `{cell}`",
                    path.display(),
                    row + 1
                ))
            })?;
            values.push(v);
        }
        n_time += 1;
    }
    Ok(SpaceTimeField::new(ids.len(), n_time, dt, values)?)
}

/// QoI prediction table: `time, qoi, q_map, lo, hi`.
pub fn write_predictions(
    path: &Path,
    q: &SpaceTimeField,
    lo: &[f64],
    hi: &[f64],
    ids: &[usize],
    dt: f64,
) -> CliResult<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["time", "qoi", "q_map", "lo", "hi"])
        .map_err(&err)?;
    let n = q.n_space();
    for t in 0..q.n_time() {
        for (s, id) in ids.iter().enumerate() {
            let k = t * n + s;
            w.write_record([
                format_f64(t as f64 * dt),
                column_name(*id),
                format_f64(q.get(t, s)),
                format_f64(lo[k]),
                format_f64(hi[k]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| {
        CliError::Core(lti_twin::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Round-trippable decimal form.
fn format_f64(v: f64) -> String {
    format!("{v:e}")
}
