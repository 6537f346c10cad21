//! Telemetry and capacity CSV reading/writing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::record::{CapacityTable, CellRecords, CycleRecord};
use crate::error::{Error, Result};

/// Maps the logical telemetry columns onto header names in a file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub cell_id: String,
    pub cycle_index: String,
    pub time_s: String,
    pub voltage_v: String,
    pub current_a: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            cell_id: "cell_id".into(),
            cycle_index: "cycle_index".into(),
            time_s: "time_s".into(),
            voltage_v: "voltage_V".into(),
            current_a: "current_A".into(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Data(format!("line {line}: cannot parse {what} from '{field}'")))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reads telemetry rows from any reader. Row order does not matter: samples
/// are ordered by time within each cycle, cycles by index, cells by id.
pub fn read_cells<R: Read>(reader: R, schema: &ColumnMap) -> Result<Vec<CellRecords>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_cell = column(&headers, &schema.cell_id)?;
    let c_cycle = column(&headers, &schema.cycle_index)?;
    let c_time = column(&headers, &schema.time_s)?;
    let c_v = column(&headers, &schema.voltage_v)?;
    let c_i = column(&headers, &schema.current_a)?;

    let mut grouped: BTreeMap<String, BTreeMap<usize, Vec<[f64; 3]>>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = row.get(c_cell).unwrap_or_default().trim().to_string();
        let cycle: usize = parse(row.get(c_cycle).unwrap_or_default(), "cycle_index", line)?;
        let t: f64 = parse(row.get(c_time).unwrap_or_default(), "time_s", line)?;
        let v: f64 = parse(row.get(c_v).unwrap_or_default(), "voltage", line)?;
        let i: f64 = parse(row.get(c_i).unwrap_or_default(), "current", line)?;
        if !(t.is_finite() && v.is_finite() && i.is_finite()) {
            return Err(Error::Data(format!("line {line}: non-finite value")));
        }
        grouped.entry(cell).or_default().entry(cycle).or_default().push([t, v, i]);
    }

    let mut cells = Vec::with_capacity(grouped.len());
    for (cell_id, cycles) in grouped {
        let mut records = Vec::with_capacity(cycles.len());
        for (cycle_index, mut samples) in cycles {
            samples.sort_by(|a, b| a[0].total_cmp(&b[0]));
            let mut deltas: Vec<f64> = samples.windows(2).map(|w| w[1][0] - w[0][0]).collect();
            if deltas.iter().any(|&d| d <= 0.0) {
                return Err(Error::Data(format!(
                    "cell {cell_id} cycle {cycle_index}: time is not strictly increasing"
                )));
            }
            if deltas.is_empty() {
                return Err(Error::Data(format!("cell {cell_id} cycle {cycle_index}: need at least 2 samples")));
            }
            let period = median(&mut deltas);
            let voltage = samples.iter().map(|s| s[1]).collect();
            let current = samples.iter().map(|s| s[2]).collect();
            records.push(CycleRecord::new(cell_id.clone(), cycle_index, period, voltage, current)?);
        }
        cells.push(CellRecords::new(cell_id, records)?);
    }
    Ok(cells)
}

pub fn load_cells(path: &Path, schema: &ColumnMap) -> Result<Vec<CellRecords>> {
    read_cells(File::open(path)?, schema)
}

/// Writes cells in the default telemetry schema; `time_s` is `k * sample_period_s`.
pub fn write_cells<W: Write>(writer: W, cells: &[CellRecords]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell_id", "cycle_index", "time_s", "voltage_V", "current_A"])?;
    for cell in cells {
        for cyc in &cell.cycles {
            for (k, (v, i)) in cyc.voltage.iter().zip(&cyc.current).enumerate() {
                let t = k as f64 * cyc.sample_period_s;
                w.write_record([
                    cell.cell_id.clone(),
                    cyc.cycle_index.to_string(),
                    t.to_string(),
                    v.to_string(),
                    i.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_capacity<W: Write>(writer: W, table: &CapacityTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell_id", "cycle_index", "capacity_Ah"])?;
    for (id, c, q) in table.iter() {
        w.write_record([id.to_string(), c.to_string(), q.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_capacity<R: Read>(reader: R) -> Result<CapacityTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_cell = column(&headers, "cell_id")?;
    let c_cycle = column(&headers, "cycle_index")?;
    let c_q = column(&headers, "capacity_Ah")?;
    let mut table = CapacityTable::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let q: f64 = parse(row.get(c_q).unwrap_or_default(), "capacity_Ah", line)?;
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Data(format!("line {line}: capacity must be positive")));
        }
        table.insert(
            row.get(c_cell).unwrap_or_default().trim(),
            parse(row.get(c_cycle).unwrap_or_default(), "cycle_index", line)?,
            q,
        );
    }
    Ok(table)
}

pub fn load_capacity(path: &Path) -> Result<CapacityTable> {
    read_capacity(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_csv() -> Vec<String> {
        let mut rows = Vec::new();
        for cell in ["B", "A"] {
            for cycle in [2usize, 0, 1] {
                for k in 0..4 {
                    rows.push(format!(
                        "{cell},{cycle},{},{},{}",
                        k as f64 * 2.0,
                        3.5 + 0.01 * k as f64 + cycle as f64,
                        -1.0 - k as f64
                    ));
                }
            }
        }
        rows
    }

    fn to_csv(rows: &[String]) -> String {
        let mut s = "cell_id,cycle_index,time_s,voltage_V,current_A\n".to_string();
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn groups_and_sorts() {
        let cells = read_cells(to_csv(&sample_csv()).as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].cell_id, "A");
        for cell in &cells {
            assert_eq!(cell.cycle_indices(), vec![0, 1, 2]);
            for c in &cell.cycles {
                assert_eq!(c.sample_period_s, 2.0);
                assert_eq!(c.len(), 4);
            }
        }
    }

    #[test]
    fn shuffled_rows_match_sorted_rows() {
        let rows = sample_csv();
        let mut shuffled = rows.clone();
        // deterministic permutation
        shuffled.sort_by_key(|r| r.len() * 31 % 7 + r.bytes().map(|b| b as usize).sum::<usize>() % 11);
        shuffled.reverse();
        let a = read_cells(to_csv(&rows).as_bytes(), &ColumnMap::default()).unwrap();
        let b = read_cells(to_csv(&shuffled).as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_timestamps_are_data_errors() {
        let mut rows = sample_csv();
        rows.push(rows[0].clone());
        let err = read_cells(to_csv(&rows).as_bytes(), &ColumnMap::default()).unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("cell B") && msg.contains("cycle 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "cell_id,cycle_index,time_s,voltage_V\nA,0,0,3.0\n";
        assert!(matches!(read_cells(csv.as_bytes(), &ColumnMap::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn custom_schema_mapping() {
        let csv = "id,cyc,t,v,i\nA,0,0,3.0,-1\nA,0,1,3.1,-1\n";
        let schema = ColumnMap {
            cell_id: "id".into(),
            cycle_index: "cyc".into(),
            time_s: "t".into(),
            voltage_v: "v".into(),
            current_a: "i".into(),
        };
        let cells = read_cells(csv.as_bytes(), &schema).unwrap();
        assert_eq!(cells[0].cycles[0].voltage, vec![3.0, 3.1]);
    }

    #[test]
    fn write_then_read_preserves_values() {
        let cells = read_cells(to_csv(&sample_csv()).as_bytes(), &ColumnMap::default()).unwrap();
        let mut buf = Vec::new();
        write_cells(&mut buf, &cells).unwrap();
        let again = read_cells(buf.as_slice(), &ColumnMap::default()).unwrap();
        assert_eq!(cells, again);

        let mut table = CapacityTable::new();
        table.insert("A", 0, 4.75);
        let mut buf = Vec::new();
        write_capacity(&mut buf, &table).unwrap();
        assert_eq!(read_capacity(buf.as_slice()).unwrap(), table);
    }
}
