//! Reader for MATPOWER version-2 case files (`mpc.bus`, `mpc.gen`,
//! `mpc.branch`, `mpc.baseMVA`). Other tables are ignored.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Branch, Bus, BusKind, Generator, PowerGrid};

/// Parse the numeric tables of a case file into a grid.
pub fn parse_case(src: &str) -> Result<PowerGrid> {
    let tables = read_tables(src)?;
    let base_mva = scalar(src, "baseMVA")?.unwrap_or(100.0);

    let bus_rows = tables.get("bus").ok_or_else(|| Error::Parse("case file has no mpc.bus".into()))?;
    let gen_rows = tables.get("gen").cloned().unwrap_or_default();
    let br_rows = tables.get("branch").ok_or_else(|| Error::Parse("case file has no mpc.branch".into()))?;

    let mut generators = Vec::new();
    let mut vg: HashMap<usize, f64> = HashMap::new();
    for (k, row) in gen_rows.iter().enumerate() {
        need(row, 6, "gen", k)?;
        let status = row.get(7).copied().unwrap_or(1.0);
        if status <= 0.0 {
            continue;
        }
        let bus = row[0] as usize;
        vg.entry(bus).or_insert(row[5]);
        generators.push(Generator { bus, pg: row[1], qg: row[2] });
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (k, row) in bus_rows.iter().enumerate() {
        need(row, 9, "bus", k)?;
        let id = row[0] as usize;
        let kind = match row[1] as i64 {
            1 => BusKind::Pq,
            2 if vg.contains_key(&id) => BusKind::Pv,
            2 => BusKind::Pq,
            3 => BusKind::Slack,
            t => return Err(Error::Parse(format!("mpc.bus row {}: unsupported bus type {t}", k + 1))),
        };
        buses.push(Bus {
            id,
            kind,
            pd: row[2],
            qd: row[3],
            gs: row[4],
            bs: row[5],
            v_setpoint: if kind == BusKind::Pq { None } else { vg.get(&id).copied().or(Some(row[7])) },
            vm: row[7],
            va: row[8],
        });
    }

    let mut branches = Vec::with_capacity(br_rows.len());
    for (k, row) in br_rows.iter().enumerate() {
        need(row, 5, "branch", k)?;
        let status = row.get(10).copied().unwrap_or(1.0);
        if status <= 0.0 {
            continue;
        }
        let ratio = row.get(8).copied().unwrap_or(0.0);
        branches.push(Branch {
            from: row[0] as usize,
            to: row[1] as usize,
            r: row[2],
            x: row[3],
            b: row[4],
            tap_ratio: if ratio == 0.0 { 1.0 } else { ratio },
            shift: row.get(9).copied().unwrap_or(0.0),
        });
    }

    Ok(PowerGrid { base_mva, buses, branches, generators })
}

fn need(row: &[f64], n: usize, table: &str, k: usize) -> Result<()> {
    if row.len() < n {
        return Err(Error::Parse(format!(
            "mpc.{table} row {}: expected at least {n} columns, found {}",
            k + 1,
            row.len()
        )));
    }
    Ok(())
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn scalar(src: &str, name: &str) -> Result<Option<f64>> {
    let key = format!("mpc.{name}");
    for line in src.lines().map(strip_comment) {
        let Some(rest) = line.trim().strip_prefix(&key) else { continue };
        let Some(rhs) = rest.trim_start().strip_prefix('=') else { continue };
        let v = rhs.trim().trim_end_matches(';').trim();
        return v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Parse(format!("{key}: cannot parse '{v}'")));
    }
    Ok(None)
}

/// Collect every `mpc.<name> = [ ... ];` numeric matrix.
fn read_tables(src: &str) -> Result<HashMap<String, Vec<Vec<f64>>>> {
    let mut out = HashMap::new();
    let mut current: Option<(String, Vec<Vec<f64>>)> = None;
    for (lineno, raw) in src.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let mut body = line;
        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else { continue };
            let Some((name, rhs)) = rest.split_once('=') else { continue };
            let rhs = rhs.trim();
            let Some(after) = rhs.strip_prefix('[') else { continue };
            current = Some((name.trim().to_string(), Vec::new()));
            body = after;
        }
        let (name, rows) = current.as_mut().expect("table open");
        let (content, closed) = match body.find(']') {
            Some(i) => (&body[..i], true),
            None => (body, false),
        };
        for chunk in content.split(';') {
            let vals: Vec<&str> =
                chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            if vals.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(vals.len());
            for v in vals {
                row.push(v.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("line {}: mpc.{name}: cannot parse '{v}'", lineno + 1))
                })?);
            }
            rows.push(row);
        }
        if closed {
            let (name, rows) = current.take().expect("table open");
            out.insert(name, rows);
        }
    }
    if let Some((name, _)) = current {
        return Err(Error::Parse(format!("mpc.{name}: unterminated matrix")));
    }
    Ok(out)
}
