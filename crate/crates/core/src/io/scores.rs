use std::collections::BTreeMap;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::eval::{Label, Method, ScoreRecord};
use crate::gof::Statistic;

/// Column layout of a score table: `id`, `s_<stat>…`, `q_<stat>…`, `s_sitn`,
/// one column per extra method, `label`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreColumns {
    pub statistics: Vec<Statistic>,
    /// Methods other than `Sitn` and the single-statistic quantiles.
    pub methods: Vec<Method>,
}

impl ScoreColumns {
    pub fn of(records: &[ScoreRecord]) -> Result<Self> {
        let statistics: Vec<Statistic> = records
            .first()
            .map(|r| r.stats.iter().map(|p| p.0).collect())
            .unwrap_or_default();
        let mut methods: Vec<Method> = records
            .iter()
            .flat_map(|r| r.scores.keys().copied())
            .filter(|m| !m.is_constituent())
            .collect();
        methods.sort();
        methods.dedup();
        for r in records {
            if r.stats.iter().map(|p| p.0).ne(statistics.iter().copied()) {
                return Err(Error::InvalidInput(format!("record {} has different statistics", r.id)));
            }
        }
        Ok(Self { statistics, methods })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend(self.statistics.iter().map(|s| format!("s_{s}")));
        h.extend(self.statistics.iter().map(|s| format!("q_{s}")));
        h.push("s_sitn".into());
        h.extend(self.methods.iter().map(|m| m.name().to_string()));
        h.push("label".into());
        h
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("score table: {e}"))
}

pub fn records_to_csv(records: &[ScoreRecord]) -> Result<String> {
    let cols = ScoreColumns::of(records)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cols.header()).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.id.to_string()];
        row.extend(r.stats.iter().map(|p| fmt(Some(p.1))));
        for s in &cols.statistics {
            let q = r.quantiles.as_ref().and_then(|q| q.iter().find(|p| p.0 == *s)).map(|p| p.1);
            row.push(fmt(q));
        }
        row.push(fmt(r.score(Method::Sitn)));
        row.extend(cols.methods.iter().map(|&m| fmt(r.score(m))));
        row.push(r.label.map(|l| l.name().to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

enum Column {
    Id,
    Stat(Statistic),
    Quantile(Statistic),
    Sitn,
    Method(Method),
    Label,
}

fn parse_header(h: &csv::StringRecord) -> Result<Vec<Column>> {
    let cols = h
        .iter()
        .map(|name| {
            Ok(match name {
                "id" => Column::Id,
                "s_sitn" => Column::Sitn,
                "label" => Column::Label,
                n if n.starts_with("s_") => Column::Stat(n[2..].parse()?),
                n if n.starts_with("q_") => Column::Quantile(n[2..].parse()?),
                n => {
                    let m: Method = n.parse().map_err(|_| Error::Format(format!("unknown column '{n}'")))?;
                    if m.is_constituent() {
                        return Err(Error::Format(format!("column '{n}' duplicates the q_ columns")));
                    }
                    Column::Method(m)
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !matches!(cols.first(), Some(Column::Id)) {
        return Err(Error::Format("score table must start with an 'id' column".into()));
    }
    Ok(cols)
}

fn parse_value(v: &str, col: &str, line: u64) -> Result<Option<f64>> {
    if v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("line {line}: '{v}' in column '{col}' is not a number")))
}

/// Parses a score table. `Sitn` and the single-statistic methods are
/// restored from the `s_sitn` and `q_` columns.
pub fn records_from_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols = parse_header(&header)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i as u64 + 2;
        let mut rec = ScoreRecord {
            id: 0,
            stats: Vec::new(),
            quantiles: None,
            scores: BTreeMap::new(),
            label: None,
        };
        let mut quantiles = Vec::new();
        for ((col, name), v) in cols.iter().zip(header.iter()).zip(row.iter()) {
            match col {
                Column::Id => {
                    rec.id = v
                        .parse()
                        .map_err(|_| Error::Format(format!("line {line}: bad id '{v}'")))?
                }
                Column::Stat(s) => {
                    let x = parse_value(v, name, line)?
                        .ok_or_else(|| Error::Format(format!("line {line}: empty '{name}'")))?;
                    rec.stats.push((*s, x));
                }
                Column::Quantile(s) => {
                    if let Some(q) = parse_value(v, name, line)? {
                        quantiles.push((*s, q));
                        rec.scores.insert(Method::from_statistic(*s), q);
                    }
                }
                Column::Sitn => {
                    if let Some(x) = parse_value(v, name, line)? {
                        rec.scores.insert(Method::Sitn, x);
                    }
                }
                Column::Method(m) => {
                    if let Some(x) = parse_value(v, name, line)? {
                        rec.scores.insert(*m, x);
                    }
                }
                Column::Label => {
                    if !v.is_empty() {
                        rec.label = Some(v.parse::<Label>().map_err(|_| {
                            Error::Format(format!("line {line}: label must be 'id' or 'ood', got '{v}'"))
                        })?);
                    }
                }
            }
        }
        if !quantiles.is_empty() {
            rec.quantiles = Some(quantiles);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    write_atomic(path, records_to_csv(records)?.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    records_from_csv(&read_text(path)?)
}
