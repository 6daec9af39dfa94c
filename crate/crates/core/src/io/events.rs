//! Event-table ingestion and export.
//!
//! CSV input has one row per event with a replicate column and one (1D) or
//! two (2D) coordinate columns. A row whose coordinates are empty declares a
//! replicate with no events. Alternatively events can be grouped into daily
//! replicates by a date column; with `date_start` and `date_end` every day of
//! that inclusive range becomes a replicate, even days without events.
//!
//! JSON input is an array of `{"id": ..., "points": [...]}` objects where
//! each point is a number (1D) or a `[x, y]` pair (2D).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::domain::{ObservationDomain, Point};
use crate::error::{Error, Result};
use crate::process::{Dataset, PointPattern};

const DATE_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%m/%d/%Y %I:%M:%S %p",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
];
const DAY_FORMATS: &[&str] = &["%Y-%m-%d", "%m/%d/%Y"];

/// Column names and the optional date grouping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub replicate: String,
    pub x: String,
    pub y: String,
    /// Group events into daily replicates by this column instead of `replicate`.
    pub date: Option<String>,
    /// chrono format string; common formats are tried when absent.
    pub date_format: Option<String>,
    /// First day (`YYYY-MM-DD`) of the replicate range, inclusive.
    pub date_start: Option<String>,
    /// Last day (`YYYY-MM-DD`) of the replicate range, inclusive.
    pub date_end: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            replicate: "replicate_id".into(),
            x: "x".into(),
            y: "y".into(),
            date: None,
            date_format: None,
            date_start: None,
            date_end: None,
        }
    }
}

/// A loaded dataset plus what was filtered out on the way in.
#[derive(Debug, Clone)]
pub struct LoadedEvents {
    pub dataset: Dataset,
    /// Events outside the observation domain.
    pub dropped_outside_domain: usize,
    /// Events dated outside `[date_start, date_end]`.
    pub dropped_outside_dates: usize,
}

fn parse_day(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Usage(format!("bad date {s:?}: {e}")))
}

fn parse_date(s: &str, format: Option<&str>) -> Option<NaiveDate> {
    let s = s.trim();
    if let Some(f) = format {
        return NaiveDateTime::parse_from_str(s, f)
            .map(|d| d.date())
            .or_else(|_| NaiveDate::parse_from_str(s, f))
            .ok();
    }
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok().map(|d| d.date()))
        .or_else(|| DAY_FORMATS.iter().find_map(|f| NaiveDate::parse_from_str(s, f).ok()))
}

/// Replicates in first-appearance (ids) or chronological (dates) order.
struct Grouper {
    order: Vec<String>,
    index: HashMap<String, usize>,
    points: Vec<Vec<Point>>,
}

impl Grouper {
    fn new() -> Self {
        Grouper {
            order: Vec::new(),
            index: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn slot(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.order.push(id.to_string());
        self.points.push(Vec::new());
        self.index.insert(id.to_string(), self.order.len() - 1);
        self.order.len() - 1
    }

    fn finish(self) -> Vec<PointPattern> {
        self.order
            .into_iter()
            .zip(self.points)
            .map(|(id, pts)| PointPattern::new(id, pts))
            .collect()
    }
}

/// Loads events from CSV (or JSON when the extension is `.json`).
pub fn load_events(path: impl AsRef<Path>, domain: &ObservationDomain, columns: &ColumnMapping) -> Result<LoadedEvents> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_events_json(&text, domain)
    } else {
        parse_events_csv(&text, domain, columns)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonReplicate {
    id: String,
    #[serde(default)]
    points: Vec<Point>,
}

pub fn parse_events_json(text: &str, domain: &ObservationDomain) -> Result<LoadedEvents> {
    let reps: Vec<JsonReplicate> = serde_json::from_str(text).map_err(|e| Error::parse(Some(e.line() as u64), e.to_string()))?;
    let mut dropped = 0;
    let mut patterns = Vec::with_capacity(reps.len());
    for r in reps {
        let mut pts = Vec::with_capacity(r.points.len());
        for p in r.points {
            if p.dim() != domain.dim() || !p.is_finite() {
                return Err(Error::parse(None, format!("replicate {}: bad point {p}", r.id)));
            }
            if domain.contains(&p)? {
                pts.push(p);
            } else {
                dropped += 1;
            }
        }
        patterns.push(PointPattern::new(r.id, pts));
    }
    finish(domain, patterns, dropped, 0)
}

fn finish(domain: &ObservationDomain, patterns: Vec<PointPattern>, dropped: usize, outside_dates: usize) -> Result<LoadedEvents> {
    if patterns.is_empty() {
        return Err(Error::parse(None, "no replicates found"));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} event(s) outside the observation domain");
    }
    Ok(LoadedEvents {
        dataset: Dataset::new(domain.clone(), patterns)?,
        dropped_outside_domain: dropped,
        dropped_outside_dates: outside_dates,
    })
}

pub fn parse_events_csv(text: &str, domain: &ObservationDomain, columns: &ColumnMapping) -> Result<LoadedEvents> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(Some(1), e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(Some(1), format!("missing column {name:?}")))
    };
    let planar = domain.dim() == 2;
    let xi = col(&columns.x)?;
    let yi = if planar { Some(col(&columns.y)?) } else { None };
    let key = match &columns.date {
        Some(d) => col(d)?,
        None => col(&columns.replicate)?,
    };
    let range = match (&columns.date_start, &columns.date_end) {
        (Some(a), Some(b)) => {
            let (a, b) = (parse_day(a)?, parse_day(b)?);
            if b < a {
                return Err(Error::Usage(format!("date_end {b} precedes date_start {a}")));
            }
            Some((a, b))
        }
        (None, None) => None,
        _ => return Err(Error::Usage("date_start and date_end must be given together".into())),
    };

    let mut groups = Grouper::new();
    if let (Some(_), Some((a, b))) = (&columns.date, range) {
        for d in a.iter_days().take_while(|d| *d <= b) {
            groups.slot(&d.to_string());
        }
    }
    let mut dated: Vec<(NaiveDate, Option<Point>)> = Vec::new();
    let (mut dropped, mut outside_dates) = (0, 0);
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map(|p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let coord = |i: usize| -> Result<Option<f64>> {
            let s = field(i);
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| Error::parse(line, format!("column {:?}: cannot parse {s:?} as a number", &headers[i])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("column {:?}: non-finite value", &headers[i])));
            }
            Ok(Some(v))
        };
        let point = match (coord(xi)?, yi.map(coord).transpose()?.flatten()) {
            (None, None) => None,
            (Some(x), None) if !planar => Some(Point::Line(x)),
            (Some(x), Some(y)) if planar => Some(Point::Plane([x, y])),
            _ => return Err(Error::parse(line, "incomplete coordinates")),
        };
        // Out-of-domain events are dropped but their replicate is kept.
        let (point, outside) = match point {
            Some(p) if !domain.contains(&p)? => (None, true),
            other => (other, false),
        };
        if outside {
            dropped += 1;
        }
        let k = field(key);
        if k.is_empty() {
            return Err(Error::parse(line, format!("empty {:?} field", &headers[key])));
        }
        if columns.date.is_some() {
            let day = parse_date(k, columns.date_format.as_deref())
                .ok_or_else(|| Error::parse(line, format!("cannot parse date {k:?}")))?;
            if let Some((a, b)) = range {
                if day < a || day > b {
                    if !outside {
                        outside_dates += 1;
                    }
                    continue;
                }
            }
            dated.push((day, point));
        } else {
            let s = groups.slot(k);
            if let Some(p) = point {
                groups.points[s].push(p);
            }
        }
    }
    if columns.date.is_some() {
        // Events keep file order within a day; days are chronological.
        dated.sort_by_key(|(d, _)| *d);
        for (d, p) in dated {
            let s = groups.slot(&d.to_string());
            if let Some(p) = p {
                groups.points[s].push(p);
            }
        }
        if range.is_none() {
            let mut pats = groups.finish();
            pats.sort_by(|a, b| a.replicate_id.cmp(&b.replicate_id));
            return finish(domain, pats, dropped, outside_dates);
        }
    }
    finish(domain, groups.finish(), dropped, outside_dates)
}

/// Writes events as CSV (`replicate_id,x` or `replicate_id,x,y`), one row per
/// event and a coordinate-less row for each empty replicate.
pub fn write_events_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    let planar = data.domain().dim() == 2;
    if planar {
        w.write_record(["replicate_id", "x", "y"]).map_err(io)?;
    } else {
        w.write_record(["replicate_id", "x"]).map_err(io)?;
    }
    let f = |v: f64| format!("{v:.16e}");
    for pat in data.patterns() {
        if pat.points.is_empty() {
            let row: Vec<&str> = if planar {
                vec![&pat.replicate_id, "", ""]
            } else {
                vec![&pat.replicate_id, ""]
            };
            w.write_record(row).map_err(io)?;
        }
        for p in &pat.points {
            match p {
                Point::Line(t) => w.write_record([pat.replicate_id.clone(), f(*t)]),
                Point::Plane([x, y]) => w.write_record([pat.replicate_id.clone(), f(*x), f(*y)]),
            }
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Polygon, Rect};

    fn unit() -> ObservationDomain {
        ObservationDomain::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn three_rows_two_replicates() {
        let csv = "replicate_id,x\na,0.1\nb,0.5\na,0.7\n";
        let out = parse_events_csv(csv, &unit(), &ColumnMapping::default()).unwrap();
        let m: Vec<usize> = out.dataset.patterns().iter().map(|p| p.m()).collect();
        assert_eq!(m, vec![2, 1]);
        assert_eq!(out.dataset.patterns()[0].replicate_id, "a");
    }

    #[test]
    fn empty_replicates_and_drops() {
        let csv = "replicate_id,x\na,0.1\nb,\nc,1.5\n";
        let out = parse_events_csv(csv, &unit(), &ColumnMapping::default()).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(out.dataset.patterns()[1].m(), 0);
        // c was observed but saw nothing inside the domain.
        assert_eq!(out.dataset.patterns()[2].m(), 0);
        assert_eq!(out.dropped_outside_domain, 1);
    }

    #[test]
    fn polygon_filter() {
        let tri = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let d = ObservationDomain::planar(Rect::new(0.0, 1.0, 0.0, 1.0), Some(tri)).unwrap();
        let csv = "replicate_id,x,y\na,0.1,0.1\na,0.9,0.9\n";
        let out = parse_events_csv(csv, &d, &ColumnMapping::default()).unwrap();
        assert_eq!(out.dataset.total_events(), 1);
        assert_eq!(out.dropped_outside_domain, 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "replicate_id,x\na,0.1\nb,oops\n";
        match parse_events_csv(csv, &unit(), &ColumnMapping::default()) {
            Err(Error::Parse { line: Some(3), .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_events_csv("id,x\n", &unit(), &ColumnMapping::default()) {
            Err(Error::Parse { line: Some(1), .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_events_csv("replicate_id,x\n", &unit(), &ColumnMapping::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn daily_grouping_covers_range() {
        let cols = ColumnMapping {
            date: Some("Date".into()),
            x: "t".into(),
            date_start: Some("2014-01-01".into()),
            date_end: Some("2014-01-05".into()),
            ..Default::default()
        };
        let csv = "Date,t\n01/03/2014 11:30:00 PM,0.5\n01/01/2014 01:00:00 AM,0.2\n12/31/2013 10:00:00 PM,0.3\n01/03/2014 02:00:00 AM,0.9\n";
        let out = parse_events_csv(csv, &unit(), &cols).unwrap();
        let ids: Vec<&str> = out.dataset.patterns().iter().map(|p| p.replicate_id.as_str()).collect();
        assert_eq!(ids, ["2014-01-01", "2014-01-02", "2014-01-03", "2014-01-04", "2014-01-05"]);
        let m: Vec<usize> = out.dataset.patterns().iter().map(|p| p.m()).collect();
        assert_eq!(m, [1, 0, 2, 0, 0]);
        assert_eq!(out.dropped_outside_dates, 1);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = unit();
        let pats = vec![
            PointPattern::new("a", vec![Point::Line(0.1), Point::Line(1.0 / 3.0)]),
            PointPattern::new("b", vec![]),
        ];
        let data = Dataset::new(d.clone(), pats).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&data, &mut buf).unwrap();
        let back = parse_events_csv(std::str::from_utf8(&buf).unwrap(), &d, &ColumnMapping::default()).unwrap();
        assert_eq!(back.dataset, data);
    }

    #[test]
    fn json_events() {
        let d = ObservationDomain::rectangle(Rect::new(0.0, 2.0, 0.0, 1.0)).unwrap();
        let out = parse_events_json(r#"[{"id":"a","points":[[0.5,0.5],[3,0]]},{"id":"b"}]"#, &d).unwrap();
        assert_eq!(out.dataset.len(), 2);
        assert_eq!(out.dropped_outside_domain, 1);
        assert!(parse_events_json(r#"[{"id":"a","points":[0.5]}]"#, &d).is_err());
    }
}
