//! Activity-instance event logs: CSV parsing and writing, trace grouping and
//! the chronological train/test split.
//!
//! A log row is one activity instance with a start and an end timestamp.
//! Every column that is not one of the five mandatory columns is a data
//! attribute. An attribute column is numeric when every non-empty cell parses
//! as a decimal number, otherwise categorical. Empty cells mean "not observed".

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, FixedOffset, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use thiserror::Error;

use crate::value::{AttrKind, Value};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("attribute `{name}` has both numeric and categorical values")]
    MixedKinds { name: String },
    #[error("event {index} (case `{case_id}`): {message}")]
    InvalidEvent { index: usize, case_id: String, message: String },
    #[error("ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("cannot split an empty log")]
    EmptyLog,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One activity instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub case_id: String,
    pub activity: String,
    pub resource: Option<String>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub attributes: BTreeMap<String, Value>,
}

impl Event {
    pub fn new(
        case_id: impl Into<String>,
        activity: impl Into<String>,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    ) -> Self {
        Event {
            case_id: case_id.into(),
            activity: activity.into(),
            resource: None,
            start,
            end,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.attributes.insert(name.into(), value.into());
        self
    }

    pub fn with_resource(mut self, resource: impl Into<String>) -> Self {
        self.resource = Some(resource.into());
        self
    }
}

/// An immutable, validated collection of events plus the attribute schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    events: Vec<Event>,
    schema: BTreeMap<String, AttrKind>,
}

impl EventLog {
    /// Builds a log, inferring the schema from the attribute values.
    pub fn from_events(events: Vec<Event>) -> Result<Self, LogError> {
        let mut schema = BTreeMap::new();
        for event in &events {
            for (name, value) in &event.attributes {
                match schema.get(name) {
                    None => {
                        schema.insert(name.clone(), value.kind());
                    }
                    Some(kind) if *kind != value.kind() => return Err(LogError::MixedKinds { name: name.clone() }),
                    Some(_) => {}
                }
            }
        }
        Self::with_schema(events, schema)
    }

    /// Builds a log against an explicit schema. The schema may declare
    /// attributes that no event carries.
    pub fn with_schema(events: Vec<Event>, schema: BTreeMap<String, AttrKind>) -> Result<Self, LogError> {
        for (index, event) in events.iter().enumerate() {
            let invalid = |message: String| LogError::InvalidEvent { index, case_id: event.case_id.clone(), message };
            if event.activity.is_empty() {
                return Err(invalid("empty activity label".into()));
            }
            if event.start > event.end {
                return Err(invalid(format!("start {} is after end {}", event.start, event.end)));
            }
            for (name, value) in &event.attributes {
                match schema.get(name) {
                    None => return Err(invalid(format!("attribute `{name}` not in schema"))),
                    Some(kind) if *kind != value.kind() => return Err(LogError::MixedKinds { name: name.clone() }),
                    Some(_) => {}
                }
            }
        }
        Ok(EventLog { events, schema })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn schema(&self) -> &BTreeMap<String, AttrKind> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Groups events into traces (see [`traces`]).
    pub fn traces(&self) -> Vec<Trace<'_>> {
        traces(self)
    }
}

/// The events of one case, ordered by start time, then end time, then activity label.
#[derive(Debug, Clone)]
pub struct Trace<'a> {
    pub case_id: &'a str,
    pub events: Vec<&'a Event>,
}

impl Trace<'_> {
    pub fn first_start(&self) -> DateTime<Utc> {
        self.events[0].start
    }

    pub fn activities(&self) -> impl Iterator<Item = &str> + '_ {
        self.events.iter().map(|e| e.activity.as_str())
    }
}

/// One trace per distinct case id. Traces are ordered by their first start
/// time, ties by case id.
pub fn traces(log: &EventLog) -> Vec<Trace<'_>> {
    let mut by_case: HashMap<&str, Vec<&Event>> = HashMap::new();
    for event in &log.events {
        by_case.entry(event.case_id.as_str()).or_default().push(event);
    }
    let mut out: Vec<Trace<'_>> = by_case
        .into_iter()
        .map(|(case_id, mut events)| {
            events.sort_by(|a, b| {
                a.start.cmp(&b.start).then(a.end.cmp(&b.end)).then_with(|| a.activity.cmp(&b.activity))
            });
            Trace { case_id, events }
        })
        .collect();
    out.sort_by(|a, b| a.first_start().cmp(&b.first_start()).then_with(|| a.case_id.cmp(b.case_id)));
    out
}

/// Splits whole traces chronologically: the first `ceil(ratio * N)` traces by
/// first start time go to the training log, the rest to the test log.
pub fn split_temporal(log: &EventLog, ratio: f64) -> Result<(EventLog, EventLog), LogError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(LogError::InvalidRatio(ratio));
    }
    if log.is_empty() {
        return Err(LogError::EmptyLog);
    }
    let traces = traces(log);
    // The epsilon keeps products such as 0.3 * 10 = 3.0000000000000004 from
    // rounding up to an extra trace.
    let n_train = ((ratio * traces.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let train_cases: std::collections::HashSet<&str> = traces[..n_train].iter().map(|t| t.case_id).collect();
    let (train, test): (Vec<Event>, Vec<Event>) =
        log.events.iter().cloned().partition(|e| train_cases.contains(e.case_id.as_str()));
    Ok((EventLog { events: train, schema: log.schema.clone() }, EventLog { events: test, schema: log.schema.clone() }))
}

/// Column names and parsing options for the CSV format.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub case_column: String,
    pub activity_column: String,
    pub resource_column: String,
    pub start_column: String,
    pub end_column: String,
    /// Zone applied to timestamps without an offset. `None` rejects them.
    pub default_offset: Option<FixedOffset>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            case_column: "case_id".into(),
            activity_column: "activity".into(),
            resource_column: "resource".into(),
            start_column: "start_time".into(),
            end_column: "end_time".into(),
            default_offset: None,
        }
    }
}

fn looks_numeric(cell: &str) -> Option<f64> {
    let ok_chars = cell.chars().all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'));
    if !ok_chars {
        return None;
    }
    cell.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Parses an ISO-8601 timestamp and truncates it to millisecond precision.
pub fn parse_timestamp(text: &str, default_offset: Option<FixedOffset>) -> Result<DateTime<Utc>, String> {
    let text = text.trim();
    let parsed = DateTime::parse_from_rfc3339(text)
        .or_else(|_| DateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%.f%:z"))
        .or_else(|_| DateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f%z"))
        .or_else(|_| DateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%.f%z"));
    let utc = match parsed {
        Ok(dt) => dt.with_timezone(&Utc),
        Err(_) => {
            let naive = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f")
                .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S%.f"))
                .map_err(|_| format!("unparsable timestamp `{text}`"))?;
            let offset =
                default_offset.ok_or_else(|| format!("timestamp `{text}` has no zone and no default zone is set"))?;
            offset
                .from_local_datetime(&naive)
                .single()
                .ok_or_else(|| format!("ambiguous local timestamp `{text}`"))?
                .with_timezone(&Utc)
        }
    };
    DateTime::from_timestamp_millis(utc.timestamp_millis()).ok_or_else(|| format!("timestamp `{text}` out of range"))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Parses a delimiter-separated activity-instance log.
pub fn parse_log<R: Read>(source: R, options: &CsvOptions) -> Result<EventLog, LogError> {
    let mut reader = csv::ReaderBuilder::new().delimiter(options.delimiter).has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| LogError::MissingColumn(name.to_string()))
    };
    let case_idx = find(&options.case_column)?;
    let activity_idx = find(&options.activity_column)?;
    let start_idx = find(&options.start_column)?;
    let end_idx = find(&options.end_column)?;
    let resource_idx = headers.iter().position(|h| h.trim() == options.resource_column);
    let fixed = [Some(case_idx), Some(activity_idx), Some(start_idx), Some(end_idx), resource_idx];
    let attr_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !fixed.contains(&Some(*i)))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    // Raw cells first; kinds are only known once every row has been seen.
    let mut rows: Vec<(Event, Vec<Option<String>>)> = Vec::new();
    let mut numeric = vec![true; attr_columns.len()];
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| LogError::Row { line, message };
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let case_id = cell(case_idx);
        let activity = cell(activity_idx);
        if case_id.is_empty() {
            return Err(row_err("empty case id".into()));
        }
        if activity.is_empty() {
            return Err(row_err("empty activity".into()));
        }
        let start = parse_timestamp(cell(start_idx), options.default_offset).map_err(row_err)?;
        let end = parse_timestamp(cell(end_idx), options.default_offset).map_err(row_err)?;
        if start > end {
            return Err(row_err(format!("start {} is after end {}", format_timestamp(&start), format_timestamp(&end))));
        }
        let mut event = Event::new(case_id, activity, start, end);
        event.resource = resource_idx.map(cell).filter(|r| !r.is_empty()).map(str::to_string);
        let cells: Vec<Option<String>> = attr_columns
            .iter()
            .enumerate()
            .map(|(k, (i, _))| {
                let raw = cell(*i);
                if raw.is_empty() {
                    None
                } else {
                    if looks_numeric(raw).is_none() {
                        numeric[k] = false;
                    }
                    Some(raw.to_string())
                }
            })
            .collect();
        rows.push((event, cells));
    }

    let schema: BTreeMap<String, AttrKind> = attr_columns
        .iter()
        .zip(&numeric)
        .map(|((_, name), &is_num)| {
            let kind = if is_num { AttrKind::Numeric } else { AttrKind::Categorical };
            (name.clone(), kind)
        })
        .collect();
    let events = rows
        .into_iter()
        .map(|(mut event, cells)| {
            for ((_, name), (cell, &is_num)) in attr_columns.iter().zip(cells.into_iter().zip(&numeric)) {
                if let Some(raw) = cell {
                    let value = if is_num {
                        Value::Num(looks_numeric(&raw).expect("checked numeric"))
                    } else {
                        Value::Cat(raw)
                    };
                    event.attributes.insert(name.clone(), value);
                }
            }
            event
        })
        .collect();
    Ok(EventLog { events, schema })
}

/// Writes a log in the CSV format read by [`parse_log`]. Attribute columns
/// follow the five mandatory columns in schema order.
pub fn write_log<W: Write>(log: &EventLog, sink: W, options: &CsvOptions) -> Result<(), LogError> {
    let mut writer = csv::WriterBuilder::new().delimiter(options.delimiter).from_writer(sink);
    let mut header = vec![
        options.case_column.as_str(),
        options.activity_column.as_str(),
        options.resource_column.as_str(),
        options.start_column.as_str(),
        options.end_column.as_str(),
    ];
    header.extend(log.schema.keys().map(String::as_str));
    writer.write_record(&header)?;
    for event in &log.events {
        let mut record = vec![
            event.case_id.clone(),
            event.activity.clone(),
            event.resource.clone().unwrap_or_default(),
            format_timestamp(&event.start),
            format_timestamp(&event.end),
        ];
        record
            .extend(log.schema.keys().map(|name| event.attributes.get(name).map(Value::to_string).unwrap_or_default()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn log_to_csv_string(log: &EventLog) -> String {
    let mut buf = Vec::new();
    write_log(log, &mut buf, &CsvOptions::default()).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}
