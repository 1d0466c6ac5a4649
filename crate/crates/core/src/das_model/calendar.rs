//! Weekly availability calendars over a millisecond UTC timeline.

use serde::{Deserialize, Serialize};

pub const SECOND_MS: i64 = 1_000;
pub const DAY_MS: i64 = 86_400_000;
pub const WEEK_MS: i64 = 7 * DAY_MS;
/// 1970-01-01 was a Thursday; the first Monday 00:00 UTC is four days later.
const MONDAY_OFFSET_MS: i64 = 4 * DAY_MS;

const DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];

/// One open interval on a weekday, `start` inclusive and `end` exclusive,
/// written as `HH:MM` or `HH:MM:SS`. `end` may be `24:00`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeeklyInterval {
    pub day: String,
    pub start: String,
    pub end: String,
}

impl WeeklyInterval {
    pub fn new(day: &str, start: &str, end: &str) -> Self {
        WeeklyInterval { day: day.into(), start: start.into(), end: end.into() }
    }
}

fn parse_clock(text: &str) -> Result<i64, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.parse::<i64>().map_err(|_| format!("bad time of day `{text}`"));
    let (h, m, s) = match parts.as_slice() {
        [h, m] => (num(h)?, num(m)?, 0),
        [h, m, s] => (num(h)?, num(m)?, num(s)?),
        _ => return Err(format!("bad time of day `{text}`")),
    };
    if !(0..60).contains(&m) || !(0..60).contains(&s) || h < 0 || h * 3600 + m * 60 + s > 86_400 {
        return Err(format!("time of day `{text}` out of range"));
    }
    Ok((h * 3600 + m * 60 + s) * SECOND_MS)
}

/// A weekly recurring set of open intervals. Stored as merged, sorted
/// `[from, to)` offsets from Monday 00:00 UTC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeeklyInterval>", into = "Vec<WeeklyInterval>")]
pub struct Calendar {
    raw: Vec<WeeklyInterval>,
    open: Vec<(i64, i64)>,
    open_per_week: i64,
}

impl TryFrom<Vec<WeeklyInterval>> for Calendar {
    type Error = String;

    fn try_from(raw: Vec<WeeklyInterval>) -> Result<Self, String> {
        let mut spans = Vec::new();
        for iv in &raw {
            let day = DAYS
                .iter()
                .position(|d| d.eq_ignore_ascii_case(&iv.day))
                .ok_or_else(|| format!("unknown weekday `{}`", iv.day))? as i64;
            let (s, e) = (parse_clock(&iv.start)?, parse_clock(&iv.end)?);
            if s >= e {
                return Err(format!("interval {} {}-{} is empty or reversed", iv.day, iv.start, iv.end));
            }
            spans.push((day * DAY_MS + s, day * DAY_MS + e));
        }
        if spans.is_empty() {
            return Err("calendar has no open intervals".into());
        }
        spans.sort_unstable();
        let mut open: Vec<(i64, i64)> = Vec::new();
        for (s, e) in spans {
            match open.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => open.push((s, e)),
            }
        }
        let open_per_week = open.iter().map(|(s, e)| e - s).sum();
        Ok(Calendar { raw, open, open_per_week })
    }
}

impl From<Calendar> for Vec<WeeklyInterval> {
    fn from(c: Calendar) -> Self {
        c.raw
    }
}

impl Calendar {
    pub fn new(intervals: Vec<WeeklyInterval>) -> Result<Self, String> {
        Calendar::try_from(intervals)
    }

    /// Open around the clock.
    pub fn always() -> Self {
        Self::daily("00:00", "24:00")
    }

    /// The same interval on all seven days.
    pub fn daily(start: &str, end: &str) -> Self {
        Self::new(DAYS.iter().map(|d| WeeklyInterval::new(d, start, end)).collect()).expect("valid daily calendar")
    }

    /// Monday-to-Friday working hours.
    pub fn weekdays(start: &str, end: &str) -> Self {
        Self::new(DAYS[..5].iter().map(|d| WeeklyInterval::new(d, start, end)).collect())
            .expect("valid weekday calendar")
    }

    pub fn is_always_open(&self) -> bool {
        self.open_per_week == WEEK_MS
    }

    fn split(t: i64) -> (i64, i64) {
        let rel = t - MONDAY_OFFSET_MS;
        (rel.div_euclid(WEEK_MS), rel.rem_euclid(WEEK_MS))
    }

    fn join(week: i64, pos: i64) -> i64 {
        week * WEEK_MS + pos + MONDAY_OFFSET_MS
    }

    /// The open interval containing `t`, or the next one after it, in absolute time.
    fn current_or_next(&self, t: i64) -> (i64, i64) {
        let (week, pos) = Self::split(t);
        for &(s, e) in &self.open {
            if pos < e {
                return (Self::join(week, s.max(pos)), Self::join(week, e));
            }
        }
        let (s, e) = self.open[0];
        (Self::join(week + 1, s), Self::join(week + 1, e))
    }

    pub fn is_open(&self, t: i64) -> bool {
        let (_, pos) = Self::split(t);
        self.open.iter().any(|&(s, e)| s <= pos && pos < e)
    }

    /// Earliest open instant at or after `t`.
    pub fn next_open(&self, t: i64) -> i64 {
        if self.is_always_open() {
            return t;
        }
        self.current_or_next(t).0
    }

    /// End instant of `work_ms` of processing begun at `start`; processing
    /// pauses while the calendar is closed.
    pub fn advance(&self, start: i64, work_ms: i64) -> i64 {
        let work_ms = work_ms.max(0);
        if self.is_always_open() {
            return start + work_ms;
        }
        let mut t = self.next_open(start);
        let mut remaining = work_ms;
        if remaining > self.open_per_week {
            let weeks = (remaining - 1) / self.open_per_week;
            t += weeks * WEEK_MS;
            remaining -= weeks * self.open_per_week;
        }
        loop {
            let (s, e) = self.current_or_next(t);
            if remaining <= e - s {
                return s + remaining;
            }
            remaining -= e - s;
            t = e;
        }
    }

    /// Open time contained in `[from, to)`.
    pub fn open_time_between(&self, from: i64, to: i64) -> i64 {
        if to <= from {
            return 0;
        }
        if self.is_always_open() {
            return to - from;
        }
        let mut total = 0;
        let mut t = from;
        while t < to {
            let (s, e) = self.current_or_next(t);
            if s >= to {
                break;
            }
            total += e.min(to) - s;
            t = e;
        }
        total
    }
}
