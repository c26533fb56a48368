//! ISO 8601 temporal values, strict parsing, exact-match semantics and
//! rule-based resolution of relative expressions against an anchor.
//!
//! All values are naive local timestamps. The canonical serialization is
//! reduced-precision ISO 8601 at the value's granularity:
//!
//! | granularity | form               |
//! |-------------|--------------------|
//! | year        | `YYYY`             |
//! | month       | `YYYY-MM`          |
//! | day         | `YYYY-MM-DD`       |
//! | hour        | `YYYY-MM-DDTHH`    |
//! | minute      | `YYYY-MM-DDTHH:MM` |
//!
//! Intervals join two values of the same granularity with `/`.

use std::fmt;

use chrono::{Datelike, Days, Months, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemporalError {
    #[error("bad ISO 8601 value at position {position}: {reason}")]
    BadIso { position: usize, reason: String },
    #[error("unresolvable relative expression: {0:?}")]
    Unresolvable(String),
}

/// Narrowest calendar field a value specifies. Ordered coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Year,
    Month,
    Day,
    Hour,
    Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    Instant,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalValue {
    pub kind: TemporalKind,
    pub start: NaiveDateTime,
    pub end: Option<NaiveDateTime>,
    pub granularity: Granularity,
    pub original_expression: String,
    pub relative: bool,
}

impl TemporalValue {
    pub fn instant(start: NaiveDateTime, granularity: Granularity) -> Self {
        Self {
            kind: TemporalKind::Instant,
            start: truncate(start, granularity),
            end: None,
            granularity,
            original_expression: String::new(),
            relative: false,
        }
    }

    pub fn day(date: NaiveDate) -> Self {
        Self::instant(date.and_time(NaiveTime::MIN), Granularity::Day)
    }

    /// Interval between two points at one granularity. Returns `None` when
    /// `end` precedes `start`.
    pub fn interval(start: NaiveDateTime, end: NaiveDateTime, granularity: Granularity) -> Option<Self> {
        let (start, end) = (truncate(start, granularity), truncate(end, granularity));
        (start <= end).then(|| Self {
            kind: TemporalKind::Interval,
            start,
            end: Some(end),
            granularity,
            original_expression: String::new(),
            relative: false,
        })
    }

    pub fn with_expression(mut self, expression: impl Into<String>) -> Self {
        self.original_expression = expression.into();
        self
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start.date()
    }

    /// Whole days between start and end; 0 for instants.
    pub fn duration_days(&self) -> i64 {
        self.end
            .map(|end| (end.date() - self.start.date()).num_days())
            .unwrap_or(0)
    }

    pub fn to_iso(&self) -> String {
        let mut out = format_point(self.start, self.granularity);
        if let Some(end) = self.end {
            out.push('/');
            out.push_str(&format_point(end, self.granularity));
        }
        out
    }
}

impl fmt::Display for TemporalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

#[derive(Serialize, Deserialize)]
struct TemporalRepr {
    iso: String,
    #[serde(default)]
    original: String,
    #[serde(default)]
    relative: bool,
}

impl Serialize for TemporalValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TemporalRepr {
            iso: self.to_iso(),
            original: self.original_expression.clone(),
            relative: self.relative,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TemporalValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TemporalRepr::deserialize(deserializer)?;
        let mut value = parse_iso(&repr.iso).map_err(serde::de::Error::custom)?;
        value.original_expression = repr.original;
        value.relative = repr.relative;
        Ok(value)
    }
}

fn truncate(ts: NaiveDateTime, granularity: Granularity) -> NaiveDateTime {
    let date = ts.date();
    let date = match granularity {
        Granularity::Year => NaiveDate::from_ymd_opt(date.year(), 1, 1).unwrap_or(date),
        Granularity::Month => date.with_day(1).unwrap_or(date),
        _ => date,
    };
    let time = match granularity {
        Granularity::Hour => NaiveTime::from_hms_opt(ts.hour(), 0, 0).unwrap_or(NaiveTime::MIN),
        Granularity::Minute => NaiveTime::from_hms_opt(ts.hour(), ts.minute(), 0).unwrap_or(NaiveTime::MIN),
        _ => NaiveTime::MIN,
    };
    date.and_time(time)
}

fn format_point(ts: NaiveDateTime, granularity: Granularity) -> String {
    let pattern = match granularity {
        Granularity::Year => "%Y",
        Granularity::Month => "%Y-%m",
        Granularity::Day => "%Y-%m-%d",
        Granularity::Hour => "%Y-%m-%dT%H",
        Granularity::Minute => "%Y-%m-%dT%H:%M",
    };
    ts.format(pattern).to_string()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> TemporalError {
        TemporalError::BadIso {
            position: self.offset + self.pos,
            reason: reason.into(),
        }
    }

    fn digits(&mut self, n: usize, what: &str) -> Result<u32, TemporalError> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .filter(|s| s.iter().all(u8::is_ascii_digit))
            .ok_or_else(|| self.fail(format!("expected {n}-digit {what}")))?;
        let value = slice.iter().fold(0u32, |acc, b| acc * 10 + u32::from(b - b'0'));
        self.pos += n;
        Ok(value)
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.bytes.get(self.pos) == Some(&byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse_point(text: &str, offset: usize) -> Result<(NaiveDateTime, Granularity), TemporalError> {
    let mut cur = Cursor {
        bytes: text.as_bytes(),
        pos: 0,
        offset,
    };
    let year = cur.digits(4, "year")? as i32;
    if cur.done() {
        let date = NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(|| cur.fail("year out of range"))?;
        return Ok((date.and_time(NaiveTime::MIN), Granularity::Year));
    }
    if !cur.eat(b'-') {
        return Err(cur.fail("expected '-' after year"));
    }
    let month_pos = cur.pos;
    let month = cur.digits(2, "month")?;
    if !(1..=12).contains(&month) {
        cur.pos = month_pos;
        return Err(cur.fail(format!("month {month} out of range")));
    }
    if cur.done() {
        let date = NaiveDate::from_ymd_opt(year, month, 1).ok_or_else(|| cur.fail("invalid month"))?;
        return Ok((date.and_time(NaiveTime::MIN), Granularity::Month));
    }
    if !cur.eat(b'-') {
        return Err(cur.fail("expected '-' after month"));
    }
    let day_pos = cur.pos;
    let day = cur.digits(2, "day")?;
    let date = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| {
        cur.pos = day_pos;
        cur.fail(format!("day {day} invalid for {year:04}-{month:02}"))
    })?;
    if cur.done() {
        return Ok((date.and_time(NaiveTime::MIN), Granularity::Day));
    }
    if !cur.eat(b'T') {
        return Err(cur.fail("expected 'T' before time"));
    }
    let hour_pos = cur.pos;
    let hour = cur.digits(2, "hour")?;
    if hour > 23 {
        cur.pos = hour_pos;
        return Err(cur.fail(format!("hour {hour} out of range")));
    }
    if cur.done() {
        let time = NaiveTime::from_hms_opt(hour, 0, 0).ok_or_else(|| cur.fail("invalid hour"))?;
        return Ok((date.and_time(time), Granularity::Hour));
    }
    if !cur.eat(b':') {
        return Err(cur.fail("expected ':' after hour"));
    }
    let minute_pos = cur.pos;
    let minute = cur.digits(2, "minute")?;
    if minute > 59 {
        cur.pos = minute_pos;
        return Err(cur.fail(format!("minute {minute} out of range")));
    }
    // Seconds are tolerated only when zero; sub-minute precision is not modelled.
    if cur.eat(b':') {
        let second_pos = cur.pos;
        let second = cur.digits(2, "second")?;
        if second != 0 {
            cur.pos = second_pos;
            return Err(cur.fail("sub-minute precision is not supported"));
        }
    }
    if !cur.done() {
        return Err(cur.fail("trailing characters"));
    }
    let time = NaiveTime::from_hms_opt(hour, minute, 0).ok_or_else(|| cur.fail("invalid time"))?;
    Ok((date.and_time(time), Granularity::Minute))
}

/// Parses a canonical ISO 8601 instant or `start/end` interval.
pub fn parse_iso(text: &str) -> Result<TemporalValue, TemporalError> {
    match text.split_once('/') {
        None => {
            let (start, granularity) = parse_point(text, 0)?;
            Ok(TemporalValue::instant(start, granularity))
        }
        Some((a, b)) => {
            let (start, g_start) = parse_point(a, 0)?;
            let (end, g_end) = parse_point(b, a.len() + 1)?;
            if g_start != g_end {
                return Err(TemporalError::BadIso {
                    position: a.len(),
                    reason: "interval endpoints differ in granularity".into(),
                });
            }
            TemporalValue::interval(start, end, g_start).ok_or(TemporalError::BadIso {
                position: a.len(),
                reason: "interval end precedes start".into(),
            })
        }
    }
}

/// Exact match on canonical serialization: kind, granularity and every
/// populated field must agree.
pub fn temporal_exact_match(a: &TemporalValue, b: &TemporalValue) -> bool {
    a.kind == b.kind && a.granularity == b.granularity && a.to_iso() == b.to_iso()
}

/// Which anchor a relative expression refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorRole {
    /// Relative to the time of writing ("today", "next week").
    Deictic,
    /// Relative to the most recently mentioned time ("the next day").
    Anaphoric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Day,
    Week,
    Month,
    Year,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    DayOffset(i64),
    Shift { amount: u32, unit: Unit, forward: bool },
    Weekday { day: Weekday, forward: bool },
    Period { unit: Unit, offset: i32 },
}

impl Pattern {
    fn role(self) -> AnchorRole {
        match self {
            Pattern::DayOffset(_) | Pattern::Weekday { .. } | Pattern::Period { .. } => AnchorRole::Deictic,
            Pattern::Shift { .. } => AnchorRole::Anaphoric,
        }
    }
}

fn normalize_expression(expression: &str) -> String {
    let lowered = expression.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let words = match words.first() {
        Some(&"the") => &words[1..],
        _ => &words[..],
    };
    words.join(" ")
}

fn number_word(word: &str) -> Option<u32> {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    ];
    match word {
        "a" | "an" => Some(1),
        _ => word
            .parse::<u32>()
            .ok()
            .or_else(|| WORDS.iter().position(|w| *w == word).map(|i| i as u32)),
    }
}

fn unit_word(word: &str) -> Option<Unit> {
    match word.trim_end_matches('s') {
        "day" => Some(Unit::Day),
        "week" => Some(Unit::Week),
        "month" => Some(Unit::Month),
        "year" => Some(Unit::Year),
        _ => None,
    }
}

fn weekday_word(word: &str) -> Option<Weekday> {
    match word {
        "monday" => Some(Weekday::Mon),
        "tuesday" => Some(Weekday::Tue),
        "wednesday" => Some(Weekday::Wed),
        "thursday" => Some(Weekday::Thu),
        "friday" => Some(Weekday::Fri),
        "saturday" => Some(Weekday::Sat),
        "sunday" => Some(Weekday::Sun),
        _ => None,
    }
}

fn match_pattern(normalized: &str) -> Option<Pattern> {
    let words: Vec<&str> = normalized.split(' ').collect();
    match words.as_slice() {
        ["today"] => Some(Pattern::DayOffset(0)),
        ["tomorrow"] => Some(Pattern::DayOffset(1)),
        ["yesterday"] => Some(Pattern::DayOffset(-1)),
        ["next", "day"] | ["following", "day"] | ["day", "after"] => Some(Pattern::Shift {
            amount: 1,
            unit: Unit::Day,
            forward: true,
        }),
        ["previous", "day"] | ["day", "before"] => Some(Pattern::Shift {
            amount: 1,
            unit: Unit::Day,
            forward: false,
        }),
        [n, unit, dir] => {
            if let (Some(amount), Some(unit)) = (number_word(n), unit_word(unit)) {
                let forward = match *dir {
                    "later" | "after" => true,
                    "earlier" | "before" | "ago" => false,
                    _ => return None,
                };
                return Some(Pattern::Shift { amount, unit, forward });
            }
            None
        }
        [which, target] => {
            let offset = match *which {
                "next" => 1,
                "last" => -1,
                "this" => 0,
                _ => return None,
            };
            if let Some(day) = weekday_word(target) {
                return (offset != 0).then_some(Pattern::Weekday {
                    day,
                    forward: offset > 0,
                });
            }
            match unit_word(target) {
                Some(unit) if unit != Unit::Day && !target.ends_with('s') => Some(Pattern::Period { unit, offset }),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Classifies an expression without resolving it. `None` means the
/// expression is outside the supported inventory.
pub fn relative_role(expression: &str) -> Option<AnchorRole> {
    match_pattern(&normalize_expression(expression)).map(Pattern::role)
}

fn unresolvable(expression: &str) -> TemporalError {
    TemporalError::Unresolvable(expression.to_string())
}

fn shift_months(date: NaiveDate, months: u32, forward: bool) -> Option<NaiveDate> {
    if forward {
        date.checked_add_months(Months::new(months))
    } else {
        date.checked_sub_months(Months::new(months))
    }
}

/// Resolves a relative expression against an absolute anchor.
///
/// Supported inventory (case-insensitive, leading article optional):
/// `today`, `tomorrow`, `yesterday`, `the next day`, `the previous day`,
/// `N days|weeks|months|years later|earlier`, `next|last <weekday>`,
/// `this|next|last week|month|year`. Month and year arithmetic clamps the
/// day to the target month's length.
pub fn resolve_relative(expression: &str, anchor: &TemporalValue) -> Result<TemporalValue, TemporalError> {
    let pattern = match_pattern(&normalize_expression(expression)).ok_or_else(|| unresolvable(expression))?;
    let base = anchor.start.date();
    let coarse = anchor.granularity;
    let need = |g: Granularity| {
        if coarse >= g {
            Ok(())
        } else {
            Err(unresolvable(expression))
        }
    };

    let value = match pattern {
        Pattern::DayOffset(delta) => {
            need(Granularity::Day)?;
            TemporalValue::day(add_days(base, delta).ok_or_else(|| unresolvable(expression))?)
        }
        Pattern::Shift { amount, unit, forward } => {
            let sign = if forward { 1 } else { -1 };
            match unit {
                Unit::Day | Unit::Week => {
                    need(Granularity::Day)?;
                    let days = i64::from(amount) * if unit == Unit::Week { 7 } else { 1 };
                    TemporalValue::day(add_days(base, sign * days).ok_or_else(|| unresolvable(expression))?)
                }
                Unit::Month | Unit::Year => {
                    need(if unit == Unit::Month {
                        Granularity::Month
                    } else {
                        Granularity::Year
                    })?;
                    let months = if unit == Unit::Year { amount * 12 } else { amount };
                    let date = shift_months(base, months, forward).ok_or_else(|| unresolvable(expression))?;
                    let granularity = coarse.min(Granularity::Day);
                    TemporalValue::instant(date.and_time(NaiveTime::MIN), granularity)
                }
            }
        }
        Pattern::Weekday { day, forward } => {
            need(Granularity::Day)?;
            let mut date = base;
            loop {
                date = add_days(date, if forward { 1 } else { -1 }).ok_or_else(|| unresolvable(expression))?;
                if date.weekday() == day {
                    break;
                }
            }
            TemporalValue::day(date)
        }
        Pattern::Period { unit, offset } => match unit {
            Unit::Week => {
                need(Granularity::Day)?;
                let monday = add_days(base, -i64::from(base.weekday().num_days_from_monday()))
                    .and_then(|m| add_days(m, 7 * i64::from(offset)))
                    .ok_or_else(|| unresolvable(expression))?;
                let sunday = add_days(monday, 6).ok_or_else(|| unresolvable(expression))?;
                TemporalValue::interval(
                    monday.and_time(NaiveTime::MIN),
                    sunday.and_time(NaiveTime::MIN),
                    Granularity::Day,
                )
                .ok_or_else(|| unresolvable(expression))?
            }
            Unit::Month => {
                need(Granularity::Month)?;
                let first = base.with_day(1).ok_or_else(|| unresolvable(expression))?;
                let date =
                    shift_months(first, offset.unsigned_abs(), offset >= 0).ok_or_else(|| unresolvable(expression))?;
                TemporalValue::instant(date.and_time(NaiveTime::MIN), Granularity::Month)
            }
            Unit::Year | Unit::Day => {
                let date =
                    NaiveDate::from_ymd_opt(base.year() + offset, 1, 1).ok_or_else(|| unresolvable(expression))?;
                TemporalValue::instant(date.and_time(NaiveTime::MIN), Granularity::Year)
            }
        },
    };
    Ok(TemporalValue {
        original_expression: expression.to_string(),
        relative: true,
        ..value
    })
}

fn add_days(date: NaiveDate, delta: i64) -> Option<NaiveDate> {
    if delta >= 0 {
        date.checked_add_days(Days::new(delta as u64))
    } else {
        date.checked_sub_days(Days::new(delta.unsigned_abs()))
    }
}
