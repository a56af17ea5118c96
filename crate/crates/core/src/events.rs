//! Parking events: ingestion, synthetic generation, status timelines and the
//! day-of-year dataset split.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadnet::ParkingSpot;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Allowed-duration menu used by the synthetic generator, seconds.
pub const DEFAULT_DURATION_MENU: [f64; 3] = [1800.0, 3600.0, 7200.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParkingEvent {
    pub spot: usize,
    pub arrival: f64,
    pub departure: f64,
    pub max_duration: f64,
}

impl ParkingEvent {
    pub fn violation_onset(&self) -> f64 {
        self.arrival + self.max_duration
    }

    pub fn violates(&self) -> bool {
        self.departure > self.violation_onset()
    }
}

/// One day of events, sorted by arrival then spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub day: NaiveDate,
    events: Vec<ParkingEvent>,
}

pub type EventLogs = BTreeMap<NaiveDate, EventLog>;

impl EventLog {
    /// Sorts and checks per-spot non-overlap. Overlap errors report event
    /// positions (1-based) in the sorted log.
    pub fn new(day: NaiveDate, mut events: Vec<ParkingEvent>) -> Result<Self> {
        sort_events(&mut events);
        let mut last: HashMap<usize, (usize, f64)> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if !(e.arrival < e.departure) || !(e.max_duration > 0.0) {
                return Err(Error::Config(format!("invalid event {e:?}")));
            }
            if let Some(&(j, dep)) = last.get(&e.spot) {
                if e.arrival < dep {
                    return Err(Error::OverlappingEvents {
                        spot: e.spot,
                        day: day.to_string(),
                        first: j + 1,
                        second: i + 1,
                    });
                }
            }
            last.insert(e.spot, (i, e.departure));
        }
        Ok(EventLog { day, events })
    }

    pub fn events(&self) -> &[ParkingEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Violation events whose violation interval touches `[start, end]`.
    pub fn violations_within(&self, start: f64, end: f64) -> usize {
        self.events
            .iter()
            .filter(|e| e.violates() && e.violation_onset() <= end && e.departure > start)
            .count()
    }
}

fn sort_events(events: &mut [ParkingEvent]) {
    events.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.spot.cmp(&b.spot)));
}

/// Accepts plain seconds (`28800`, `28800.5`) or clock time (`08:00`, `08:00:30`).
pub fn parse_time_of_day(s: &str) -> Option<f64> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return None;
        }
        let mut total = 0.0;
        for (i, p) in parts.iter().enumerate() {
            let v: f64 = p.trim().parse().ok()?;
            if v < 0.0 {
                return None;
            }
            total += v * [3600.0, 60.0, 1.0][i];
        }
        Some(total)
    } else {
        s.trim().parse().ok().filter(|v: &f64| v.is_finite())
    }
}

/// Load `date,spot_id,arrival_s,departure_s,max_duration_s` rows into
/// per-day logs. Departures past midnight are clipped to the day end.
pub fn load_events(path: &Path, spots: &[ParkingSpot]) -> Result<EventLogs> {
    let text = fs::read_to_string(path)?;
    parse_events(path, &text, spots.len())
}

pub fn parse_events(path: &Path, text: &str, n_spots: usize) -> Result<EventLogs> {
    let mut header_seen = false;
    let mut rows: BTreeMap<NaiveDate, Vec<(usize, ParkingEvent)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim().trim_start_matches('\u{feff}');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            if f != ["date", "spot_id", "arrival_s", "departure_s", "max_duration_s"] {
                return Err(Error::parse(path, line_no, format!("unexpected header `{line}`")));
            }
            header_seen = true;
            continue;
        }
        if f.len() != 5 {
            return Err(Error::parse(path, line_no, "expected 5 fields"));
        }
        let day = NaiveDate::parse_from_str(f[0], "%Y-%m-%d")
            .map_err(|_| Error::parse(path, line_no, format!("invalid date `{}`", f[0])))?;
        let spot: i64 = f[1]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid spot id `{}`", f[1])))?;
        if spot < 0 || spot as usize >= n_spots {
            return Err(Error::UnknownSpot { spot, line: line_no });
        }
        let time = |s: &str, what: &str| {
            parse_time_of_day(s)
                .filter(|t| *t >= 0.0)
                .ok_or_else(|| Error::parse(path, line_no, format!("malformed {what} `{s}`")))
        };
        let arrival = time(f[2], "arrival")?;
        let departure = time(f[3], "departure")?.min(SECONDS_PER_DAY);
        let max_duration = time(f[4], "max duration")?;
        if arrival >= SECONDS_PER_DAY {
            return Err(Error::parse(path, line_no, "arrival outside the day"));
        }
        if !(arrival < departure) {
            return Err(Error::parse(path, line_no, "departure must follow arrival"));
        }
        if !(max_duration > 0.0) {
            return Err(Error::parse(path, line_no, "max duration must be positive"));
        }
        rows.entry(day).or_default().push((
            line_no,
            ParkingEvent {
                spot: spot as usize,
                arrival,
                departure,
                max_duration,
            },
        ));
    }
    if !header_seen {
        return Err(Error::parse(path, 1, "missing header"));
    }
    let mut logs = BTreeMap::new();
    for (day, mut list) in rows {
        list.sort_by(|a, b| {
            a.1.arrival
                .total_cmp(&b.1.arrival)
                .then(a.1.spot.cmp(&b.1.spot))
                .then(a.0.cmp(&b.0))
        });
        let mut last: HashMap<usize, (usize, f64)> = HashMap::new();
        for (line_no, e) in &list {
            if let Some(&(prev_line, dep)) = last.get(&e.spot) {
                if e.arrival < dep {
                    return Err(Error::OverlappingEvents {
                        spot: e.spot,
                        day: day.to_string(),
                        first: prev_line.min(*line_no),
                        second: prev_line.max(*line_no),
                    });
                }
            }
            last.insert(e.spot, (*line_no, e.departure));
        }
        let events = list.into_iter().map(|(_, e)| e).collect();
        logs.insert(day, EventLog { day, events });
    }
    Ok(logs)
}

pub fn events_to_string(logs: &EventLogs) -> String {
    let mut out = String::from("date,spot_id,arrival_s,departure_s,max_duration_s\n");
    for log in logs.values() {
        for e in log.events() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                log.day, e.spot, e.arrival, e.departure, e.max_duration
            );
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<NaiveDate>,
    pub validation: Vec<NaiveDate>,
    pub test: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }

    pub fn of(day: NaiveDate) -> SplitName {
        match day.ordinal() % 13 {
            0 => SplitName::Test,
            1 => SplitName::Validation,
            _ => SplitName::Train,
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Day-of-year mod 13: 0 → test, 1 → validation, otherwise train.
/// Output lists are sorted and deduplicated.
pub fn split_days(days: &[NaiveDate]) -> DatasetSplit {
    let mut days = days.to_vec();
    days.sort_unstable();
    days.dedup();
    let mut split = DatasetSplit::default();
    for d in days {
        match SplitName::of(d) {
            SplitName::Test => split.test.push(d),
            SplitName::Validation => split.validation.push(d),
            SplitName::Train => split.train.push(d),
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEventParams {
    pub start_date: NaiveDate,
    pub days: usize,
    /// Poisson arrival rate per spot and hour while the spot is free.
    pub arrival_rate_per_hour: f64,
    /// Mean of the exponential stay duration, seconds.
    pub mean_stay_s: f64,
    pub duration_menu: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthEventParams {
    fn default() -> Self {
        SynthEventParams {
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            days: 20,
            arrival_rate_per_hour: 0.5,
            mean_stay_s: 3600.0,
            duration_menu: DEFAULT_DURATION_MENU.to_vec(),
            seed: 0,
        }
    }
}

/// Exponential stays with whole-second timestamps.
#[derive(Debug, Clone, Copy)]
pub struct StayModel {
    dist: Exp<f64>,
}

impl StayModel {
    pub fn new(mean_stay_s: f64) -> Result<Self> {
        let dist = Exp::new(1.0 / mean_stay_s)
            .map_err(|e| Error::Config(format!("invalid mean stay {mean_stay_s}: {e}")))?;
        Ok(StayModel { dist })
    }

    /// Stay length in whole seconds, at least 1.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng).round().max(1.0)
    }
}

/// Poisson arrivals per spot, thinned so a spot never holds two cars.
pub fn generate_synthetic(spots: &[ParkingSpot], params: &SynthEventParams) -> Result<EventLogs> {
    if params.duration_menu.is_empty() || params.duration_menu.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Config("duration menu must be non-empty and positive".into()));
    }
    if !(params.arrival_rate_per_hour >= 0.0) {
        return Err(Error::Config("arrival rate must be non-negative".into()));
    }
    let stay = StayModel::new(params.mean_stay_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let gap = (params.arrival_rate_per_hour > 0.0)
        .then(|| Exp::new(params.arrival_rate_per_hour / 3600.0))
        .transpose()
        .map_err(|e| Error::Config(format!("invalid arrival rate: {e}")))?;
    let mut logs = BTreeMap::new();
    for d in 0..params.days {
        let day = params.start_date + chrono::Days::new(d as u64);
        let mut events = Vec::new();
        if let Some(gap) = gap {
            for spot in spots {
                let mut t = 0.0;
                loop {
                    t = (t + gap.sample(&mut rng)).floor();
                    if t >= SECONDS_PER_DAY {
                        break;
                    }
                    let departure = (t + stay.sample(&mut rng)).min(SECONDS_PER_DAY);
                    let max_duration =
                        params.duration_menu[rng.gen_range(0..params.duration_menu.len())];
                    events.push(ParkingEvent {
                        spot: spot.id,
                        arrival: t,
                        departure,
                        max_duration,
                    });
                    t = departure;
                }
            }
        }
        logs.insert(day, EventLog::new(day, events)?);
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    Free,
    Occupied,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub time: f64,
    pub spot: usize,
    pub kind: ChangeKind,
    /// Index of the originating event in the log.
    pub event: usize,
}

/// Occupied at arrival, violation at onset (if the stay outlasts it), free
/// at departure; sorted by time, then spot, with a departure ordered before
/// a same-second re-arrival.
pub fn event_timeline(log: &EventLog) -> Vec<StatusChange> {
    let mut out = Vec::with_capacity(log.events().len() * 3);
    for (i, e) in log.events().iter().enumerate() {
        out.push(StatusChange {
            time: e.arrival,
            spot: e.spot,
            kind: ChangeKind::Occupied,
            event: i,
        });
        if e.violates() {
            out.push(StatusChange {
                time: e.violation_onset(),
                spot: e.spot,
                kind: ChangeKind::Violation,
                event: i,
            });
        }
        out.push(StatusChange {
            time: e.departure,
            spot: e.spot,
            kind: ChangeKind::Free,
            event: i,
        });
    }
    out.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.spot.cmp(&b.spot))
            .then(a.kind.cmp(&b.kind))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn single_row_with_clock_times() {
        let text = "date,spot_id,arrival_s,departure_s,max_duration_s\n2019-03-01,0,08:00,10:30,7200\n";
        let logs = parse_events(Path::new("e.csv"), text, 1).unwrap();
        let log = &logs[&day(2019, 3, 1)];
        assert_eq!(log.events().len(), 1);
        let e = log.events()[0];
        assert_eq!(e.violation_onset(), 10.0 * 3600.0);
        assert!(e.violates());
    }

    #[test]
    fn rows_are_sorted_and_midnight_clipped() {
        let text = "date,spot_id,arrival_s,departure_s,max_duration_s\n\
                    2019-03-01,1,500,900,60\n\
                    2019-03-01,0,100,90000,60\n";
        let logs = parse_events(Path::new("e.csv"), text, 2).unwrap();
        let ev = logs[&day(2019, 3, 1)].events();
        assert_eq!(ev[0].spot, 0);
        assert_eq!(ev[0].departure, SECONDS_PER_DAY);
        assert_eq!(ev[1].spot, 1);
    }

    #[test]
    fn ingestion_errors() {
        let h = "date,spot_id,arrival_s,departure_s,max_duration_s\n";
        let err = parse_events(Path::new("e"), &format!("{h}2019-01-01,5,0,10,5\n"), 2).unwrap_err();
        assert!(matches!(err, Error::UnknownSpot { spot: 5, line: 2 }));
        let err = parse_events(
            Path::new("e"),
            &format!("{h}2019-01-01,0,0,100,5\n2019-01-01,0,50,200,5\n"),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::OverlappingEvents { first: 2, second: 3, .. }), "{err}");
        let err = parse_events(Path::new("e"), &format!("{h}2019-01-01,0,ab,100,5\n"), 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn split_rules() {
        let s = split_days(&[day(2019, 1, 13), day(2019, 1, 14), day(2019, 1, 15)]);
        assert_eq!(s.test, vec![day(2019, 1, 13)]);
        assert_eq!(s.validation, vec![day(2019, 1, 14)]);
        assert_eq!(s.train, vec![day(2019, 1, 15)]);
        assert_eq!(split_days(&[]), DatasetSplit::default());
    }

    #[test]
    fn timeline_examples() {
        let d = day(2019, 1, 1);
        let log = EventLog::new(
            d,
            vec![ParkingEvent { spot: 0, arrival: 0.0, departure: 100.0, max_duration: 200.0 }],
        )
        .unwrap();
        let kinds: Vec<_> = event_timeline(&log).iter().map(|c| (c.kind, c.time)).collect();
        assert_eq!(kinds, vec![(ChangeKind::Occupied, 0.0), (ChangeKind::Free, 100.0)]);

        let log = EventLog::new(
            d,
            vec![ParkingEvent { spot: 0, arrival: 0.0, departure: 300.0, max_duration: 200.0 }],
        )
        .unwrap();
        let kinds: Vec<_> = event_timeline(&log).iter().map(|c| (c.kind, c.time)).collect();
        assert_eq!(
            kinds,
            vec![
                (ChangeKind::Occupied, 0.0),
                (ChangeKind::Violation, 200.0),
                (ChangeKind::Free, 300.0)
            ]
        );
    }

    #[test]
    fn back_to_back_events_free_before_occupied() {
        let d = day(2019, 1, 1);
        let log = EventLog::new(
            d,
            vec![
                ParkingEvent { spot: 0, arrival: 0.0, departure: 100.0, max_duration: 50.0 },
                ParkingEvent { spot: 0, arrival: 100.0, departure: 150.0, max_duration: 50.0 },
            ],
        )
        .unwrap();
        let tl = event_timeline(&log);
        let at_100: Vec<_> = tl.iter().filter(|c| c.time == 100.0).map(|c| c.kind).collect();
        assert_eq!(at_100, vec![ChangeKind::Free, ChangeKind::Occupied]);
    }

    #[test]
    fn zero_rate_yields_empty_logs() {
        let spots = vec![ParkingSpot { id: 0, edge: 0, offset: 0.5, x: 0.0, y: 0.0, max_duration: 60.0 }];
        let params = SynthEventParams { arrival_rate_per_hour: 0.0, days: 3, ..Default::default() };
        let logs = generate_synthetic(&spots, &params).unwrap();
        assert_eq!(logs.len(), 3);
        assert!(logs.values().all(EventLog::is_empty));
    }
}
