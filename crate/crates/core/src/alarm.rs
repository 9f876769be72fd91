//! Alarm log: `timestamp,device_id,status` rows sorted by `(timestamp, device_id)`.
//!
//! A log may carry one row per tick or only status changes; everything here
//! works on maximal ALARM runs measured by timestamps, so both forms yield the
//! same runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{DeviceId, TopologyError};

#[derive(Debug, Error)]
pub enum AlarmLogError {
    #[error("alarm log line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("alarm log header must be `timestamp,device_id,status`, found `{0}`")]
    BadHeader(String),
    #[error("alarm log line {line}: rows must be sorted by (timestamp, device_id) without duplicates")]
    Unsorted { line: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "ALARM")]
    Alarm,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "OK",
            Status::Alarm => "ALARM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlarmEvent {
    pub tick: u64,
    pub device: DeviceId,
    pub status: Status,
}

/// A maximal run of ALARM rows for one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlarmRun {
    /// Tick of the first ALARM row.
    pub start: u64,
    /// Tick of the OK row that closed the run; `None` while still open.
    pub end: Option<u64>,
}

impl AlarmRun {
    pub fn duration(&self) -> Option<u64> {
        self.end.map(|e| e - self.start)
    }
}

/// Per-device view of a log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceHistory {
    /// Tick of the device's first row.
    pub first_tick: u64,
    pub runs: Vec<AlarmRun>,
    /// Completed OK intervals: from the tick a device was (again) OK up to the
    /// start of its next ALARM run.
    pub up_intervals: Vec<u64>,
}

impl DeviceHistory {
    pub fn open_run(&self) -> Option<&AlarmRun> {
        self.runs.last().filter(|r| r.end.is_none())
    }

    pub fn recovery_times(&self) -> Vec<u64> {
        self.runs.iter().filter_map(AlarmRun::duration).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlarmLog {
    events: Vec<AlarmEvent>,
    /// Distinct devices in id order.
    devices: Vec<DeviceId>,
    /// Position in `devices` of each event's device.
    slots: Vec<u32>,
}

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: u64,
    device_id: String,
    status: Status,
}

impl AlarmLog {
    /// Build from events in any order; they are sorted by `(tick, device)`.
    pub fn from_events(mut events: Vec<AlarmEvent>) -> Result<Self, AlarmLogError> {
        events.sort_by(|a, b| (a.tick, &a.device).cmp(&(b.tick, &b.device)));
        if let Some(pos) = events
            .windows(2)
            .position(|w| (w[0].tick, &w[0].device) == (w[1].tick, &w[1].device))
        {
            return Err(AlarmLogError::Unsorted { line: pos as u64 + 3 });
        }
        Ok(AlarmLog::indexed(events))
    }

    pub fn parse(text: &str) -> Result<Self, AlarmLogError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, AlarmLogError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| malformed(&e, 1))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != "timestamp,device_id,status" {
            return Err(AlarmLogError::BadHeader(header));
        }
        let mut events: Vec<AlarmEvent> = Vec::new();
        // one shared id per device
        let mut seen: HashMap<String, DeviceId> = HashMap::new();
        for result in rdr.deserialize::<Row>() {
            let row = result.map_err(|e| malformed(&e, 0))?;
            let line = events.len() as u64 + 2;
            let device = match seen.get(&row.device_id) {
                Some(id) => id.clone(),
                None => {
                    let id = DeviceId::new(row.device_id.clone()).map_err(|e: TopologyError| {
                        AlarmLogError::Malformed {
                            line,
                            message: e.to_string(),
                        }
                    })?;
                    seen.insert(row.device_id, id.clone());
                    id
                }
            };
            let ev = AlarmEvent {
                tick: row.timestamp,
                device,
                status: row.status,
            };
            if let Some(prev) = events.last() {
                if (prev.tick, &prev.device) >= (ev.tick, &ev.device) {
                    return Err(AlarmLogError::Unsorted { line });
                }
            }
            events.push(ev);
        }
        Ok(AlarmLog::indexed(events))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 20 + 32);
        out.push_str("timestamp,device_id,status\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", e.tick, e.device, e.status));
        }
        out
    }

    pub fn events(&self) -> &[AlarmEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// First and last timestamp.
    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.tick, self.events.last()?.tick))
    }

    pub fn alarm_count(&self) -> usize {
        self.events.iter().filter(|e| e.status == Status::Alarm).count()
    }

    /// Status of `device` at `tick`: the status of its last row at or before `tick`.
    pub fn status_at(&self, device: &DeviceId, tick: u64) -> Option<Status> {
        self.events
            .iter()
            .take_while(|e| e.tick <= tick)
            .filter(|e| &e.device == device)
            .last()
            .map(|e| e.status)
    }

    /// Runs and up-intervals for every device that appears in the log.
    pub fn histories(&self) -> BTreeMap<DeviceId, DeviceHistory> {
        let mut offset = vec![0usize; self.devices.len() + 1];
        for &s in &self.slots {
            offset[s as usize + 1] += 1;
        }
        for i in 1..offset.len() {
            offset[i] += offset[i - 1];
        }
        let mut cursor = offset.clone();
        let mut rows = vec![(0u64, Status::Ok); self.events.len()];
        for (e, &s) in self.events.iter().zip(&self.slots) {
            rows[cursor[s as usize]] = (e.tick, e.status);
            cursor[s as usize] += 1;
        }
        self.devices
            .iter()
            .enumerate()
            .map(|(s, id)| (id.clone(), history_of(&rows[offset[s]..offset[s + 1]])))
            .collect()
    }

    /// Distinct devices that appear in the log, in id order.
    pub fn devices(&self) -> &[DeviceId] {
        &self.devices
    }

    fn indexed(mut events: Vec<AlarmEvent>) -> Self {
        let mut first_seen: HashMap<DeviceId, u32> = HashMap::new();
        let mut slots: Vec<u32> = events
            .iter()
            .map(|e| {
                let next = first_seen.len() as u32;
                *first_seen.entry(e.device.clone()).or_insert(next)
            })
            .collect();
        let mut devices: Vec<(DeviceId, u32)> = first_seen.into_iter().collect();
        devices.sort_unstable();
        let mut rank = vec![0u32; devices.len()];
        for (r, (_, s)) in devices.iter().enumerate() {
            rank[*s as usize] = r as u32;
        }
        let devices: Vec<DeviceId> = devices.into_iter().map(|(id, _)| id).collect();
        for (e, s) in events.iter_mut().zip(slots.iter_mut()) {
            *s = rank[*s as usize];
            // share one allocation per device
            e.device = devices[*s as usize].clone();
        }
        AlarmLog { events, devices, slots }
    }

    pub fn history(&self, device: &DeviceId) -> DeviceHistory {
        let rows: Vec<(u64, Status)> = self
            .events
            .iter()
            .filter(|e| &e.device == device)
            .map(|e| (e.tick, e.status))
            .collect();
        history_of(&rows)
    }
}

fn malformed(e: &csv::Error, fallback_line: u64) -> AlarmLogError {
    AlarmLogError::Malformed {
        line: e.position().map(|p| p.line()).unwrap_or(fallback_line),
        message: e.to_string(),
    }
}

fn history_of(rows: &[(u64, Status)]) -> DeviceHistory {
    let mut h = DeviceHistory {
        first_tick: rows.first().map(|r| r.0).unwrap_or(0),
        ..Default::default()
    };
    let mut ok_since: Option<u64> = None;
    for &(tick, status) in rows {
        match status {
            Status::Alarm => {
                if h.open_run().is_none() {
                    if let Some(since) = ok_since.take() {
                        h.up_intervals.push(tick - since);
                    }
                    h.runs.push(AlarmRun { start: tick, end: None });
                }
            }
            Status::Ok => {
                if let Some(run) = h.runs.last_mut().filter(|r| r.end.is_none()) {
                    run.end = Some(tick);
                    ok_since = Some(tick);
                } else if ok_since.is_none() {
                    ok_since = Some(tick);
                }
            }
        }
    }
    h
}
