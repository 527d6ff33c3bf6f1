use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::FeatureRow;
use crate::error::{Error, Result};
use crate::geodata::Campus;
use crate::spatial::{segment_roads, JoinedObservation};

/// Hourly study window: every hour `h` in `[start, end)` whose hour of day lies in
/// `[daily_start_hour, daily_end_hour)` is one bucket `[h, h+1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub daily_start_hour: u32,
    pub daily_end_hour: u32,
}

fn hour_aligned(t: &DateTime<Utc>) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

impl StudyWindow {
    pub fn new(
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        daily_start_hour: u32,
        daily_end_hour: u32,
    ) -> Result<Self> {
        if !hour_aligned(&start) || !hour_aligned(&end) {
            return Err(Error::Argument(format!(
                "window [{start}, {end}) is not hour-aligned"
            )));
        }
        if start >= end {
            return Err(Error::Argument(format!(
                "window start {start} is not before end {end}"
            )));
        }
        if daily_start_hour >= daily_end_hour || daily_end_hour > 24 {
            return Err(Error::Argument(format!(
                "daily hours [{daily_start_hour}, {daily_end_hour}) are invalid"
            )));
        }
        Ok(Self {
            start,
            end,
            daily_start_hour,
            daily_end_hour,
        })
    }

    /// `days` consecutive days starting at `first_day`, each covering
    /// `[start_hour, end_hour)`.
    pub fn days(first_day: NaiveDate, days: u32, start_hour: u32, end_hour: u32) -> Result<Self> {
        if days == 0 {
            return Err(Error::Argument("window needs at least one day".into()));
        }
        if start_hour >= end_hour || end_hour > 24 {
            return Err(Error::Argument(format!(
                "daily hours [{start_hour}, {end_hour}) are invalid"
            )));
        }
        let midnight = first_day
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc();
        let start = midnight + Duration::hours(i64::from(start_hour));
        let end =
            midnight + Duration::days(i64::from(days) - 1) + Duration::hours(i64::from(end_hour));
        Self::new(start, end, start_hour, end_hour)
    }

    pub fn contains_bucket(&self, bucket: DateTime<Utc>) -> bool {
        bucket >= self.start
            && bucket < self.end
            && (self.daily_start_hour..self.daily_end_hour).contains(&bucket.hour())
    }

    /// Bucket start instants in time order.
    pub fn buckets(&self) -> Vec<DateTime<Utc>> {
        let mut out = Vec::new();
        let mut h = self.start;
        while h < self.end {
            if self.contains_bucket(h) {
                out.push(h);
            }
            h += Duration::hours(1);
        }
        out
    }
}

/// Truncates an instant to the start of its hour.
pub(crate) fn hour_bucket(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_nanosecond(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_minute(0))
        .expect("truncation to the hour is always representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inbound,
    Outbound,
}

/// One vehicle's classified movement within a group of observations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movement {
    pub vehicle_key: String,
    /// Segment of the vehicle's last snapped observation.
    pub segment_id: u32,
    pub direction: Direction,
    /// First parking section the vehicle was observed in, if any.
    pub section_id: Option<u32>,
}

/// Classifies each vehicle in `obs` as inbound or outbound.
///
/// A vehicle is inbound when its offset along its (last) segment grows between its
/// first and last snapped observation on that segment, i.e. it moves toward the
/// segment's terminal gate. A single snapped observation counts as inbound. Vehicles
/// with no snapped observation are not classified. Output is sorted by vehicle key.
pub fn classify_movements<'a, I>(obs: I) -> Vec<Movement>
where
    I: IntoIterator<Item = &'a JoinedObservation>,
{
    let mut by_vehicle: BTreeMap<&str, Vec<&JoinedObservation>> = BTreeMap::new();
    for o in obs {
        by_vehicle
            .entry(o.observation.vehicle_key.as_str())
            .or_default()
            .push(o);
    }
    let mut out = Vec::new();
    for (key, mut group) in by_vehicle {
        group.sort_by_key(|o| o.observation.timestamp);
        let Some(segment_id) = group.iter().rev().find_map(|o| o.segment_id) else {
            continue;
        };
        let on_segment: Vec<f64> = group
            .iter()
            .filter(|o| o.segment_id == Some(segment_id))
            .map(|o| o.offset_m)
            .collect();
        let first = on_segment[0];
        let last = on_segment[on_segment.len() - 1];
        let direction = if on_segment.len() == 1 || last > first {
            Direction::Inbound
        } else {
            Direction::Outbound
        };
        out.push(Movement {
            vehicle_key: key.to_string(),
            segment_id,
            direction,
            section_id: group.iter().find_map(|o| o.section_id),
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregationOptions {
    /// Occupied spaces per section at the first bucket of each day; absent sections start empty.
    pub initial_occupancy: BTreeMap<u32, u32>,
}

/// End-of-hour occupancy of one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionOccupancy {
    pub timestamp: DateTime<Utc>,
    pub section_id: u32,
    pub capacity: u32,
    pub occupied: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    /// One row per (bucket, segment), ordered by bucket then segment.
    pub rows: Vec<FeatureRow>,
    /// Running section balance, ordered by bucket then section.
    pub occupancy: Vec<SectionOccupancy>,
    /// Number of times a running balance had to be clamped into `[0, capacity]`.
    pub clamp_events: usize,
}

/// Aggregates joined observations into hourly per-segment feature rows.
///
/// The availability target of a row on segment `k` is the pooled vacant fraction of
/// the sections served by gate `k`, taken from a per-section running balance that
/// restarts at the configured initial occupancy on each new day. Inbound vehicles
/// are attributed to the section they were observed in, falling back to the first
/// section listed for their expected gate; outbound vehicles likewise.
pub fn aggregate_hourly(
    joined: &[JoinedObservation],
    campus: &Campus,
    window: &StudyWindow,
    options: &AggregationOptions,
) -> Result<Aggregation> {
    let window = StudyWindow::new(
        window.start,
        window.end,
        window.daily_start_hour,
        window.daily_end_hour,
    )?;
    if campus.sections.is_empty() {
        return Err(Error::Argument("campus has no parking sections".into()));
    }
    let segments = segment_roads(campus)?;
    let buckets = window.buckets();
    let bucket_set: BTreeSet<DateTime<Utc>> = buckets.iter().copied().collect();

    let mut in_bucket: BTreeMap<DateTime<Utc>, Vec<&JoinedObservation>> = BTreeMap::new();
    for j in joined {
        let b = hour_bucket(j.observation.timestamp);
        if bucket_set.contains(&b) {
            in_bucket.entry(b).or_default().push(j);
        }
    }

    let mut sections: Vec<(u32, u32)> =
        campus.sections.iter().map(|s| (s.id, s.capacity)).collect();
    sections.sort_unstable();
    let gate_sections: BTreeMap<u32, Vec<u32>> = segments
        .iter()
        .map(|s| (s.id, campus.sections_for_gate(s.end_gate)))
        .collect();
    let capacity_of: BTreeMap<u32, u32> = sections.iter().copied().collect();

    let initial = |id: u32, cap: u32| {
        options
            .initial_occupancy
            .get(&id)
            .copied()
            .unwrap_or(0)
            .min(cap)
    };
    let mut occupied: BTreeMap<u32, u32> = BTreeMap::new();
    let mut current_day: Option<NaiveDate> = None;
    let mut clamp_events = 0;
    let mut rows = Vec::with_capacity(buckets.len() * segments.len());
    let mut occupancy = Vec::with_capacity(buckets.len() * sections.len());
    let empty = Vec::new();

    for &bucket in &buckets {
        if current_day != Some(bucket.date_naive()) {
            current_day = Some(bucket.date_naive());
            occupied = sections
                .iter()
                .map(|&(id, cap)| (id, initial(id, cap)))
                .collect();
        }
        let obs = in_bucket.get(&bucket).unwrap_or(&empty);
        let movements = classify_movements(obs.iter().copied());

        let mut influx: BTreeMap<u32, u32> = BTreeMap::new();
        let mut outflux: BTreeMap<u32, u32> = BTreeMap::new();
        let mut section_in: BTreeMap<u32, i64> = BTreeMap::new();
        let mut section_out: BTreeMap<u32, i64> = BTreeMap::new();
        for m in &movements {
            let section = m.section_id.or_else(|| {
                gate_sections
                    .get(&m.segment_id)
                    .and_then(|s| s.first().copied())
            });
            match m.direction {
                Direction::Inbound => {
                    *influx.entry(m.segment_id).or_default() += 1;
                    if let Some(s) = section {
                        *section_in.entry(s).or_default() += 1;
                    }
                }
                Direction::Outbound => {
                    *outflux.entry(m.segment_id).or_default() += 1;
                    if let Some(s) = section {
                        *section_out.entry(s).or_default() += 1;
                    }
                }
            }
        }

        for &(id, cap) in &sections {
            let prev = i64::from(occupied[&id]);
            let next = prev + section_in.get(&id).copied().unwrap_or(0)
                - section_out.get(&id).copied().unwrap_or(0);
            let clamped = next.clamp(0, i64::from(cap));
            if clamped != next {
                clamp_events += 1;
            }
            occupied.insert(id, clamped as u32);
            occupancy.push(SectionOccupancy {
                timestamp: bucket,
                section_id: id,
                capacity: cap,
                occupied: clamped as u32,
            });
        }

        for seg in &segments {
            let mut distance_sum = 0.0;
            let mut distance_n = 0usize;
            let mut speed_sum = 0.0;
            let mut speed_n = 0usize;
            for o in obs.iter().filter(|o| o.segment_id == Some(seg.id)) {
                distance_sum += (seg.length_m - o.offset_m).max(0.0);
                distance_n += 1;
                if let Some(s) = o.observation.speed_kmh {
                    speed_sum += s;
                    speed_n += 1;
                }
            }
            let served = &gate_sections[&seg.id];
            let total: u32 = served.iter().filter_map(|s| capacity_of.get(s)).sum();
            let vacant: u32 = served
                .iter()
                .filter_map(|s| Some(capacity_of.get(s)? - occupied.get(s)?))
                .sum();
            rows.push(FeatureRow {
                distance_m: if distance_n > 0 {
                    distance_sum / distance_n as f64
                } else {
                    0.0
                },
                timestamp: bucket,
                travel_speed_kmh: if speed_n > 0 {
                    speed_sum / speed_n as f64
                } else {
                    0.0
                },
                n_vehicles: influx.get(&seg.id).copied().unwrap_or(0),
                n_vehicles_exit: outflux.get(&seg.id).copied().unwrap_or(0),
                segment_no: seg.id,
                total_parking_space: total,
                availability: if total > 0 {
                    f64::from(vacant) / f64::from(total)
                } else {
                    f64::NAN
                },
            });
        }
    }

    Ok(Aggregation {
        rows,
        occupancy,
        clamp_events,
    })
}
