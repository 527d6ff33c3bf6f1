use std::collections::BTreeMap;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use parkcast_core::features::{classify_movements, Direction};
use parkcast_core::geodata::Campus;
use parkcast_core::spatial::{JoinedObservation, Segment};
use serde::{Deserialize, Serialize};

use crate::config::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccupancyState {
    Low,
    Moderate,
    High,
}

impl OccupancyState {
    pub fn color(self) -> &'static str {
        match self {
            OccupancyState::Low => "#2e7d32",
            OccupancyState::Moderate => "#f9a825",
            OccupancyState::High => "#c62828",
        }
    }
}

/// Maps a fraction occupied onto the three display states; both cut points belong to "moderate".
pub fn occupancy_state(rate: f64, t: &Thresholds) -> OccupancyState {
    if rate < t.low_below {
        OccupancyState::Low
    } else if rate <= t.high_above {
        OccupancyState::Moderate
    } else {
        OccupancyState::High
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionState {
    pub id: u32,
    pub name: String,
    pub capacity: u32,
    pub occupied: u32,
}

impl SectionState {
    pub fn vacant(&self) -> u32 {
        self.capacity - self.occupied
    }

    pub fn rate(&self) -> f64 {
        if self.capacity == 0 {
            1.0
        } else {
            f64::from(self.occupied) / f64::from(self.capacity)
        }
    }
}

/// Latest hourly movement summary of one segment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentActivity {
    pub hour: Option<DateTime<Utc>>,
    pub distance_m: f64,
    pub travel_speed_kmh: f64,
    pub n_vehicles: u32,
    pub n_vehicles_exit: u32,
}

/// Immutable published state; a new one replaces it after each ingest batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sequence: u64,
    pub timestamp: DateTime<Utc>,
    pub sections: Vec<SectionState>,
    pub activity: BTreeMap<u32, SegmentActivity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub accepted: usize,
    pub snapped: usize,
    pub inbound: usize,
    pub outbound: usize,
    pub warnings: Vec<String>,
}

impl Snapshot {
    pub fn initial(campus: &Campus, initial: &BTreeMap<u32, u32>, now: DateTime<Utc>) -> Self {
        let mut sections: Vec<SectionState> = campus
            .sections
            .iter()
            .map(|s| SectionState {
                id: s.id,
                name: s.name.clone(),
                capacity: s.capacity,
                occupied: initial.get(&s.id).copied().unwrap_or(0).min(s.capacity),
            })
            .collect();
        sections.sort_by_key(|s| s.id);
        Self {
            sequence: 0,
            timestamp: now,
            sections,
            activity: BTreeMap::new(),
        }
    }

    pub fn section(&self, id: u32) -> Option<&SectionState> {
        self.sections.iter().find(|s| s.id == id)
    }

    /// Applies one time-ordered joined batch and returns the successor snapshot.
    pub fn apply(
        &self,
        joined: &[JoinedObservation],
        campus: &Campus,
        segments: &[Segment],
        now: DateTime<Utc>,
    ) -> (Snapshot, BatchSummary) {
        let mut next = self.clone();
        next.sequence += 1;
        next.timestamp = now.max(self.timestamp);
        let mut summary = BatchSummary {
            accepted: joined.len(),
            snapped: joined.iter().filter(|j| j.segment_id.is_some()).count(),
            ..Default::default()
        };

        let mut by_hour: BTreeMap<DateTime<Utc>, Vec<&JoinedObservation>> = BTreeMap::new();
        for j in joined {
            let hour = j
                .observation
                .timestamp
                .duration_trunc(TimeDelta::hours(1))
                .unwrap_or(j.observation.timestamp);
            by_hour.entry(hour).or_default().push(j);
        }
        let fallback: BTreeMap<u32, Option<u32>> = segments
            .iter()
            .map(|s| (s.id, campus.sections_for_gate(s.end_gate).first().copied()))
            .collect();

        for (hour, group) in &by_hour {
            let mut delta: BTreeMap<u32, i64> = BTreeMap::new();
            let mut influx: BTreeMap<u32, u32> = BTreeMap::new();
            let mut outflux: BTreeMap<u32, u32> = BTreeMap::new();
            for m in classify_movements(group.iter().copied()) {
                let section = m
                    .section_id
                    .or_else(|| fallback.get(&m.segment_id).copied().flatten());
                let step = match m.direction {
                    Direction::Inbound => {
                        summary.inbound += 1;
                        *influx.entry(m.segment_id).or_default() += 1;
                        1
                    }
                    Direction::Outbound => {
                        summary.outbound += 1;
                        *outflux.entry(m.segment_id).or_default() += 1;
                        -1
                    }
                };
                if let Some(s) = section {
                    *delta.entry(s).or_default() += step;
                }
            }
            for s in &mut next.sections {
                let Some(d) = delta.get(&s.id) else { continue };
                let raw = i64::from(s.occupied) + d;
                let clamped = raw.clamp(0, i64::from(s.capacity));
                if clamped != raw {
                    let msg = format!(
                        "section {} at {hour}: balance {raw} clamped to {clamped} (capacity {})",
                        s.id, s.capacity
                    );
                    tracing::warn!("{msg}");
                    summary.warnings.push(msg);
                }
                s.occupied = clamped as u32;
            }
            for seg in segments {
                let on: Vec<&&JoinedObservation> = group
                    .iter()
                    .filter(|o| o.segment_id == Some(seg.id))
                    .collect();
                let speeds: Vec<f64> = on.iter().filter_map(|o| o.observation.speed_kmh).collect();
                let activity = SegmentActivity {
                    hour: Some(*hour),
                    distance_m: if on.is_empty() {
                        0.0
                    } else {
                        on.iter()
                            .map(|o| (seg.length_m - o.offset_m).max(0.0))
                            .sum::<f64>()
                            / on.len() as f64
                    },
                    travel_speed_kmh: if speeds.is_empty() {
                        0.0
                    } else {
                        speeds.iter().sum::<f64>() / speeds.len() as f64
                    },
                    n_vehicles: influx.get(&seg.id).copied().unwrap_or(0),
                    n_vehicles_exit: outflux.get(&seg.id).copied().unwrap_or(0),
                };
                next.activity.insert(seg.id, activity);
            }
        }
        (next, summary)
    }
}
