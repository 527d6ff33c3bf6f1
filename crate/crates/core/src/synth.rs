//! Seeded synthetic traces: vehicles arrive along a segment toward its gate and park
//! in a section, or leave a section and drive away from the gate. The simulated
//! section occupancy is kept as exact ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SectionOccupancy, StudyWindow};
use crate::geodata::{haversine, Campus, GeoPoint, EARTH_RADIUS_M};
use crate::spatial::{
    point_in_section, snap_to_segment, Segment, SpatialJoiner, VehicleObservation,
};

/// Hourly Poisson rates for one gate, indexed by hour offset from the daily start.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub arrivals: Vec<f64>,
    pub departures: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub first_day: NaiveDate,
    pub days: u32,
    pub start_hour: u32,
    pub end_hour: u32,
    /// Gates without a curve see no traffic.
    pub rates: BTreeMap<u32, RateCurve>,
    /// Standard deviation of the GPS error, meters.
    pub noise_sigma_m: f64,
    pub points_per_trace: usize,
    pub snap_threshold_m: f64,
}

fn bell(peak: f64, center: f64, width: f64, hours: std::ops::Range<u32>) -> Vec<f64> {
    hours
        .map(|h| {
            let z = (f64::from(h) + 0.5 - center) / width;
            peak * (-0.5 * z * z).exp()
        })
        .collect()
}

impl SynthSpec {
    /// Morning arrival peak, early-afternoon departure peak, scaled per gate.
    pub fn benchmark(gates: &[u32]) -> Self {
        let (start_hour, end_hour) = (7, 15);
        let rates = gates
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let scale = 1.0 - 0.12 * i as f64;
                (
                    g,
                    RateCurve {
                        arrivals: bell(28.0 * scale, 8.5, 1.2, start_hour..end_hour),
                        departures: bell(22.0 * scale, 13.5, 1.0, start_hour..end_hour),
                    },
                )
            })
            .collect();
        Self {
            first_day: NaiveDate::from_ymd_opt(2022, 9, 5).expect("valid date"),
            days: 3,
            start_hour,
            end_hour,
            rates,
            noise_sigma_m: 2.0,
            points_per_trace: 4,
            snap_threshold_m: crate::geodata::DEFAULT_SNAP_THRESHOLD_M,
        }
    }

    pub fn window(&self) -> Result<StudyWindow> {
        StudyWindow::days(self.first_day, self.days, self.start_hour, self.end_hour)
    }

    fn hours(&self) -> usize {
        self.end_hour.saturating_sub(self.start_hour) as usize
    }

    fn check(&self, campus: &Campus) -> Result<()> {
        self.window()?;
        if !(self.noise_sigma_m >= 0.0 && self.noise_sigma_m.is_finite()) {
            return Err(Error::Argument(format!(
                "noise sigma {} must be finite and >= 0",
                self.noise_sigma_m
            )));
        }
        if self.points_per_trace < 2 {
            return Err(Error::Argument(
                "a trace needs at least 2 road points".into(),
            ));
        }
        for (gate, curve) in &self.rates {
            if campus.gate(*gate).is_none() {
                return Err(Error::Lookup {
                    kind: "gate",
                    id: *gate,
                });
            }
            for (name, v) in [
                ("arrivals", &curve.arrivals),
                ("departures", &curve.departures),
            ] {
                if v.len() != self.hours() {
                    return Err(Error::Argument(format!(
                        "gate {gate} {name}: {} rates for {} daily hours",
                        v.len(),
                        self.hours()
                    )));
                }
                if let Some(r) = v.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                    return Err(Error::Argument(format!(
                        "gate {gate} {name}: rate {r} is not a finite non-negative number"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact target of one (hour, segment) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub timestamp: DateTime<Utc>,
    pub segment_no: u32,
    pub arrivals: u32,
    pub departures: u32,
    pub capacity: u32,
    pub vacant: u32,
    pub availability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Ordered by timestamp, then vehicle key.
    pub observations: Vec<VehicleObservation>,
    /// End-of-hour occupancy, ordered by hour then section.
    pub occupancy: Vec<SectionOccupancy>,
    /// Ordered by hour then segment, matching the aggregated rows.
    pub truth: Vec<TruthRow>,
    /// Departures that found no parked vehicle to remove.
    pub suppressed_departures: u32,
}

/// Point at arc length `s` meters along a polyline.
fn point_along(line: &[GeoPoint], s: f64) -> GeoPoint {
    let mut left = s.max(0.0);
    for w in line.windows(2) {
        let len = haversine(w[0], w[1]);
        if left <= len && len > 0.0 {
            let t = left / len;
            return GeoPoint {
                lon: w[0].lon + t * (w[1].lon - w[0].lon),
                lat: w[0].lat + t * (w[1].lat - w[0].lat),
            };
        }
        left -= len;
    }
    *line.last().expect("non-empty polyline")
}

fn centroid(ring: &[GeoPoint]) -> GeoPoint {
    let pts = &ring[..ring.len() - 1];
    let n = pts.len() as f64;
    GeoPoint {
        lon: pts.iter().map(|p| p.lon).sum::<f64>() / n,
        lat: pts.iter().map(|p| p.lat).sum::<f64>() / n,
    }
}

fn jitter(p: GeoPoint, noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> GeoPoint {
    let Some(n) = noise else { return p };
    let (east, north) = (n.sample(rng), n.sample(rng));
    let deg = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_M);
    GeoPoint {
        lon: p.lon + east * deg / p.lat.to_radians().cos(),
        lat: p.lat + north * deg,
    }
}

fn draw(rate: f64, rng: &mut ChaCha8Rng) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate)
        .expect("positive finite rate")
        .sample(rng) as u32
}

struct Tracer<'a> {
    noise: Option<Normal<f64>>,
    points: usize,
    segment: &'a Segment,
}

impl Tracer<'_> {
    /// Road points ordered toward the segment's terminal gate, kept clear of both gates.
    fn road(&self, rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let f = 0.15 + 0.7 * i as f64 / (n - 1) as f64;
                jitter(
                    point_along(&self.segment.polyline, f * self.segment.length_m),
                    self.noise.as_ref(),
                    rng,
                )
            })
            .collect()
    }
}

/// Simulates the campus over the generator window.
pub fn generate(spec: &SynthSpec, campus: &Campus, seed: u64) -> Result<SynthOutput> {
    spec.check(campus)?;
    let joiner = SpatialJoiner::new(campus, spec.snap_threshold_m)?;
    let segments = &joiner.segments;
    let by_gate: BTreeMap<u32, &Segment> = segments.iter().map(|s| (s.end_gate, s)).collect();
    let parked: BTreeMap<u32, GeoPoint> = campus
        .sections
        .iter()
        .map(|s| (s.id, centroid(&s.polygon)))
        .collect();
    for (&id, &p) in &parked {
        if point_in_section(p, &campus.sections)? != Some(id) {
            return Err(Error::Geometry(format!(
                "centroid of section {id} is not inside it"
            )));
        }
        if snap_to_segment(p, segments, spec.snap_threshold_m).is_some() {
            return Err(Error::Geometry(format!(
                "centroid of section {id} is within {} m of the perimeter road",
                spec.snap_threshold_m
            )));
        }
    }
    let capacity: BTreeMap<u32, u32> = campus.sections.iter().map(|s| (s.id, s.capacity)).collect();
    let noise = if spec.noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma_m).map_err(|e| Error::Argument(e.to_string()))?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::new();
    let mut occupancy = Vec::new();
    let mut truth = Vec::new();
    let mut suppressed = 0;
    let gates: Vec<u32> = segments.iter().map(|s| s.end_gate).collect();

    for day in 0..spec.days {
        let date = spec.first_day + Duration::days(i64::from(day));
        let mut occupied: BTreeMap<u32, u32> = capacity.keys().map(|&id| (id, 0)).collect();
        for h in 0..spec.hours() {
            let hour = spec.start_hour + h as u32;
            let bucket = date.and_hms_opt(hour, 0, 0).expect("valid hour").and_utc();
            let mut arrivals: BTreeMap<u32, u32> = BTreeMap::new();
            let mut departures: BTreeMap<u32, u32> = BTreeMap::new();
            for &gate in &gates {
                let Some(curve) = spec.rates.get(&gate) else {
                    continue;
                };
                let tracer = Tracer {
                    noise,
                    points: spec.points_per_trace,
                    segment: by_gate[&gate],
                };
                let served = campus.sections_for_gate(gate);
                for v in 0..draw(curve.arrivals[h], &mut rng) {
                    let open: Vec<u32> = served
                        .iter()
                        .copied()
                        .filter(|s| occupied[s] < capacity[s])
                        .collect();
                    let Some(&section) = open.choose(&mut rng) else {
                        return Err(Error::Domain(format!(
                            "arrival rates overflow the sections of gate {gate} at {bucket}"
                        )));
                    };
                    *occupied.get_mut(&section).expect("known section") += 1;
                    *arrivals.entry(gate).or_default() += 1;
                    let key = format!("syn-{date}-h{hour:02}-g{gate}-a{v:03}");
                    let mut t = bucket + Duration::seconds(rng.random_range(0..40 * 60));
                    let speed = rng.random_range(15.0..35.0);
                    for p in tracer.road(&mut rng) {
                        observations.push(obs(&key, p, t, Some(speed)));
                        t += Duration::seconds(20);
                    }
                    t += Duration::seconds(60);
                    observations.push(obs(
                        &key,
                        jitter(parked[&section], noise.as_ref(), &mut rng),
                        t,
                        Some(0.0),
                    ));
                }
                for v in 0..draw(curve.departures[h], &mut rng) {
                    let full: Vec<u32> =
                        served.iter().copied().filter(|s| occupied[s] > 0).collect();
                    let Some(&section) = full.choose(&mut rng) else {
                        suppressed += 1;
                        continue;
                    };
                    *occupied.get_mut(&section).expect("known section") -= 1;
                    *departures.entry(gate).or_default() += 1;
                    let key = format!("syn-{date}-h{hour:02}-g{gate}-d{v:03}");
                    let mut t = bucket + Duration::seconds(rng.random_range(0..40 * 60));
                    let speed = rng.random_range(15.0..35.0);
                    observations.push(obs(
                        &key,
                        jitter(parked[&section], noise.as_ref(), &mut rng),
                        t,
                        Some(0.0),
                    ));
                    t += Duration::seconds(60);
                    let mut road = tracer.road(&mut rng);
                    road.reverse();
                    for p in road {
                        observations.push(obs(&key, p, t, Some(speed)));
                        t += Duration::seconds(20);
                    }
                }
            }
            for (&id, &cap) in &capacity {
                occupancy.push(SectionOccupancy {
                    timestamp: bucket,
                    section_id: id,
                    capacity: cap,
                    occupied: occupied[&id],
                });
            }
            for seg in segments {
                let served = campus.sections_for_gate(seg.end_gate);
                let cap: u32 = served.iter().filter_map(|s| capacity.get(s)).sum();
                let vacant: u32 = served
                    .iter()
                    .filter_map(|s| Some(capacity.get(s)? - occupied.get(s)?))
                    .sum();
                truth.push(TruthRow {
                    timestamp: bucket,
                    segment_no: seg.id,
                    arrivals: arrivals.get(&seg.end_gate).copied().unwrap_or(0),
                    departures: departures.get(&seg.end_gate).copied().unwrap_or(0),
                    capacity: cap,
                    vacant,
                    availability: if cap > 0 {
                        f64::from(vacant) / f64::from(cap)
                    } else {
                        f64::NAN
                    },
                });
            }
        }
    }
    observations.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.vehicle_key.cmp(&b.vehicle_key))
    });
    Ok(SynthOutput {
        observations,
        occupancy,
        truth,
        suppressed_departures: suppressed,
    })
}

fn obs(
    key: &str,
    point: GeoPoint,
    timestamp: DateTime<Utc>,
    speed_kmh: Option<f64>,
) -> VehicleObservation {
    VehicleObservation {
        vehicle_key: key.to_string(),
        point,
        timestamp,
        speed_kmh,
    }
}

#[derive(Serialize)]
struct TruthRecord {
    timestamp: String,
    segment_no: u32,
    arrivals: u32,
    departures: u32,
    capacity: u32,
    vacant: u32,
    availability: f64,
}

/// Ground-truth availability per (hour, segment) as CSV.
pub fn write_truth_csv<W: Write>(writer: W, truth: &[TruthRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in truth {
        w.serialize(TruthRecord {
            timestamp: crate::spatial::format_timestamp(&t.timestamp),
            segment_no: t.segment_no,
            arrivals: t.arrivals,
            departures: t.departures,
            capacity: t.capacity,
            vacant: t.vacant,
            availability: t.availability,
        })?;
    }
    w.flush()?;
    Ok(())
}
