//! Shared inputs for the benchmarks.

use parkcast_core::evaltune::{split_dataset, SplitMode};
use parkcast_core::features::{aggregate_hourly, clean, AggregationOptions, StudyWindow};
use parkcast_core::spatial::spatial_join;
use parkcast_core::synth::{generate, SynthOutput, SynthSpec};
use parkcast_core::{fixtures, Campus, Dataset, JoinedObservation};

pub struct Benchmark {
    pub campus: Campus,
    pub spec: SynthSpec,
    pub window: StudyWindow,
    pub synth: SynthOutput,
    pub joined: Vec<JoinedObservation>,
    pub dataset: Dataset,
}

/// The synthetic campus benchmark with `days` days of traffic.
pub fn benchmark(days: u32, seed: u64) -> Benchmark {
    let campus = fixtures::campus();
    let gates: Vec<u32> = campus.gates.iter().map(|g| g.id).collect();
    let mut spec = SynthSpec::benchmark(&gates);
    spec.days = days;
    let synth = generate(&spec, &campus, seed).expect("benchmark spec generates");
    let joined = spatial_join(&synth.observations, &campus, spec.snap_threshold_m).expect("join");
    let window = spec.window().expect("window");
    let agg = aggregate_hourly(&joined, &campus, &window, &AggregationOptions::default())
        .expect("aggregate");
    let (rows, _) = clean(&agg.rows);
    let (dataset, _) = split_dataset(&rows, 0.7, SplitMode::Chronological).expect("split");
    Benchmark {
        campus,
        spec,
        window,
        synth,
        joined,
        dataset,
    }
}
