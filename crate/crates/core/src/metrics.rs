//! Episode bookkeeping and summary metrics.

#[derive(Debug, Clone)]
pub struct IntervalRecord {
    pub t: u32,
    /// Cumulative injected vehicles at the end of this interval.
    pub injected_cum: f64,
    /// Running vehicles at the end of this interval.
    pub running: f64,
    /// Vehicles completing within this interval.
    pub completed: f64,
    /// Control reward credited at this interval (nonzero only when a control
    /// window ends here).
    pub reward: f64,
    /// Control rate per agent at the end of this interval.
    pub rates: Vec<f64>,
}

/// Aggregated outcome of one episode. Ratio metrics are `None` when no trip
/// completed (undefined, not NaN).
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub ttt_avg_s: Option<f64>,
    pub delay: Option<f64>,
    pub speed_avg_kmh: Option<f64>,
    pub cumulative_reward: f64,
    pub total_injected: f64,
    pub total_completed: f64,
    pub steps: usize,
    pub freeflow_ttt_s: f64,
    pub series: Vec<IntervalRecord>,
}

/// Computes the summary from the per-interval series.
///
/// Average travel time integrates the running count: `dt * sum N_run / total
/// completions`. Delay is the gap over free-flow travel time; average speed
/// is total veh-km over total veh-hours.
pub fn finalize_metrics(
    series: Vec<IntervalRecord>,
    dt_seconds: f64,
    freeflow_ttt_s: f64,
    veh_km: f64,
) -> EpisodeMetrics {
    let total_injected = series.last().map_or(0.0, |r| r.injected_cum);
    let total_completed: f64 = series.iter().map(|r| r.completed).sum();
    let cumulative_reward: f64 = series.iter().map(|r| r.reward).sum();
    let running_integral_s: f64 = series.iter().map(|r| r.running).sum::<f64>() * dt_seconds;

    let ttt_avg_s = (total_completed >= 1e-9).then(|| running_integral_s / total_completed);
    let delay = ttt_avg_s
        .filter(|_| freeflow_ttt_s > 0.0)
        .map(|ttt| (ttt - freeflow_ttt_s) / freeflow_ttt_s);
    let veh_hours = running_integral_s / 3600.0;
    let speed_avg_kmh = (veh_hours > 1e-12).then(|| veh_km / veh_hours);

    EpisodeMetrics {
        ttt_avg_s,
        delay,
        speed_avg_kmh,
        cumulative_reward,
        total_injected,
        total_completed,
        steps: series.len(),
        freeflow_ttt_s,
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u32, inj: f64, run: f64, com: f64) -> IntervalRecord {
        IntervalRecord {
            t,
            injected_cum: inj,
            running: run,
            completed: com,
            reward: 0.0,
            rates: vec![],
        }
    }

    #[test]
    fn single_vehicle_running_100s() {
        let mut series: Vec<IntervalRecord> = (0..99).map(|t| rec(t, 1.0, 1.0, 0.0)).collect();
        series.push(rec(99, 1.0, 0.0, 1.0));
        // 99 intervals with the vehicle running plus the completion interval.
        let m = finalize_metrics(series, 1.0, 50.0, 0.5);
        assert_eq!(m.ttt_avg_s, Some(99.0));
        assert!((m.delay.unwrap() - (99.0 - 50.0) / 50.0).abs() < 1e-12);
    }

    #[test]
    fn delay_is_gap_over_freeflow() {
        // TTT exactly twice free-flow gives delay 1.
        let series = vec![rec(0, 1.0, 1.0, 0.0), rec(1, 1.0, 1.0, 1.0)];
        let m = finalize_metrics(series, 50.0, 50.0, 0.0);
        assert_eq!(m.ttt_avg_s, Some(100.0));
        assert!((m.delay.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_completions_leaves_ratios_undefined() {
        let m = finalize_metrics(vec![rec(0, 5.0, 5.0, 0.0)], 1.0, 10.0, 1.0);
        assert_eq!(m.ttt_avg_s, None);
        assert_eq!(m.delay, None);
        assert_eq!(m.total_injected, 5.0);
    }

    #[test]
    fn completions_monotone_bookkeeping() {
        let series = vec![
            rec(0, 3.0, 3.0, 0.0),
            rec(1, 3.0, 2.0, 1.0),
            rec(2, 3.0, 0.0, 2.0),
        ];
        let m = finalize_metrics(series, 1.0, 1.0, 0.0);
        assert_eq!(m.total_completed, 3.0);
        let mut cum = 0.0;
        for r in &m.series {
            cum += r.completed;
            assert!((r.injected_cum - r.running - cum).abs() < 1e-12);
        }
    }
}
