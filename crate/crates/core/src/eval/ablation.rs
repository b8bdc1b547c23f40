//! Prototype-budget and retrieval-branch sweeps.

use crate::error::{Error, Result};
use crate::retrieval::{RetrievalConfig, RetrievalMode};

use super::report::MetricReport;

pub const KM_SWEEP: [usize; 5] = [0, 4, 8, 16, 32];
/// Prototypes drawn per local keyword in the sweep allocation.
pub const SWEEP_PER_KEYWORD: usize = 2;

/// Something that samples under a retrieval setting and scores the result.
pub trait SamplingPipeline {
    fn base_retrieval(&self) -> RetrievalConfig;
    fn evaluate(&mut self, retrieval: &RetrievalConfig) -> Result<MetricReport>;
}

/// `(k_t, k_v, n_kw, n_per) = (K/4, K/4, K/4, 2)`; `K = 0` disables retrieval.
pub fn km_allocation(km: usize, base: &RetrievalConfig) -> Result<RetrievalConfig> {
    if km % 4 != 0 {
        return Err(Error::NonDivisibleKm(km));
    }
    let q = km / 4;
    Ok(RetrievalConfig {
        km,
        k_t: q,
        k_v: q,
        n_kw: q,
        n_per: SWEEP_PER_KEYWORD,
        ..*base
    })
}

/// Metadata `ps_segment` is `empty` when no prototypes reached the condition.
fn flag_prototypes(report: &mut MetricReport, forced_empty: bool) {
    let empty = forced_empty || report.get("ps_len_mean") == Some(0.0);
    report.set_meta("ps_segment", if empty { "empty" } else { "populated" });
}

pub fn ablate_km<P: SamplingPipeline + ?Sized>(
    pipeline: &mut P,
    values: &[usize],
) -> Result<Vec<(usize, MetricReport)>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no K_m values given".into()));
    }
    let base = pipeline.base_retrieval();
    let configs = values
        .iter()
        .map(|&km| km_allocation(km, &base))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(values.len());
    for cfg in configs {
        let mut report = pipeline.evaluate(&cfg)?;
        report.set_meta("km", cfg.km.to_string());
        report.set_meta(
            "allocation",
            format!("k_t={} k_v={} n_kw={} n_per={}", cfg.k_t, cfg.k_v, cfg.n_kw, cfg.n_per),
        );
        flag_prototypes(&mut report, cfg.km == 0);
        out.push((cfg.km, report));
    }
    Ok(out)
}

pub fn ablate_retrieval<P: SamplingPipeline + ?Sized>(
    pipeline: &mut P,
    modes: &[RetrievalMode],
) -> Result<Vec<(RetrievalMode, MetricReport)>> {
    let base = pipeline.base_retrieval();
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut report = pipeline.evaluate(&mode.apply(&base))?;
        report.set_meta("mode", mode.name());
        flag_prototypes(&mut report, false);
        out.push((mode, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocations() {
        let base = RetrievalConfig::default();
        let a = km_allocation(16, &base).unwrap();
        assert_eq!((a.k_t, a.k_v, a.n_kw, a.n_per), (4, 4, 4, 2));
        let z = km_allocation(0, &base).unwrap();
        assert_eq!((z.km, z.k_t, z.k_v, z.n_kw), (0, 0, 0, 0));
        assert!(matches!(km_allocation(6, &base), Err(Error::NonDivisibleKm(6))));
        for km in KM_SWEEP {
            let c = km_allocation(km, &base).unwrap();
            assert!(c.k_t + c.k_v + c.n_kw * c.n_per <= km / 4 + km / 4 + km / 2);
        }
    }

    struct Recorder {
        seen: Vec<RetrievalConfig>,
    }

    impl SamplingPipeline for Recorder {
        fn base_retrieval(&self) -> RetrievalConfig {
            RetrievalConfig {
                seed: 42,
                ..RetrievalConfig::default()
            }
        }
        fn evaluate(&mut self, retrieval: &RetrievalConfig) -> Result<MetricReport> {
            self.seen.push(retrieval.clone());
            MetricReport::new().with("ps_len_mean", retrieval.km.min(3) as f64)
        }
    }

    #[test]
    fn km_sweep_runs_every_value_and_flags_empty() {
        let mut p = Recorder { seen: vec![] };
        let reports = ablate_km(&mut p, &KM_SWEEP).unwrap();
        assert_eq!(reports.len(), 5);
        assert_eq!(reports[0].1.meta["ps_segment"], "empty");
        assert_eq!(reports[3].1.meta["ps_segment"], "populated");
        assert!(p.seen.iter().all(|c| c.seed == 42));
        let mut p = Recorder { seen: vec![] };
        assert!(matches!(ablate_km(&mut p, &[4, 5]), Err(Error::NonDivisibleKm(5))));
        assert!(p.seen.is_empty());
    }

    #[test]
    fn retrieval_sweep_covers_modes() {
        let mut p = Recorder { seen: vec![] };
        let reports = ablate_retrieval(&mut p, &RetrievalMode::ALL).unwrap();
        let names: Vec<_> = reports.iter().map(|(_, r)| r.meta["mode"].clone()).collect();
        assert_eq!(names.len(), 5);
        assert_eq!(p.seen[4], p.base_retrieval());
    }
}
