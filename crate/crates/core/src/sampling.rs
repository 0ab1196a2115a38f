//! Finite-shot projective readout of population series.
//!
//! Each grid point is an independent binomial experiment: M shots against the
//! true probability, reported as k/M. Reproducibility matters more than raw
//! speed here, so the generator is counter-based: one ChaCha8 keyed by the
//! scenario seed, re-streamed per grid point. Point i of a run never shares
//! randomness with point j, and inserting or removing grid points elsewhere
//! does not reshuffle the draws.
//!
//! Differences are never sampled directly. The two rotated-probe branches are
//! sampled as separate experiments (streams 2i and 2i+1) and subtracted,
//! which is what a real measurement would do and what the variance metadata
//! assumes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::evolution::{difference_of, PopulationSeries, Provenance, SeriesMetadata};

/// Shot budget and RNG key for one sampled series.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShotSpec {
    pub shots_per_point: u64,
    pub rng_seed: u64,
}

impl ShotSpec {
    fn validate(&self) -> Result<()> {
        if self.shots_per_point == 0 {
            return Err(QpError::BadParameter("shots_per_point must be at least 1".into()));
        }
        Ok(())
    }
}

/// Replace each probability with a binomial frequency estimate k/M.
///
/// The input must be a plain population series of unitary, analytic or
/// Lindblad provenance; resampling already-sampled data or sampling a signed
/// difference directly is refused. Per-point variance estimates
/// `p~(1-p~)/M` ride along in the metadata (p~ is the add-one smoothed
/// frequency, so the estimate stays positive and usable as a fit weight even
/// when a point records 0 or M successes).
pub fn sample_series(series: &PopulationSeries, shots: &ShotSpec) -> Result<PopulationSeries> {
    sample_with_streams(series, shots, 1, 0)
}

/// Sample the two rotated-probe branches independently and subtract.
///
/// Point i draws from stream 2i for `plus` and 2i+1 for `minus`, so the two
/// branches are independent experiments sharing one seed.
pub fn sample_difference(
    plus: &PopulationSeries,
    minus: &PopulationSeries,
    shots: &ShotSpec,
) -> Result<PopulationSeries> {
    let sampled_plus = sample_with_streams(plus, shots, 2, 0)?;
    let sampled_minus = sample_with_streams(minus, shots, 2, 1)?;
    difference_of(&sampled_plus, &sampled_minus)
}

fn sample_with_streams(
    series: &PopulationSeries,
    shots: &ShotSpec,
    stride: u64,
    offset: u64,
) -> Result<PopulationSeries> {
    shots.validate()?;
    if series.provenance == Provenance::Sampled {
        return Err(QpError::BadProvenance("refusing to resample an already sampled series".into()));
    }
    if series.signed {
        return Err(QpError::BadProvenance(
            "sample the two population branches separately, not their difference".into(),
        ));
    }

    let m = shots.shots_per_point;
    let mut values = Vec::with_capacity(series.len());
    let mut variances = Vec::with_capacity(series.len());
    for (i, &p) in series.values.iter().enumerate() {
        let p = p.clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(shots.rng_seed);
        rng.set_stream(stride * i as u64 + offset);
        let dist = Binomial::new(m, p)
            .map_err(|e| QpError::BadParameter(format!("binomial draw failed: {e}")))?;
        let k = dist.sample(&mut rng);
        values.push(k as f64 / m as f64);
        let smoothed = (k + 1) as f64 / (m + 2) as f64;
        variances.push(smoothed * (1.0 - smoothed) / m as f64);
    }

    PopulationSeries::new(
        series.tau_grid.clone(),
        values,
        series.projector_label.clone(),
        Provenance::Sampled,
        false,
        SeriesMetadata {
            truncation: series.metadata.truncation.clone(),
            top_level_population: series.metadata.top_level_population,
            leakage_alarm: series.metadata.leakage_alarm,
            shots: Some(m),
            seed: Some(shots.rng_seed),
            variances: Some(variances),
        },
    )
}
