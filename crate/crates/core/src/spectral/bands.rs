use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint, ordered eigenpair index ranges covering `[0, k_eig)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumBands {
    pub ranges: Vec<Range<usize>>,
}

impl SpectrumBands {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn k_eig(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn full(k_eig: usize) -> Self {
        SpectrumBands {
            ranges: vec![0..k_eig],
        }
    }
}

/// Boundaries `r(i) = round(i * k_eig / N)` with halves rounded up, computed
/// in integers so no boundary depends on floating point.
pub fn split_spectrum(k_eig: usize, levels: usize) -> Result<SpectrumBands> {
    if levels == 0 || k_eig < levels {
        return Err(Error::InvalidArgument(format!(
            "cannot split {k_eig} eigenpairs into {levels} bands"
        )));
    }
    let r = |i: usize| (2 * i * k_eig + levels) / (2 * levels);
    Ok(SpectrumBands {
        ranges: (0..levels).map(|i| r(i)..r(i + 1)).collect(),
    })
}
