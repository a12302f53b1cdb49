//! Weight-space post-processing: tail stochastic weight averaging and
//! exponential moving averaging over parameter snapshots.

use crate::nn::ParamVector;
use crate::{CoreError, Result};

/// Running arithmetic mean of parameter snapshots. Snapshots are taken at
/// epoch ends during the averaging phase; the mean is updated incrementally
/// so no snapshot history is kept.
#[derive(Debug, Clone)]
pub struct SwaState {
    running_mean: ParamVector,
    count: usize,
}

impl SwaState {
    /// Starts with zero accumulated snapshots. `layout` only provides shapes.
    pub fn new(layout: &ParamVector) -> Self {
        SwaState {
            running_mean: layout.zeros_like(),
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// mean ← mean + (snapshot − mean)/(count + 1)
    pub fn accumulate(&mut self, snapshot: &ParamVector) -> Result<()> {
        if !self.running_mean.same_layout(snapshot) {
            return Err(CoreError::DimensionMismatch(
                "snapshot layout does not match the running average".into(),
            ));
        }
        self.count += 1;
        let k = self.count as f64;
        for (m, &s) in self
            .running_mean
            .values_mut()
            .iter_mut()
            .zip(snapshot.values())
        {
            *m += (s - *m) / k;
        }
        Ok(())
    }

    /// The averaged parameters; `None` before the first snapshot.
    pub fn mean(&self) -> Option<&ParamVector> {
        if self.count == 0 {
            None
        } else {
            Some(&self.running_mean)
        }
    }

    pub fn into_mean(self) -> Option<ParamVector> {
        if self.count == 0 {
            None
        } else {
            Some(self.running_mean)
        }
    }
}

/// Exponential moving average θ_avg ← a·θ_avg + (1−a)·θ_new with a fixed
/// forgetting factor. The first snapshot seeds the average directly.
#[derive(Debug, Clone)]
pub struct EmaState {
    avg: Option<ParamVector>,
    a: f64,
}

impl EmaState {
    pub fn new(a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(CoreError::InvalidArgument(
                "EMA forgetting factor must lie in [0, 1]".into(),
            ));
        }
        Ok(EmaState { avg: None, a })
    }

    pub fn update(&mut self, new: &ParamVector) -> Result<()> {
        match &mut self.avg {
            None => {
                self.avg = Some(new.clone());
            }
            Some(avg) => {
                if !avg.same_layout(new) {
                    return Err(CoreError::DimensionMismatch(
                        "snapshot layout does not match the moving average".into(),
                    ));
                }
                let a = self.a;
                for (m, &s) in avg.values_mut().iter_mut().zip(new.values()) {
                    *m = a * *m + (1.0 - a) * s;
                }
            }
        }
        Ok(())
    }

    pub fn average(&self) -> Option<&ParamVector> {
        self.avg.as_ref()
    }

    pub fn into_average(self) -> Option<ParamVector> {
        self.avg
    }
}
