//! Fault injector parameters.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel::SimTime;
use crate::level3::Site;

/// How transient transfer faults reach track transfers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferModel {
    /// Faults arrive as a Poisson process per site and corrupt the next
    /// transfer through that site.
    #[default]
    Armed,
    /// Each transfer is hit with probability rate × stage duration.
    Window,
}

impl TransferModel {
    pub fn name(self) -> &'static str {
        match self {
            TransferModel::Armed => "armed",
            TransferModel::Window => "window",
        }
    }
}

impl FromStr for TransferModel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "armed" => Ok(TransferModel::Armed),
            "window" => Ok(TransferModel::Window),
            o => Err(format!("`{o}` is not armed|window")),
        }
    }
}

/// All injector rates are per hour unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    /// Transients over both busses together.
    pub bus_per_h: f64,
    /// Share of bus transients landing on Bus 1.
    pub bus1_share: f64,
    /// Transients over all controller interfaces together.
    pub cci_per_h: f64,
    /// Share of interface transients on the channel/disk side.
    pub cci_chan_share: f64,
    pub cm_per_h: f64,
    pub disk_per_h: f64,
    /// Load-dependent errors per bit accessed.
    pub load_per_bit: f64,
    pub burst_mean_bits: f64,
    pub burst_sd_bits: f64,
    /// Per cache component (interface or memory card).
    pub perm_cache_per_h: f64,
    /// Per disk.
    pub perm_disk_per_h: f64,
    pub repair_mean_h: f64,
    pub transfer_model: TransferModel,
    pub p_escape: f64,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            bus_per_h: 100.0,
            bus1_share: 0.5,
            cci_per_h: 1.0,
            cci_chan_share: 0.5,
            cm_per_h: 1.0,
            disk_per_h: 1.0,
            load_per_bit: 1e-14,
            burst_mean_bits: 100.0,
            burst_sd_bits: 10.0,
            perm_cache_per_h: 1e-4,
            perm_disk_per_h: 1e-6,
            repair_mean_h: 72.0,
            transfer_model: TransferModel::Armed,
            p_escape: crate::codes::DEFAULT_P_ESCAPE,
        }
    }
}

impl FaultPlan {
    /// Every rate set to zero.
    pub fn none() -> Self {
        FaultPlan {
            bus_per_h: 0.0,
            cci_per_h: 0.0,
            cm_per_h: 0.0,
            disk_per_h: 0.0,
            load_per_bit: 0.0,
            perm_cache_per_h: 0.0,
            perm_disk_per_h: 0.0,
            ..FaultPlan::default()
        }
    }

    pub fn site_per_h(&self, site: Site) -> f64 {
        match site {
            Site::Bus1 => self.bus_per_h * self.bus1_share,
            Site::Bus2 => self.bus_per_h * (1.0 - self.bus1_share),
            Site::CciChan => self.cci_per_h * self.cci_chan_share,
            Site::CciMem => self.cci_per_h * (1.0 - self.cci_chan_share),
        }
    }

    /// Mean gap of a Poisson process with rate `per_h`, or `None` if off.
    pub fn mean_gap(per_h: f64) -> Option<SimTime> {
        (per_h > 0.0).then(|| SimTime::from_hours_f64(1.0 / per_h))
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("faults.bus_per_h", self.bus_per_h),
            ("faults.cci_per_h", self.cci_per_h),
            ("faults.cm_per_h", self.cm_per_h),
            ("faults.disk_per_h", self.disk_per_h),
            ("faults.load_per_bit", self.load_per_bit),
            ("faults.burst_sd_bits", self.burst_sd_bits),
            ("faults.perm_cache_per_h", self.perm_cache_per_h),
            ("faults.perm_disk_per_h", self.perm_disk_per_h),
        ];
        for (k, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::field(k, format!("{v} must be a finite value ≥ 0")));
            }
        }
        for (k, v) in [
            ("faults.bus1_share", self.bus1_share),
            ("faults.cci_chan_share", self.cci_chan_share),
            ("faults.p_escape", self.p_escape),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::field(k, format!("{v} outside [0,1]")));
            }
        }
        if self.burst_mean_bits.is_nan() || self.burst_mean_bits < 1.0 {
            return Err(Error::field("faults.burst_mean_bits", "must be ≥ 1"));
        }
        if self.repair_mean_h.is_nan() || self.repair_mean_h <= 0.0 {
            return Err(Error::field("faults.repair_mean_h", "must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bus_rate_is_split() {
        let p = FaultPlan::default();
        assert_eq!(p.site_per_h(Site::Bus1) + p.site_per_h(Site::Bus2), 100.0);
        assert_eq!(p.site_per_h(Site::CciChan), 0.5);
    }

    #[test]
    fn validation() {
        assert!(FaultPlan::default().validate().is_ok());
        let p = FaultPlan {
            cm_per_h: -1.0,
            ..FaultPlan::default()
        };
        assert!(p.validate().is_err());
        assert_eq!(FaultPlan::mean_gap(0.0), None);
        assert_eq!(FaultPlan::mean_gap(2.0), Some(SimTime::from_secs(1_800)));
    }
}
