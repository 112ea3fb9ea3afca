//! Optical attenuation of the underwater + free-space link.
//!
//! The channel model is pure linear attenuation: a water type maps wavelength
//! to dB/m, distance scales it, fixed system losses add on top, and the
//! resulting transmittance thins the photon number of each weak coherent
//! pulse. Scattering-induced temporal spread is not modeled; collection
//! effects live in the receiver configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::transmitter::EmissionRecord;

/// Supported signal/beacon wavelengths in nanometres.
pub const WAVELENGTH_SIGNAL_NM: u32 = 450;
pub const WAVELENGTH_SYNC_NM: u32 = 520;

/// Water classification by spectral attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaterType {
    JerlovI,
    JerlovII,
    JerlovIII1C,
    JerlovIII3C,
    /// The test-basin water the device parameters were calibrated against.
    Measured,
}

impl WaterType {
    pub const ALL: [WaterType; 5] = [
        WaterType::JerlovI,
        WaterType::JerlovII,
        WaterType::JerlovIII1C,
        WaterType::JerlovIII3C,
        WaterType::Measured,
    ];

    /// Config/CLI name.
    pub fn name(&self) -> &'static str {
        match self {
            WaterType::JerlovI => "jerlov_i",
            WaterType::JerlovII => "jerlov_ii",
            WaterType::JerlovIII1C => "jerlov_iii_1c",
            WaterType::JerlovIII3C => "jerlov_iii_3c",
            WaterType::Measured => "measured",
        }
    }
}

impl FromStr for WaterType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jerlov_i" | "jerlovi" | "i" => Ok(WaterType::JerlovI),
            "jerlov_ii" | "jerlovii" | "ii" => Ok(WaterType::JerlovII),
            "jerlov_iii_1c" | "jerloviii1c" | "iii_1c" => Ok(WaterType::JerlovIII1C),
            "jerlov_iii_3c" | "jerloviii3c" | "iii_3c" => Ok(WaterType::JerlovIII3C),
            "measured" => Ok(WaterType::Measured),
            other => Err(Error::Config(format!("unknown water type '{other}'"))),
        }
    }
}

/// Attenuation coefficient of the measured basin water at 450 nm, anchored by
/// the 30 m / 27 dB characterization.
pub const MEASURED_DB_PER_M_450: f64 = 0.9;

/// Jerlov type I at 450 nm, fixed by the 27 dB ~ 345 m equivalence.
pub const JERLOV_I_DB_PER_M_450: f64 = 27.0 / 345.0;

/// Jerlov type II at 450 nm, fixed by the 27 dB ~ 120 m equivalence.
pub const JERLOV_II_DB_PER_M_450: f64 = 27.0 / 120.0;

/// Per-water, per-wavelength attenuation table (dB/m), overridable from the
/// experiment config (`water.<name>.<wavelength> = <db_per_m>`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttenuationTable {
    entries: BTreeMap<(WaterType, u32), f64>,
}

impl Default for AttenuationTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        // The coastal-type brackets are placeholders at +/-15% around the
        // measured water; only the measured/JerlovI/JerlovII anchors are
        // calibrated. 520 nm defaults to the 450 nm value for every type:
        // it only drives the sync-detection probability, which is itself a
        // configurable input.
        let at_450 = [
            (WaterType::JerlovI, JERLOV_I_DB_PER_M_450),
            (WaterType::JerlovII, JERLOV_II_DB_PER_M_450),
            (WaterType::JerlovIII1C, MEASURED_DB_PER_M_450 * 0.85),
            (WaterType::JerlovIII3C, MEASURED_DB_PER_M_450 * 1.15),
            (WaterType::Measured, MEASURED_DB_PER_M_450),
        ];
        for (water, coeff) in at_450 {
            entries.insert((water, WAVELENGTH_SIGNAL_NM), coeff);
            entries.insert((water, WAVELENGTH_SYNC_NM), coeff);
        }
        Self { entries }
    }
}

impl AttenuationTable {
    /// Override (or add) one entry.
    pub fn set(&mut self, water: WaterType, wavelength_nm: u32, db_per_m: f64) -> Result<()> {
        if db_per_m <= 0.0 {
            return Err(Error::Config(format!(
                "attenuation for {}/{wavelength_nm} must be positive, got {db_per_m}",
                water.name()
            )));
        }
        self.entries.insert((water, wavelength_nm), db_per_m);
        Ok(())
    }

    pub fn db_per_m(&self, water: WaterType, wavelength_nm: u32) -> Result<f64> {
        self.entries
            .get(&(water, wavelength_nm))
            .copied()
            .ok_or(Error::UnsupportedWavelength {
                water,
                wavelength_nm,
            })
    }

    /// Channel attenuation in dB over `distance_m` of water.
    pub fn channel_loss_db(
        &self,
        water: WaterType,
        wavelength_nm: u32,
        distance_m: f64,
    ) -> Result<f64> {
        if distance_m < 0.0 {
            return Err(Error::NegativeDistance(distance_m));
        }
        Ok(self.db_per_m(water, wavelength_nm)? * distance_m)
    }

    /// Distance of water that produces `loss_db` of attenuation; inverse of
    /// [`AttenuationTable::channel_loss_db`].
    pub fn equivalent_distance(
        &self,
        water: WaterType,
        wavelength_nm: u32,
        loss_db: f64,
    ) -> Result<f64> {
        if loss_db < 0.0 {
            return Err(Error::NegativeLoss(loss_db));
        }
        Ok(loss_db / self.db_per_m(water, wavelength_nm)?)
    }

    /// Assemble the full link budget for a water channel plus fixed system losses.
    pub fn build_link(
        &self,
        water: WaterType,
        wavelength_nm: u32,
        distance_m: f64,
        system_db: f64,
    ) -> Result<LinkBudget> {
        if system_db < 0.0 {
            return Err(Error::NegativeLoss(system_db));
        }
        let channel_db = self.channel_loss_db(water, wavelength_nm, distance_m)?;
        Ok(LinkBudget::new(channel_db, system_db))
    }
}

/// End-to-end optical loss decomposition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkBudget {
    pub channel_db: f64,
    pub system_db: f64,
    pub total_db: f64,
    /// `10^(-total_db/10)`.
    pub transmittance: f64,
}

impl LinkBudget {
    pub fn new(channel_db: f64, system_db: f64) -> Self {
        let total_db = channel_db + system_db;
        Self {
            channel_db,
            system_db,
            total_db,
            transmittance: 10f64.powf(-total_db / 10.0),
        }
    }

    /// Lossless link.
    pub fn ideal() -> Self {
        Self::new(0.0, 0.0)
    }
}

/// Draw the photon number of one weak coherent pulse, `k ~ Poisson(mu)`.
pub fn draw_photon_number(mu: f64, rng: &mut RandomStream) -> u32 {
    debug_assert!(mu >= 0.0);
    if mu == 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mu).expect("mu > 0");
    poisson.sample(rng) as u32
}

/// Thin `photons` through a medium of transmittance `eta`: each photon
/// survives independently.
pub fn survive_photons(photons: u32, eta: f64, rng: &mut RandomStream) -> u32 {
    if photons == 0 {
        return 0;
    }
    if eta >= 1.0 {
        return photons;
    }
    let mut survivors = 0;
    for _ in 0..photons {
        if rng.random::<f64>() < eta {
            survivors += 1;
        }
    }
    survivors
}

/// Send one pulse through the link: draws the photon number from the pulse's
/// mean photon number and thins it by the link transmittance.
pub fn transmit(pulse: &EmissionRecord, link: &LinkBudget, rng: &mut RandomStream) -> u32 {
    let k = draw_photon_number(pulse.mu, rng);
    survive_photons(k, link.transmittance, rng)
}
