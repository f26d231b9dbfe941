//! First-order radio energy model.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Electronics energy per bit, for both transmit and receive.
    pub e_elec_nj_per_bit: f64,
    /// Amplifier energy per bit per km^2 of link distance.
    pub e_amp_pj_per_bit_km2: f64,
    pub e_sense_uj: f64,
    /// Power drawn while awake and not transmitting.
    pub p_idle_uw: f64,
    pub battery_mj: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            e_elec_nj_per_bit: 50.0,
            e_amp_pj_per_bit_km2: 100.0,
            e_sense_uj: 20.0,
            p_idle_uw: 30.0,
            battery_mj: 2.0e7,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.e_elec_nj_per_bit,
            self.e_amp_pj_per_bit_km2,
            self.e_sense_uj,
            self.p_idle_uw,
            self.battery_mj,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err("energy constants must be non-negative".into());
        }
        Ok(())
    }

    pub fn tx_mj(&self, bytes: usize, distance_km: f64) -> f64 {
        let bits = (bytes * 8) as f64;
        bits * self.e_elec_nj_per_bit * 1e-6
            + bits * self.e_amp_pj_per_bit_km2 * distance_km * distance_km * 1e-9
    }

    pub fn rx_mj(&self, bytes: usize) -> f64 {
        (bytes * 8) as f64 * self.e_elec_nj_per_bit * 1e-6
    }

    pub fn idle_mj(&self, seconds: u64) -> f64 {
        self.p_idle_uw * seconds as f64 * 1e-3
    }

    pub fn sense_mj(&self) -> f64 {
        self.e_sense_uj * 1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyEvent {
    Tx { bytes: usize, distance_km: f64 },
    Rx { bytes: usize },
    Idle { seconds: u64 },
    Sense,
}

/// Cumulative consumption per category, millijoules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub tx_mj: f64,
    pub rx_mj: f64,
    pub idle_mj: f64,
    pub sensing_mj: f64,
}

impl EnergyLedger {
    pub fn total_mj(&self) -> f64 {
        self.tx_mj + self.rx_mj + self.idle_mj + self.sensing_mj
    }

    pub fn radio_mj(&self) -> f64 {
        self.tx_mj + self.rx_mj
    }

    /// True when no field of `self` is below the same field of `earlier`.
    pub fn dominates(&self, earlier: &EnergyLedger) -> bool {
        self.tx_mj >= earlier.tx_mj
            && self.rx_mj >= earlier.rx_mj
            && self.idle_mj >= earlier.idle_mj
            && self.sensing_mj >= earlier.sensing_mj
    }
}

/// Adds the cost of `event` to `ledger` and returns the amount charged.
pub fn charge_energy(ledger: &mut EnergyLedger, params: &EnergyParams, event: EnergyEvent) -> f64 {
    match event {
        EnergyEvent::Tx { bytes, distance_km } => {
            let e = params.tx_mj(bytes, distance_km);
            ledger.tx_mj += e;
            e
        }
        EnergyEvent::Rx { bytes } => {
            let e = params.rx_mj(bytes);
            ledger.rx_mj += e;
            e
        }
        EnergyEvent::Idle { seconds } => {
            let e = params.idle_mj(seconds);
            ledger.idle_mj += e;
            e
        }
        EnergyEvent::Sense => {
            let e = params.sense_mj();
            ledger.sensing_mj += e;
            e
        }
    }
}
