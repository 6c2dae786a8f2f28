use crate::config::Thresholds;
use crate::device_dynamics::DeviceSet;
use crate::error::{Error, Result};
use crate::grid_model::PowerNetwork;
use crate::model::{Model, SystemState};
use crate::scalar::Real;

/// Which of the three network topologies is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    PreFault,
    FaultOn,
    PostFault,
}

/// A fault study: three fully built networks, devices, timing and the
/// pre-fault equilibrium.
#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub name: String,
    pub pre_fault: PowerNetwork<T>,
    pub fault_on: PowerNetwork<T>,
    pub post_fault: PowerNetwork<T>,
    pub devices: DeviceSet<T>,
    /// s
    pub fault_start: T,
    /// s
    pub fault_duration: T,
    /// s
    pub t_end: T,
    /// s
    pub dt_max: T,
    /// Documentation only; already folded into the networks.
    pub constant_power_share: T,
    /// Pre-fault equilibrium.
    pub initial: SystemState<T>,
    pub thresholds: Thresholds,
    /// Human-readable bus labels of the retained buses.
    pub bus_labels: Vec<String>,
}

impl<T: Real> Scenario<T> {
    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(self.fault_start >= z
            && self.fault_duration >= z
            && self.fault_start + self.fault_duration <= self.t_end
            && self.dt_max > z)
        {
            return Err(Error::InvalidParameter(
                "need 0 <= fault_start <= fault_start + fault_duration <= t_end and dt_max > 0".into(),
            ));
        }
        let nb = self.pre_fault.n_bus();
        for n in [&self.fault_on, &self.post_fault] {
            if n.n_bus() != nb || n.n_dev() != self.pre_fault.n_dev() {
                return Err(Error::Dimension("fault networks differ in size from the pre-fault network".into()));
            }
        }
        Ok(())
    }

    pub fn network(&self, topo: Topology) -> &PowerNetwork<T> {
        match topo {
            Topology::PreFault => &self.pre_fault,
            Topology::FaultOn => &self.fault_on,
            Topology::PostFault => &self.post_fault,
        }
    }

    pub fn model(&self, topo: Topology) -> Model<'_, T> {
        Model {
            net: self.network(topo),
            devices: &self.devices,
            thr: &self.thresholds,
        }
    }

    /// True when a fixed voltage source pins the angle reference.
    pub fn has_reference(&self) -> bool {
        self.pre_fault.source.iter().any(|s| s.re != T::zero() || s.im != T::zero())
    }

    pub fn fault_end(&self) -> T {
        self.fault_start + self.fault_duration
    }

    /// Copy with a different fault duration (the networks are shared data).
    pub fn with_fault_duration(&self, duration: T) -> Self {
        let mut s = self.clone();
        s.fault_duration = duration;
        if s.fault_start + duration > s.t_end {
            s.t_end = s.fault_start + duration + (self.t_end - self.fault_end());
        }
        s
    }

    /// Copy in which the pre-fault network persists for the whole run.
    pub fn without_fault(&self) -> Self {
        let mut s = self.clone();
        s.fault_on = s.pre_fault.clone();
        s.post_fault = s.pre_fault.clone();
        s
    }
}
