//! Borrowed bundle of network, devices and thresholds.

use crate::config::Thresholds;
use crate::device_dynamics::{self, DeviceSet};
use crate::error::{Error, Result};
use crate::grid_model::{self, PowerNetwork};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// One DAE `x' = f(x, y), 0 = g(x, y)`.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a, T: Real> {
    pub net: &'a PowerNetwork<T>,
    pub devices: &'a DeviceSet<T>,
    pub thr: &'a Thresholds,
}

impl<'a, T: Real> Model<'a, T> {
    pub fn new(net: &'a PowerNetwork<T>, devices: &'a DeviceSet<T>, thr: &'a Thresholds) -> Result<Self> {
        if net.n_dev() != devices.len() {
            return Err(Error::Dimension(format!(
                "network wires {} devices, device set has {}",
                net.n_dev(),
                devices.len()
            )));
        }
        Ok(Self { net, devices, thr })
    }

    pub fn nx(&self) -> usize {
        4 * self.devices.len()
    }

    pub fn ny(&self) -> usize {
        2 * self.net.n_bus()
    }

    pub fn f(&self, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
        device_dynamics::f_eval(x, y, self.devices, self.thr.eps_v)
    }

    pub fn g(&self, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
        grid_model::algebraic_residual(x, y, self.net, self.thr.eps_v)
    }

    pub fn dyg(&self, y: &DVector<T>) -> Result<DMatrix<T>> {
        grid_model::jacobian_y(y, self.net, self.thr.eps_v)
    }

    pub fn dxg(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        grid_model::jacobian_x(x, self.net)
    }

    pub fn fjac(&self, x: &DVector<T>, y: &DVector<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        device_dynamics::f_jacobian(x, y, self.devices, self.thr.eps_v)
    }

    /// Splits a stacked `z = [x; y]`.
    pub fn split(&self, z: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let nx = self.nx();
        (z.rows(0, nx).into_owned(), z.rows(nx, z.len() - nx).into_owned())
    }

    pub fn join(x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let mut z = DVector::zeros(x.len() + y.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), y.len()).copy_from(y);
        z
    }
}

/// Differential and algebraic state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<T: Real> {
    pub x: DVector<T>,
    pub y: DVector<T>,
}

impl<T: Real> SystemState<T> {
    pub fn new(x: DVector<T>, y: DVector<T>) -> Self {
        Self { x, y }
    }

    pub fn z(&self) -> DVector<T> {
        Model::join(&self.x, &self.y)
    }

    pub fn n_bus(&self) -> usize {
        self.y.len() / 2
    }

    pub fn vx(&self, bus: usize) -> T {
        self.y[bus]
    }

    pub fn vy(&self, bus: usize) -> T {
        self.y[self.n_bus() + bus]
    }

    pub fn vmag(&self, bus: usize) -> T {
        let (a, b) = (self.vx(bus), self.vy(bus));
        (a * a + b * b).sqrt()
    }
}
