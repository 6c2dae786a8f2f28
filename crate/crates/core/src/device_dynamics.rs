//! Synchronous machine and grid-forming converter dynamics `x' = f(x, y)`.
//!
//! State layout (block by variable): `x = [delta; omega; E; E_fd]`, each block
//! holding one entry per device. For a converter `E` is the internal voltage
//! `E_C` and `E_fd` is the virtual excitation `E_Cfd`.
//!
//! Both device types are an EMF `E` at angle `delta` behind a reactance
//! (`x'_d` or `x_l`) connected to terminal bus `k` (the k-th retained bus).
//! With `V_d = V_x sin(delta) - V_y cos(delta)` and
//! `V_q = V_x cos(delta) + V_y sin(delta)`:
//!
//! * `P_e = E V_d / x'`
//! * `I_d = (E - V_q) / x'`
//! * `Q_e = (E V_q - |V|^2) / x'`

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams<T> {
    pub m: T,
    pub d: T,
    pub td0: T,
    pub xd: T,
    pub xd_prime: T,
    pub ta: T,
    pub ka: T,
    pub vref: T,
    pub pm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GfmParams<T> {
    pub m: T,
    pub d: T,
    pub ki: T,
    pub tu: T,
    pub kq: T,
    pub pref: T,
    pub qref: T,
    pub vref: T,
    pub xl: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Device<T> {
    Machine(MachineParams<T>),
    Gfm(GfmParams<T>),
}

impl<T: Real> Device<T> {
    /// Reactance between the EMF and the terminal bus.
    pub fn x_internal(&self) -> T {
        match self {
            Device::Machine(p) => p.xd_prime,
            Device::Gfm(p) => p.xl,
        }
    }

    pub fn inertia(&self) -> T {
        match self {
            Device::Machine(p) => p.m,
            Device::Gfm(p) => p.m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        let ok = match self {
            Device::Machine(p) => {
                p.m > z && p.td0 > z && p.ta > z && p.xd_prime > z && p.xd >= p.xd_prime
            }
            Device::Gfm(p) => p.m > z && p.ki > z && p.tu > z && p.xl > z,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("device parameters out of range: {self:?}")))
        }
    }
}

/// Device records plus the synchronous speed.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSet<T> {
    pub devices: Vec<Device<T>>,
    /// rad/s
    pub omega0: T,
}

/// Index helpers for the block-by-variable layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_dev: usize,
}

impl StateLayout {
    pub fn delta(&self, k: usize) -> usize {
        k
    }
    pub fn omega(&self, k: usize) -> usize {
        self.n_dev + k
    }
    pub fn e(&self, k: usize) -> usize {
        2 * self.n_dev + k
    }
    pub fn efd(&self, k: usize) -> usize {
        3 * self.n_dev + k
    }
    pub fn len(&self) -> usize {
        4 * self.n_dev
    }
    pub fn is_empty(&self) -> bool {
        self.n_dev == 0
    }
    /// Column labels used in CSV output.
    pub fn names(&self, devices: &[impl DeviceKind]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.n_dev {
            out.push(format!("delta_{}", k + 1));
        }
        for k in 0..self.n_dev {
            out.push(format!("omega_{}", k + 1));
        }
        for (k, d) in devices.iter().enumerate() {
            out.push(if d.is_gfm() { format!("E_C_{}", k + 1) } else { format!("Eq_{}", k + 1) });
        }
        for (k, d) in devices.iter().enumerate() {
            out.push(if d.is_gfm() { format!("E_Cfd_{}", k + 1) } else { format!("E_fd_{}", k + 1) });
        }
        out
    }
}

pub trait DeviceKind {
    fn is_gfm(&self) -> bool;
}

impl<T> DeviceKind for Device<T> {
    fn is_gfm(&self) -> bool {
        matches!(self, Device::Gfm(_))
    }
}

impl<T: Real> DeviceSet<T> {
    pub fn new(devices: Vec<Device<T>>, omega0: T) -> Result<Self> {
        for d in &devices {
            d.validate()?;
        }
        Ok(Self { devices, omega0 })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout { n_dev: self.devices.len() }
    }

    pub fn x_internal(&self) -> Vec<T> {
        self.devices.iter().map(|d| d.x_internal()).collect()
    }
}

/// Terminal quantities of one device.
#[derive(Debug, Clone, Copy)]
pub struct Terminal<T> {
    pub vx: T,
    pub vy: T,
    pub vd: T,
    pub vq: T,
    pub vmag: T,
    pub pe: T,
    pub id: T,
    pub qe: T,
}

pub fn terminal<T: Real>(delta: T, e: T, vx: T, vy: T, xp: T) -> Terminal<T> {
    let (s, co) = (delta.sin(), delta.cos());
    let vd = vx * s - vy * co;
    let vq = vx * co + vy * s;
    let v2 = vx * vx + vy * vy;
    Terminal {
        vx,
        vy,
        vd,
        vq,
        vmag: v2.sqrt(),
        pe: e * vd / xp,
        id: (e - vq) / xp,
        qe: (e * vq - v2) / xp,
    }
}

fn check_dims<T: Real>(x: &DVector<T>, y: &DVector<T>, set: &DeviceSet<T>) -> Result<usize> {
    let nd = set.len();
    if x.len() != 4 * nd {
        return Err(Error::Dimension(format!("state length {} for {nd} devices", x.len())));
    }
    if !y.len().is_multiple_of(2) || y.len() / 2 < nd {
        return Err(Error::Dimension(format!("algebraic length {} for {nd} devices", y.len())));
    }
    Ok(y.len() / 2)
}

fn terminal_at<T: Real>(
    x: &DVector<T>,
    y: &DVector<T>,
    set: &DeviceSet<T>,
    k: usize,
    nb: usize,
    eps_v: f64,
) -> Result<Terminal<T>> {
    let l = set.layout();
    let t = terminal(x[l.delta(k)], x[l.e(k)], y[k], y[nb + k], set.devices[k].x_internal());
    if t.vmag < c(eps_v) {
        return Err(Error::VoltageCollapseGuard { bus: k, magnitude: t.vmag.as_f64() });
    }
    Ok(t)
}

/// Right-hand side of the device equations.
pub fn f_eval<T: Real>(x: &DVector<T>, y: &DVector<T>, set: &DeviceSet<T>, eps_v: f64) -> Result<DVector<T>> {
    let nb = check_dims(x, y, set)?;
    let l = set.layout();
    let mut f = DVector::zeros(l.len());
    for (k, dev) in set.devices.iter().enumerate() {
        let t = terminal_at(x, y, set, k, nb, eps_v)?;
        let w = x[l.omega(k)];
        let e = x[l.e(k)];
        let efd = x[l.efd(k)];
        f[l.delta(k)] = set.omega0 * w;
        match dev {
            Device::Machine(p) => {
                f[l.omega(k)] = (p.pm - t.pe - p.d * w) / p.m;
                f[l.e(k)] = (efd - e - (p.xd - p.xd_prime) * t.id) / p.td0;
                f[l.efd(k)] = (p.ka * (p.vref - t.vmag) - efd) / p.ta;
            }
            Device::Gfm(p) => {
                f[l.omega(k)] = (p.pref - t.pe - p.d * w) / p.m;
                f[l.e(k)] = (efd + p.kq * (p.qref - t.qe)) / p.ki;
                f[l.efd(k)] = (p.vref - t.vmag - efd) / p.tu;
            }
        }
    }
    Ok(f)
}

/// Analytic `(df/dx, df/dy)`.
pub fn f_jacobian<T: Real>(
    x: &DVector<T>,
    y: &DVector<T>,
    set: &DeviceSet<T>,
    eps_v: f64,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let nb = check_dims(x, y, set)?;
    let l = set.layout();
    let n = l.len();
    let mut fx = DMatrix::zeros(n, n);
    let mut fy = DMatrix::zeros(n, 2 * nb);
    for (k, dev) in set.devices.iter().enumerate() {
        let t = terminal_at(x, y, set, k, nb, eps_v)?;
        let delta = x[l.delta(k)];
        let e = x[l.e(k)];
        let (s, co) = (delta.sin(), delta.cos());
        let xp = dev.x_internal();
        let (ix, iy) = (k, nb + k);
        let (rd, rw, re, rf) = (l.delta(k), l.omega(k), l.e(k), l.efd(k));

        // electrical partials
        let pe_d = e * t.vq / xp;
        let pe_e = t.vd / xp;
        let pe_vx = e * s / xp;
        let pe_vy = -e * co / xp;
        let id_d = t.vd / xp;
        let id_e = T::one() / xp;
        let id_vx = -co / xp;
        let id_vy = -s / xp;
        let vm_vx = t.vx / t.vmag;
        let vm_vy = t.vy / t.vmag;
        let two = c::<T>(2.0);
        let qe_d = -e * t.vd / xp;
        let qe_e = t.vq / xp;
        let qe_vx = (e * co - two * t.vx) / xp;
        let qe_vy = (e * s - two * t.vy) / xp;

        fx[(rd, rw)] = set.omega0;
        match dev {
            Device::Machine(p) => {
                fx[(rw, rd)] = -pe_d / p.m;
                fx[(rw, rw)] = -p.d / p.m;
                fx[(rw, re)] = -pe_e / p.m;
                fy[(rw, ix)] = -pe_vx / p.m;
                fy[(rw, iy)] = -pe_vy / p.m;

                let dx = p.xd - p.xd_prime;
                fx[(re, rd)] = -dx * id_d / p.td0;
                fx[(re, re)] = (-T::one() - dx * id_e) / p.td0;
                fx[(re, rf)] = T::one() / p.td0;
                fy[(re, ix)] = -dx * id_vx / p.td0;
                fy[(re, iy)] = -dx * id_vy / p.td0;

                fx[(rf, rf)] = -T::one() / p.ta;
                fy[(rf, ix)] = -p.ka * vm_vx / p.ta;
                fy[(rf, iy)] = -p.ka * vm_vy / p.ta;
            }
            Device::Gfm(p) => {
                fx[(rw, rd)] = -pe_d / p.m;
                fx[(rw, rw)] = -p.d / p.m;
                fx[(rw, re)] = -pe_e / p.m;
                fy[(rw, ix)] = -pe_vx / p.m;
                fy[(rw, iy)] = -pe_vy / p.m;

                fx[(re, rd)] = -p.kq * qe_d / p.ki;
                fx[(re, re)] = -p.kq * qe_e / p.ki;
                fx[(re, rf)] = T::one() / p.ki;
                fy[(re, ix)] = -p.kq * qe_vx / p.ki;
                fy[(re, iy)] = -p.kq * qe_vy / p.ki;

                fx[(rf, rf)] = -T::one() / p.tu;
                fy[(rf, ix)] = -vm_vx / p.tu;
                fy[(rf, iy)] = -vm_vy / p.tu;
            }
        }
    }
    Ok((fx, fy))
}
