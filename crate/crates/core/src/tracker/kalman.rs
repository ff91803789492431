//! Constant-velocity Kalman filter over `[cx, cy, cz, vx, vy, vz]`.

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::geometry::EgoPose;

pub type State = SVector<f64, 6>;
pub type Covariance = SMatrix<f64, 6, 6>;

/// Eigenvalue floor below which a covariance counts as not PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Kalman {
    pub mean: State,
    pub cov: Covariance,
}

impl Kalman {
    /// Filter at `position` with zero velocity.
    pub fn new(position: [f64; 3], pos_var: f64, vel_var: f64) -> Self {
        let mean = State::new(position[0], position[1], position[2], 0.0, 0.0, 0.0);
        let mut cov = Covariance::zeros();
        for k in 0..3 {
            cov[(k, k)] = pos_var;
            cov[(k + 3, k + 3)] = vel_var;
        }
        Self { mean, cov }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.mean[3], self.mean[4], self.mean[5]]
    }

    /// `x ← F x`, `P ← F P Fᵀ + Q` with `Q = diag(q_pos·I, q_vel·I)`.
    pub fn predict(&mut self, dt: f64, q_pos: f64, q_vel: f64) {
        let mut f = Covariance::identity();
        for k in 0..3 {
            f[(k, k + 3)] = dt;
        }
        self.mean = f * self.mean;
        self.cov = f * self.cov * f.transpose();
        for k in 0..3 {
            self.cov[(k, k)] += q_pos;
            self.cov[(k + 3, k + 3)] += q_vel;
        }
    }

    /// Observes the position with isotropic noise `r`. Uses the Joseph
    /// form; returns `true` when the result had to be repaired to stay
    /// symmetric PSD.
    pub fn update(&mut self, z: [f64; 3], r: f64) -> bool {
        let h = SMatrix::<f64, 3, 6>::from_fn(|i, j| if i == j { 1.0 } else { 0.0 });
        let s = h * self.cov * h.transpose() + Matrix3::identity() * r;
        let Some(s_inv) = s.try_inverse() else {
            return self.repair();
        };
        let k = self.cov * h.transpose() * s_inv;
        let innovation = SVector::<f64, 3>::from(z) - h * self.mean;
        self.mean += k * innovation;
        let ikh = Covariance::identity() - k * h;
        self.cov = ikh * self.cov * ikh.transpose() + k * (Matrix3::identity() * r) * k.transpose();
        self.repair()
    }

    /// Re-expresses the state in the frame of `to`: positions move with
    /// the pose change, velocities and covariance rotate.
    pub fn compensate(&mut self, from: &EgoPose, to: &EgoPose) {
        let p = to.to_local(from.to_world(self.position()));
        let v = from.rotate_into(to, self.velocity());
        self.mean = State::new(p[0], p[1], p[2], v[0], v[1], v[2]);
        let (s, c) = (from.yaw - to.yaw).sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let mut t = Covariance::zeros();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        t.fixed_view_mut::<3, 3>(3, 3).copy_from(&rot);
        self.cov = t * self.cov * t.transpose();
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.symmetric_eigenvalues().min()
    }

    pub fn asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).amax()
    }

    /// Symmetrises the covariance and clamps negative eigenvalues to zero
    /// when it is not PSD. Returns whether eigenvalues were clamped.
    fn repair(&mut self) -> bool {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
        let eig = self.cov.symmetric_eigen();
        if eig.eigenvalues.min() >= -PSD_TOLERANCE {
            return false;
        }
        let clamped = eig.eigenvalues.map(|v| v.max(0.0));
        self.cov = eig.eigenvectors * Covariance::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
        true
    }
}
