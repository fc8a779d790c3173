//! Simplified 8-DOF quadruped: a floating trunk with four two-link sagittal
//! legs and penalty-based ground contact.
//!
//! Fidelity boundary: the mass matrix is diagonal. Leg masses are lumped
//! into the trunk for translation and into a constant effective inertia per
//! joint for rotation. Foot contact forces act on the trunk (force and
//! moment) and on the joints through the leg Jacobian transpose. All motors
//! are trunk mounted, so every joint torque reacts on the trunk about the
//! hip pitch axis; this keeps total momentum exact in free flight.
//!
//! Joint order is `[thigh FR, FL, RR, RL, calf FR, FL, RR, RL]`. A thigh or
//! calf angle of zero points the link straight down; positive angles rotate
//! about the body `+y` axis (foot moves backward).

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpg::NUM_LEGS;
use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 8;

pub fn thigh_index(leg: usize) -> usize {
    leg
}

pub fn calf_index(leg: usize) -> usize {
    NUM_LEGS + leg
}

/// Physical parameters of the simulated robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    pub trunk_mass: f64,
    /// Principal moments of the trunk about its center of mass, kg m^2.
    pub trunk_inertia: [f64; 3],
    pub trunk_half_extents: [f64; 3],
    /// Hip positions in the trunk frame, order `[FR, FL, RR, RL]`.
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub thigh_length: f64,
    pub calf_length: f64,
    pub thigh_mass: f64,
    pub calf_mass: f64,
    /// Knee bending direction per leg: `1` puts a bent foot ahead of the hip,
    /// `-1` behind it.
    pub knee_directions: [f64; NUM_LEGS],
    /// Geometric thigh angle at joint zero. The defaults put each foot under
    /// its hip at the nominal knee bend.
    pub thigh_zero_offsets: [f64; NUM_LEGS],
    /// Reflected rotor inertia added to every joint, kg m^2.
    pub joint_armature: f64,
    pub thigh_limits: [f64; 2],
    pub calf_limits: [f64; 2],
    pub nominal_thigh: f64,
    pub nominal_calf: f64,
    pub torque_limit: f64,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coefficient: f64,
    pub friction_velocity_eps: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let m = 8.0;
        let [hx, hy, hz]: [f64; 3] = [0.28, 0.12, 0.06];
        Self {
            trunk_mass: m,
            trunk_inertia: [
                m / 3.0 * (hy * hy + hz * hz),
                m / 3.0 * (hx * hx + hz * hz),
                m / 3.0 * (hx * hx + hy * hy),
            ],
            trunk_half_extents: [hx, hy, hz],
            hip_offsets: [
                [0.2, -0.15, 0.0],
                [0.2, 0.15, 0.0],
                [-0.2, -0.15, 0.0],
                [-0.2, 0.15, 0.0],
            ],
            thigh_length: 0.25,
            calf_length: 0.25,
            thigh_mass: 0.5,
            calf_mass: 0.5,
            knee_directions: [1.0, 1.0, -1.0, -1.0],
            thigh_zero_offsets: [0.2, 0.2, -0.2, -0.2],
            joint_armature: 0.02,
            thigh_limits: [-1.2, 1.2],
            calf_limits: [-0.8, 0.0],
            nominal_thigh: 0.0,
            nominal_calf: -0.4,
            torque_limit: 20.0,
            gravity: 9.81,
            contact_stiffness: 5000.0,
            contact_damping: 100.0,
            friction_coefficient: 0.8,
            friction_velocity_eps: 0.01,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("trunk_mass", self.trunk_mass),
            ("thigh_length", self.thigh_length),
            ("calf_length", self.calf_length),
            ("thigh_mass", self.thigh_mass),
            ("calf_mass", self.calf_mass),
            ("torque_limit", self.torque_limit),
            ("contact_stiffness", self.contact_stiffness),
            ("friction_velocity_eps", self.friction_velocity_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.trunk_inertia.iter().any(|&i| !(i > 0.0 && i.is_finite())) {
            return Err(Error::Config("trunk_inertia entries must be positive".into()));
        }
        for (name, [lo, hi]) in [("thigh_limits", self.thigh_limits), ("calf_limits", self.calf_limits)] {
            if !(lo < hi) {
                return Err(Error::Config(format!("{name} must satisfy lo < hi")));
            }
        }
        if self.knee_directions.iter().any(|d| d.abs() != 1.0) {
            return Err(Error::Config("knee_directions entries must be 1 or -1".into()));
        }
        if self.joint_armature < 0.0 || self.contact_damping < 0.0 || self.friction_coefficient < 0.0 {
            return Err(Error::Config("armature, damping and friction must be non-negative".into()));
        }
        Ok(())
    }

    /// Trunk plus all leg point masses.
    pub fn total_mass(&self) -> f64 {
        self.trunk_mass + NUM_LEGS as f64 * (self.thigh_mass + self.calf_mass)
    }

    /// Constant effective inertia seen by joint `j`.
    pub fn joint_inertia(&self, j: usize) -> f64 {
        let (lt, lc) = (self.thigh_length, self.calf_length);
        if j < NUM_LEGS {
            self.joint_armature
                + self.thigh_mass * (0.5 * lt).powi(2)
                + self.calf_mass * (lt * lt + (0.5 * lc).powi(2))
        } else {
            self.joint_armature + self.calf_mass * (0.5 * lc).powi(2)
        }
    }

    pub fn joint_limits(&self, j: usize) -> [f64; 2] {
        if j < NUM_LEGS {
            self.thigh_limits
        } else {
            self.calf_limits
        }
    }

    pub fn nominal_joint_angles(&self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|j| if j < NUM_LEGS { self.nominal_thigh } else { self.nominal_calf })
    }

    /// Rotational inertia of the lumped body: the trunk plus every leg point
    /// mass frozen at the nominal pose.
    fn inertia_body(&self) -> Matrix3<f64> {
        let mut inertia = Matrix3::from_diagonal(&Vector3::from(self.trunk_inertia));
        for leg in 0..NUM_LEGS {
            let th = self.nominal_thigh + self.thigh_zero_offsets[leg];
            let hip = Vector3::from(self.hip_offsets[leg]);
            let knee = hip + self.thigh_length * Vector3::new(-th.sin(), 0.0, -th.cos());
            let (foot, _, _) = self.leg_kinematics(leg, self.nominal_thigh, self.nominal_calf);
            let foot = hip + foot;
            for (m, r) in [(self.thigh_mass, 0.5 * (hip + knee)), (self.calf_mass, 0.5 * (knee + foot))] {
                inertia += m * (Matrix3::identity() * r.norm_squared() - r * r.transpose());
            }
        }
        inertia
    }

    fn inertia_body_inv(&self) -> Matrix3<f64> {
        self.inertia_body().try_inverse().expect("inertia is positive definite")
    }

    /// Foot position relative to the hip and the two Jacobian columns, body frame.
    fn leg_kinematics(&self, leg: usize, thigh: f64, calf: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (l1, l2) = (self.thigh_length, self.calf_length);
        let dir = self.knee_directions[leg];
        let thigh = thigh + self.thigh_zero_offsets[leg];
        let knee_ang = thigh + dir * calf;
        let foot = Vector3::new(-l1 * thigh.sin() - l2 * knee_ang.sin(), 0.0, -l1 * thigh.cos() - l2 * knee_ang.cos());
        let d_thigh = Vector3::new(-l1 * thigh.cos() - l2 * knee_ang.cos(), 0.0, l1 * thigh.sin() + l2 * knee_ang.sin());
        let d_calf = Vector3::new(-l2 * knee_ang.cos(), 0.0, l2 * knee_ang.sin()) * dir;
        (foot, d_thigh, d_calf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: [f64; NUM_JOINTS],
    pub kd: [f64; NUM_JOINTS],
}

impl PdGains {
    pub fn uniform(kp: f64, kd: f64) -> Result<Self> {
        if !(kp >= 0.0 && kd >= 0.0) {
            return Err(Error::Config(format!("PD gains must be non-negative (kp={kp}, kd={kd})")));
        }
        Ok(Self {
            kp: [kp; NUM_JOINTS],
            kd: [kd; NUM_JOINTS],
        })
    }
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: [50.0; NUM_JOINTS],
            kd: [0.5; NUM_JOINTS],
        }
    }
}

/// Full kinematic state of the robot. Foot quantities and contact flags are
/// derived from the generalized coordinates and always kept consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    /// World frame.
    pub base_linear_velocity: Vector3<f64>,
    /// World frame.
    pub base_angular_velocity: Vector3<f64>,
    pub joint_angles: [f64; NUM_JOINTS],
    pub joint_velocities: [f64; NUM_JOINTS],
    pub foot_positions: [Vector3<f64>; NUM_LEGS],
    pub foot_velocities: [Vector3<f64>; NUM_LEGS],
    pub contacts: [bool; NUM_LEGS],
    /// World `+z` expressed in the body frame; `(0, 0, 1)` when upright.
    pub gravity_axis: Vector3<f64>,
}

/// Per-foot forward kinematics result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootKinematics {
    pub position: Vector3<f64>,
    /// `(x, y)` components of the foot velocity.
    pub tangential_velocity: Vector2<f64>,
    /// `z` component of the foot velocity.
    pub vertical_velocity: f64,
}

impl RobotState {
    /// Builds a state from generalized coordinates and velocities.
    pub fn from_coordinates(
        model: &RobotModel,
        base_position: Vector3<f64>,
        base_orientation: UnitQuaternion<f64>,
        base_linear_velocity: Vector3<f64>,
        base_angular_velocity: Vector3<f64>,
        joint_angles: [f64; NUM_JOINTS],
        joint_velocities: [f64; NUM_JOINTS],
    ) -> Self {
        let mut s = Self {
            base_position,
            base_orientation,
            base_linear_velocity,
            base_angular_velocity,
            joint_angles,
            joint_velocities,
            foot_positions: [Vector3::zeros(); NUM_LEGS],
            foot_velocities: [Vector3::zeros(); NUM_LEGS],
            contacts: [false; NUM_LEGS],
            gravity_axis: Vector3::z(),
        };
        s.refresh_kinematics(model);
        s
    }

    fn refresh_kinematics(&mut self, model: &RobotModel) {
        let rot = self.base_orientation.to_rotation_matrix();
        for leg in 0..NUM_LEGS {
            let (ti, ci) = (thigh_index(leg), calf_index(leg));
            let (rel, d_thigh, d_calf) = model.leg_kinematics(leg, self.joint_angles[ti], self.joint_angles[ci]);
            let r_body = Vector3::from(model.hip_offsets[leg]) + rel;
            let r_world = rot * r_body;
            let joint_vel = rot * (d_thigh * self.joint_velocities[ti] + d_calf * self.joint_velocities[ci]);
            self.foot_positions[leg] = self.base_position + r_world;
            self.foot_velocities[leg] =
                self.base_linear_velocity + self.base_angular_velocity.cross(&r_world) + joint_vel;
            self.contacts[leg] = self.foot_positions[leg].z <= 0.0;
        }
        self.gravity_axis = rot.inverse() * Vector3::z();
    }

    pub fn foot(&self, leg: usize) -> FootKinematics {
        let v = self.foot_velocities[leg];
        FootKinematics {
            position: self.foot_positions[leg],
            tangential_velocity: Vector2::new(v.x, v.y),
            vertical_velocity: v.z,
        }
    }

    pub fn contact_flags(&self) -> [u8; NUM_LEGS] {
        self.contacts.map(u8::from)
    }

    /// `(roll, pitch, yaw)` in radians.
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        self.base_orientation.euler_angles()
    }

    /// Base velocity rotated into the heading (yaw-only) frame.
    pub fn heading_linear_velocity(&self) -> Vector3<f64> {
        let (_, _, yaw) = self.euler_angles();
        let (s, c) = yaw.sin_cos();
        let v = self.base_linear_velocity;
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    pub fn forward_velocity(&self) -> f64 {
        self.heading_linear_velocity().x
    }

    pub fn body_linear_velocity(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&self.base_linear_velocity)
    }

    pub fn body_angular_velocity(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&self.base_angular_velocity)
    }

    pub fn is_finite(&self) -> bool {
        self.base_position.iter().all(|x| x.is_finite())
            && self.base_orientation.coords.iter().all(|x| x.is_finite())
            && self.base_linear_velocity.iter().all(|x| x.is_finite())
            && self.base_angular_velocity.iter().all(|x| x.is_finite())
            && self.joint_angles.iter().all(|x| x.is_finite())
            && self.joint_velocities.iter().all(|x| x.is_finite())
    }

    /// Linear momentum of the lumped system.
    pub fn linear_momentum(&self, model: &RobotModel) -> Vector3<f64> {
        self.base_linear_velocity * model.total_mass()
    }

    /// Angular momentum about the trunk center: trunk spin plus joint rotors.
    pub fn angular_momentum(&self, model: &RobotModel) -> Vector3<f64> {
        let rot = self.base_orientation.to_rotation_matrix();
        let inertia_world = rot.matrix() * model.inertia_body() * rot.matrix().transpose();
        let axis = rot * Vector3::y();
        let rotors: f64 = (0..NUM_JOINTS)
            .map(|j| model.joint_inertia(j) * self.joint_velocities[j])
            .sum();
        inertia_world * self.base_angular_velocity + axis * rotors
    }

    pub const CSV_HEADER: [&'static str; 27] = [
        "time", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz",
        "q0", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "contact_fr", "contact_fl", "contact_rr",
        "contact_rl", "forward_velocity",
    ];

    /// One CSV row of the state snapshot; columns match [`Self::CSV_HEADER`].
    pub fn csv_record(&self, time: f64) -> Vec<String> {
        let q = self.base_orientation.quaternion();
        let mut row = vec![time];
        row.extend(self.base_position.iter());
        row.extend([q.w, q.i, q.j, q.k]);
        row.extend(self.base_linear_velocity.iter());
        row.extend(self.base_angular_velocity.iter());
        row.extend(self.joint_angles);
        let mut out: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.extend(self.contacts.iter().map(|&c| u8::from(c).to_string()));
        out.push(self.forward_velocity().to_string());
        out
    }
}

/// Standing state at nominal joint angles with each joint perturbed
/// uniformly by at most `perturbation` rad. The trunk is placed so that every
/// foot is on the ground at roughly static penetration depth.
pub fn reset(model: &RobotModel, seed: u64, perturbation: f64) -> RobotState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = model.nominal_joint_angles();
    if perturbation > 0.0 {
        for (j, qj) in q.iter_mut().enumerate() {
            let [lo, hi] = model.joint_limits(j);
            *qj = (*qj + rng.random_range(-perturbation..=perturbation)).clamp(lo, hi);
        }
    }
    let sink = model.total_mass() * model.gravity.max(0.0) / (NUM_LEGS as f64 * model.contact_stiffness);
    // the highest foot sits at static penetration depth, the others deeper
    let highest = (0..NUM_LEGS)
        .map(|leg| {
            let (rel, _, _) = model.leg_kinematics(leg, q[thigh_index(leg)], q[calf_index(leg)]);
            model.hip_offsets[leg][2] + rel.z
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let height = -highest - sink;
    RobotState::from_coordinates(
        model,
        Vector3::new(0.0, 0.0, height),
        UnitQuaternion::identity(),
        Vector3::zeros(),
        Vector3::zeros(),
        q,
        [0.0; NUM_JOINTS],
    )
}

/// Proportional-derivative joint torques, clamped to the motor limit.
pub fn pd_torque(
    target: &[f64; NUM_JOINTS],
    state: &RobotState,
    gains: &PdGains,
    torque_limit: f64,
) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| {
        let tau = gains.kp[j] * (target[j] - state.joint_angles[j]) - gains.kd[j] * state.joint_velocities[j];
        tau.clamp(-torque_limit, torque_limit)
    })
}

/// Joint torques that hold the robot up at angles `q` when every foot carries
/// an equal share of its weight.
pub fn standing_torques(model: &RobotModel, q: &[f64; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
    let load = Vector3::new(0.0, 0.0, model.total_mass() * model.gravity / NUM_LEGS as f64);
    let mut tau = [0.0; NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        let (ti, ci) = (thigh_index(leg), calf_index(leg));
        let (_, d_thigh, d_calf) = model.leg_kinematics(leg, q[ti], q[ci]);
        tau[ti] = -d_thigh.dot(&load);
        tau[ci] = -d_calf.dot(&load);
    }
    tau
}

/// Forward kinematics of every foot.
pub fn foot_kinematics(model: &RobotModel, state: &RobotState) -> [FootKinematics; NUM_LEGS] {
    let mut fresh = state.clone();
    fresh.refresh_kinematics(model);
    std::array::from_fn(|leg| fresh.foot(leg))
}

/// Spring-damper normal force on one foot, zero above the ground.
fn normal_force(model: &RobotModel, position: &Vector3<f64>, velocity: &Vector3<f64>) -> f64 {
    if position.z > 0.0 {
        return 0.0;
    }
    (model.contact_stiffness * (-position.z) - model.contact_damping * velocity.z).max(0.0)
}

/// A foot touching the ground during one step.
struct Contact {
    leg: usize,
    /// Foot position relative to the trunk center, world frame.
    r: Vector3<f64>,
    d_thigh: Vector3<f64>,
    d_calf: Vector3<f64>,
    normal: f64,
}

/// Change of each contact's tangential foot velocity over one step caused by
/// tangential forces `f` (two entries per contact).
fn slip_response(
    model: &RobotModel,
    contacts: &[Contact],
    f: &[f64],
    inertia_world_inv: &Matrix3<f64>,
    pitch_axis: &Vector3<f64>,
    dt: f64,
) -> Vec<f64> {
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    let mut rotor = 0.0;
    let mut joint = Vec::with_capacity(contacts.len());
    for (k, c) in contacts.iter().enumerate() {
        let fk = Vector3::new(f[2 * k], f[2 * k + 1], 0.0);
        force += fk;
        moment += c.r.cross(&fk);
        let (lt, lc) = (c.d_thigh.dot(&fk), c.d_calf.dot(&fk));
        rotor += lt + lc;
        joint.push((
            dt * lt / model.joint_inertia(thigh_index(c.leg)),
            dt * lc / model.joint_inertia(calf_index(c.leg)),
        ));
    }
    let dv = force * (dt / model.total_mass());
    let dw = inertia_world_inv * (moment - pitch_axis * rotor) * dt;
    let mut out = Vec::with_capacity(2 * contacts.len());
    for (c, (dqt, dqc)) in contacts.iter().zip(joint) {
        let d = dv + dw.cross(&c.r) + c.d_thigh * dqt + c.d_calf * dqc;
        out.push(d.x);
        out.push(d.y);
    }
    out
}

/// Tangential contact forces from the slip each foot would reach without
/// friction.
///
/// Forces are the ones that stop every foot within the step, found by
/// projected Gauss-Seidel on the coupled response, with each foot limited to
/// the regularized Coulomb bound `mu * N * tanh(|slip| / eps)`.
fn friction_forces(
    model: &RobotModel,
    contacts: &[Contact],
    slip: &[f64],
    inertia_world_inv: &Matrix3<f64>,
    pitch_axis: &Vector3<f64>,
    dt: f64,
) -> Vec<f64> {
    let n = slip.len();
    let mut w = vec![0.0; n * n];
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = slip_response(model, contacts, &unit, inertia_world_inv, pitch_axis, dt);
        for i in 0..n {
            w[i * n + j] = col[i];
        }
        unit[j] = 0.0;
    }
    let limits: Vec<f64> = contacts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let speed = slip[2 * k].hypot(slip[2 * k + 1]);
            model.friction_coefficient * c.normal * (speed / model.friction_velocity_eps).tanh()
        })
        .collect();
    let mut f = vec![0.0; n];
    for _ in 0..FRICTION_SWEEPS {
        for (k, &limit) in limits.iter().enumerate() {
            let (a, b) = (2 * k, 2 * k + 1);
            let mut r = [slip[a], slip[b]];
            for (i, ri) in [a, b].into_iter().zip(&mut r) {
                *ri += (0..n).map(|j| w[i * n + j] * f[j]).sum::<f64>();
            }
            // solve the 2x2 diagonal block for the force that zeroes this slip
            let (p, q, s, t) = (w[a * n + a], w[a * n + b], w[b * n + a], w[b * n + b]);
            let det = p * t - q * s;
            if det.abs() < 1e-300 {
                continue;
            }
            let mut fa = f[a] - (t * r[0] - q * r[1]) / det;
            let mut fb = f[b] - (p * r[1] - s * r[0]) / det;
            let mag = fa.hypot(fb);
            if mag > limit {
                fa *= limit / mag;
                fb *= limit / mag;
            }
            f[a] = fa;
            f[b] = fb;
        }
    }
    f
}

const FRICTION_SWEEPS: usize = 30;

/// Advances the robot by one semi-implicit Euler step.
///
/// Torques beyond the motor limit are clamped. Trunk rotation is integrated
/// through its world-frame angular momentum so that, without external
/// moments, momentum is conserved to rounding error.
pub fn step_dynamics(
    model: &RobotModel,
    state: &RobotState,
    torques: &[f64; NUM_JOINTS],
    dt: f64,
) -> Result<RobotState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::domain(format!("physics step must lie in (0, 0.01] s, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Simulation("non-finite robot state".into()));
    }
    if torques.iter().any(|t| !t.is_finite()) {
        return Err(Error::Simulation("non-finite joint torque".into()));
    }
    let torques = torques.map(|t| t.clamp(-model.torque_limit, model.torque_limit));

    let rot = state.base_orientation.to_rotation_matrix();
    let pitch_axis = rot * Vector3::y();
    let mut force = Vector3::new(0.0, 0.0, -model.total_mass() * model.gravity);
    let mut moment = Vector3::zeros();
    let mut joint_load = torques;

    let inertia = model.inertia_body();
    let inertia_inv = model.inertia_body_inv();
    let inertia_world_inv = rot.matrix() * inertia_inv * rot.matrix().transpose();

    // normal forces first
    let mut contacts = Vec::with_capacity(NUM_LEGS);
    for leg in 0..NUM_LEGS {
        let p = state.foot_positions[leg];
        if p.z > 0.0 {
            continue;
        }
        let (ti, ci) = (thigh_index(leg), calf_index(leg));
        let (_, d_thigh, d_calf) = model.leg_kinematics(leg, state.joint_angles[ti], state.joint_angles[ci]);
        let (d_thigh, d_calf) = (rot * d_thigh, rot * d_calf);
        let r = p - state.base_position;
        let normal = normal_force(model, &p, &state.foot_velocities[leg]);
        let f = Vector3::new(0.0, 0.0, normal);
        force += f;
        moment += r.cross(&f);
        joint_load[ti] += d_thigh.dot(&f);
        joint_load[ci] += d_calf.dot(&f);
        contacts.push(Contact {
            leg,
            r,
            d_thigh,
            d_calf,
            normal,
        });
    }

    if !contacts.is_empty() {
        // slip the step would end with if no friction acted
        let rotor_load: f64 = joint_load.iter().sum();
        let v_free = state.base_linear_velocity + force * (dt / model.total_mass());
        let omega_free = state.base_angular_velocity + inertia_world_inv * (moment - pitch_axis * rotor_load) * dt;
        let mut slip = Vec::with_capacity(2 * contacts.len());
        for c in &contacts {
            let (ti, ci) = (thigh_index(c.leg), calf_index(c.leg));
            let qt = state.joint_velocities[ti] + dt * joint_load[ti] / model.joint_inertia(ti);
            let qc = state.joint_velocities[ci] + dt * joint_load[ci] / model.joint_inertia(ci);
            let v = v_free + omega_free.cross(&c.r) + c.d_thigh * qt + c.d_calf * qc;
            slip.push(v.x);
            slip.push(v.y);
        }
        let tangential = friction_forces(model, &contacts, &slip, &inertia_world_inv, &pitch_axis, dt);
        for (k, c) in contacts.iter().enumerate() {
            let f = Vector3::new(tangential[2 * k], tangential[2 * k + 1], 0.0);
            force += f;
            moment += c.r.cross(&f);
            joint_load[thigh_index(c.leg)] += c.d_thigh.dot(&f);
            joint_load[calf_index(c.leg)] += c.d_calf.dot(&f);
        }
    }
    // the rotors take up the motor torques and the contact load they carry;
    // the trunk receives the opposite so that the total moment is external only
    let rotor_load: f64 = joint_load.iter().sum();
    moment -= pitch_axis * rotor_load;

    let v = state.base_linear_velocity + force * (dt / model.total_mass());

    let momentum = rot.matrix() * inertia * rot.matrix().transpose() * state.base_angular_velocity + moment * dt;
    let omega_mid = rot.matrix() * inertia_inv * rot.matrix().transpose() * momentum;
    let orientation = UnitQuaternion::new_normalize(
        (UnitQuaternion::from_scaled_axis(omega_mid * dt) * state.base_orientation).into_inner(),
    );
    let rot_next = orientation.to_rotation_matrix();
    let omega = rot_next.matrix() * inertia_inv * rot_next.matrix().transpose() * momentum;

    let mut qd = state.joint_velocities;
    let mut q = state.joint_angles;
    for j in 0..NUM_JOINTS {
        qd[j] += dt * joint_load[j] / model.joint_inertia(j);
        q[j] += dt * qd[j];
        let [lo, hi] = model.joint_limits(j);
        if q[j] < lo {
            q[j] = lo;
            qd[j] = qd[j].max(0.0);
        } else if q[j] > hi {
            q[j] = hi;
            qd[j] = qd[j].min(0.0);
        }
    }

    let next = RobotState::from_coordinates(
        model,
        state.base_position + v * dt,
        orientation,
        v,
        omega,
        q,
        qd,
    );
    if !next.is_finite() {
        return Err(Error::Simulation("integration produced a non-finite state".into()));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// Only positive mechanical work counts.
    #[default]
    PositiveWork,
    /// Absolute mechanical work.
    AbsoluteWork,
}

/// Mechanical power delivered by the joint motors, W.
pub fn mechanical_energy_rate(state: &RobotState, torques: &[f64; NUM_JOINTS], mode: EnergyMode) -> f64 {
    torques
        .iter()
        .zip(&state.joint_velocities)
        .map(|(t, w)| {
            let p = t * w;
            match mode {
                EnergyMode::PositiveWork => p.max(0.0),
                EnergyMode::AbsoluteWork => p.abs(),
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    TrunkTooLow,
    Tilted,
    NonFinite,
}

/// Fall detection: trunk below 0.15 m, roll or pitch beyond 1 rad, or a
/// non-finite state.
pub fn check_termination(state: &RobotState) -> Option<Termination> {
    if !state.is_finite() {
        return Some(Termination::NonFinite);
    }
    if state.base_position.z < 0.15 {
        return Some(Termination::TrunkTooLow);
    }
    let (roll, pitch, _) = state.euler_angles();
    if roll.abs() > 1.0 || pitch.abs() > 1.0 {
        return Some(Termination::Tilted);
    }
    None
}
