//! Benchmark dynamics: right-hand sides, observation maps, and the RK4
//! stepper. Actions and disturbances are zero-order-hold within a step.

use super::{DeviationSpace, SystemId};

pub const GRAVITY: f64 = 9.8;

/// Water-tank level set point seen by the controller and the spec.
pub const WATERTANK_REF: f64 = 10.0;

/// ACC: commanded force per unit action; achieved acceleration is
/// `action * ACC_FORCE_SCALE / mass`.
pub const ACC_FORCE_SCALE: f64 = 5000.0;

/// Car-run steering scale: turn rate is `CARRUN_TURN_SCALE * tm * steer`.
pub const CARRUN_TURN_SCALE: f64 = 0.1;
/// Car-run throttle scale: acceleration is `CARRUN_SPEED_SCALE * sm * throttle`.
pub const CARRUN_SPEED_SCALE: f64 = 19.0;

/// Analytic test system: minimal lower-layer robustness at deviation
/// `delta` is exactly `DISK_MARGIN - |normalized delta|`.
pub const DISK_MARGIN: f64 = 0.4;

/// ODE right-hand side. `delta` is the deviation vector of the owning
/// system; `dist` the per-step disturbance values.
pub fn derivative(
    id: SystemId,
    state: &[f64],
    action: &[f64],
    dist: &[f64],
    delta: &[f64],
) -> Vec<f64> {
    match id {
        SystemId::Cartpole => {
            let (_x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
            let (cart_mass, pole_mass, pole_len, force_mag) =
                (delta[0], delta[1], delta[2], delta[3]);
            let force = action[0] * force_mag;
            let total = cart_mass + pole_mass;
            let (sin_t, cos_t) = theta.sin_cos();
            let temp = (force + pole_mass * pole_len * theta_dot * theta_dot * sin_t) / total;
            let theta_acc = (GRAVITY * sin_t - cos_t * temp)
                / (pole_len * (4.0 / 3.0 - pole_mass * cos_t * cos_t / total));
            let x_acc = temp - pole_mass * pole_len * theta_acc * cos_t / total;
            vec![x_dot, x_acc, theta_dot, theta_acc]
        }
        SystemId::Watertank => {
            let h = state[0];
            let (inflow, outflow) = (delta[0], delta[1]);
            // Unit cross-section; sqrt clamped for transients below zero.
            vec![inflow * action[0] - outflow * h.max(0.0).sqrt()]
        }
        SystemId::Acc => {
            let (_x_lead, v_lead, _x_ego, v_ego) = (state[0], state[1], state[2], state[3]);
            let (mass, acc_min, acc_max) = (delta[0], delta[1], delta[2]);
            let lead_acc = dist[0].clamp(acc_min, acc_max);
            let ego_acc = action[0] * ACC_FORCE_SCALE / mass;
            // Vehicles brake to a standstill, they do not reverse.
            let lead_acc = if v_lead <= 0.0 && lead_acc < 0.0 { 0.0 } else { lead_acc };
            let ego_acc = if v_ego <= 0.0 && ego_acc < 0.0 { 0.0 } else { ego_acc };
            vec![v_lead, lead_acc, v_ego, ego_acc]
        }
        SystemId::Carrun => {
            let (_x, _y, theta, v) = (state[0], state[1], state[2], state[3]);
            let (turn_mult, speed_mult) = (delta[0], delta[1]);
            let (sin_t, cos_t) = theta.sin_cos();
            vec![
                v * cos_t,
                v * sin_t,
                CARRUN_TURN_SCALE * turn_mult * action[0],
                CARRUN_SPEED_SCALE * speed_mult * action[1],
            ]
        }
        SystemId::SyntheticDisk => {
            unreachable!("synthetic-disk steps discretely, not through an ODE")
        }
    }
}

/// Observation the policy receives.
pub fn observe(id: SystemId, state: &[f64], dist: &[f64], _delta: &[f64]) -> Vec<f64> {
    match id {
        SystemId::Cartpole | SystemId::Carrun => state.to_vec(),
        SystemId::Watertank => {
            // Tracking error against the (possibly perturbed) reference.
            vec![WATERTANK_REF + dist[0] - state[0]]
        }
        SystemId::Acc => {
            let (x_lead, v_lead, x_ego, v_ego) = (state[0], state[1], state[2], state[3]);
            vec![x_lead - x_ego, v_lead - v_ego, v_ego]
        }
        SystemId::SyntheticDisk => vec![0.0],
    }
}

/// One step of `dt`: classic RK4 for the ODE systems, and the analytic
/// one-step map for the synthetic disk.
pub fn step(
    id: SystemId,
    state: &[f64],
    action: &[f64],
    dist: &[f64],
    delta: &[f64],
    space: &DeviationSpace,
    dt: f64,
) -> Vec<f64> {
    if id == SystemId::SyntheticDisk {
        return vec![DISK_MARGIN - space.normalized_l2(delta)];
    }
    let n = state.len();
    let k1 = derivative(id, state, action, dist, delta);
    let mid1: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k1[i]).collect();
    let k2 = derivative(id, &mid1, action, dist, delta);
    let mid2: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k2[i]).collect();
    let k3 = derivative(id, &mid2, action, dist, delta);
    let end: Vec<f64> = (0..n).map(|i| state[i] + dt * k3[i]).collect();
    let k4 = derivative(id, &end, action, dist, delta);
    (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
