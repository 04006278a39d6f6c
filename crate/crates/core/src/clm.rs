//! Reduced-order composite load model driven by a prescribed bus voltage.
//!
//! Components: three 2-state induction motor surrogates (A/B/C), a
//! single-phase motor D with a run/stall state machine, an electronic load
//! with undervoltage trip and partial reconnection, a ZIP static load and an
//! algebraic DER. Powers use load convention (consumption positive) and each
//! component's base power equals its fraction parameter.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::N_PARAMS;

/// Integration step (s).
pub const DT: f64 = 1e-3;
/// Output decimation factor.
pub const DECIMATE: usize = 10;
/// Output samples per channel.
pub const N_OUT: usize = 512;
/// Output sample period (s).
pub const DT_OUT: f64 = DT * DECIMATE as f64;
/// Integration steps covering the output horizon (last output at index 5110).
pub const N_FINE: usize = (N_OUT - 1) * DECIMATE + 1;
pub const HORIZON_S: f64 = (N_OUT - 1) as f64 * DT_OUT;

pub const MOTOR_H: f64 = 0.3;
pub const MOTOR_RR: f64 = 0.02;
pub const MOTOR_XP: f64 = 0.15;
/// Load torque at the nominal operating point.
pub const MOTOR_T0: f64 = 1.0;
/// Motor A has no time-constant parameter in the identified set.
pub const TP0_A: f64 = 0.1;
const SLIP_MIN: f64 = 1e-6;
const SLIP_MAX: f64 = 1.0 - 1e-6;

pub const V_STALL: f64 = 0.6;
pub const T_STALL_MS: usize = 30;
pub const V_RST: f64 = 0.95;
pub const T_RST_MS: usize = 300;

pub const V_D1: f64 = 0.8;
pub const V_D2: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultLabel {
    Ordinary,
    Trip,
    Stall,
    Custom,
}

impl FaultLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultLabel::Ordinary => "ordinary",
            FaultLabel::Trip => "trip",
            FaultLabel::Stall => "stall",
            FaultLabel::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ordinary" => Some(FaultLabel::Ordinary),
            "trip" => Some(FaultLabel::Trip),
            "stall" => Some(FaultLabel::Stall),
            "custom" => Some(FaultLabel::Custom),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub label: FaultLabel,
    pub v_min: f64,
    pub onset_s: f64,
    pub clearing_ms: f64,
    pub recovery_tau_s: f64,
}

impl FaultSpec {
    pub fn ordinary() -> Self {
        Self { label: FaultLabel::Ordinary, v_min: 0.90, onset_s: 0.5, clearing_ms: 135.0, recovery_tau_s: 0.05 }
    }

    pub fn trip() -> Self {
        Self { label: FaultLabel::Trip, v_min: 0.65, onset_s: 0.5, clearing_ms: 135.0, recovery_tau_s: 0.15 }
    }

    pub fn stall() -> Self {
        Self { label: FaultLabel::Stall, v_min: 0.0, onset_s: 0.5, clearing_ms: 44.0, recovery_tau_s: 0.25 }
    }

    /// The three reference events in conditioning order.
    pub fn standard_events() -> Vec<Self> {
        vec![Self::ordinary(), Self::trip(), Self::stall()]
    }

    pub fn standard(label: FaultLabel) -> Option<Self> {
        match label {
            FaultLabel::Ordinary => Some(Self::ordinary()),
            FaultLabel::Trip => Some(Self::trip()),
            FaultLabel::Stall => Some(Self::stall()),
            FaultLabel::Custom => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.v_min) {
            return Err(CoreError::Config(format!("v_min {} outside [0, 1]", self.v_min)));
        }
        if !(self.clearing_ms > 0.0) || !(self.recovery_tau_s > 0.0) || !(self.onset_s >= 0.0) {
            return Err(CoreError::Config("clearing time, onset and recovery constant must be positive".into()));
        }
        if self.onset_s + self.clearing_ms * 1e-3 > HORIZON_S {
            return Err(CoreError::Config(format!(
                "fault clears at {:.3} s, beyond the {HORIZON_S:.2} s horizon",
                self.onset_s + self.clearing_ms * 1e-3
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoltageProfile {
    /// Output grid, `N_OUT` samples every `DT_OUT`.
    pub samples: Vec<f64>,
    /// Integration grid, `N_FINE` samples every `DT`.
    pub fine: Vec<f64>,
}

/// Flat pre-fault voltage, then `v_min` for the clearing interval, then
/// exponential recovery towards 1. Onset and clearing are resolved on the
/// 1 ms integration grid.
pub fn voltage_profile(spec: &FaultSpec) -> Result<VoltageProfile> {
    spec.validate()?;
    let n_on = (spec.onset_s / DT).round() as usize;
    let n_clear = n_on + spec.clearing_ms.round() as usize;
    let fine: Vec<f64> = (0..N_FINE)
        .map(|n| {
            if n < n_on {
                1.0
            } else if n < n_clear {
                spec.v_min
            } else {
                let dt = (n - n_clear) as f64 * DT;
                1.0 - (1.0 - spec.v_min) * (-dt / spec.recovery_tau_s).exp()
            }
        })
        .collect();
    let samples = (0..N_OUT).map(|j| fine[j * DECIMATE]).collect();
    Ok(VoltageProfile { samples, fine })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Trajectory {
    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Named view of a parameter vector in the standard order.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadParams {
    pub fma: f64,
    pub fmb: f64,
    pub fmc: f64,
    pub fmd: f64,
    pub fel: f64,
    pub fder_a: f64,
    pub ls_a: f64,
    pub etrq_a: f64,
    pub ls_b: f64,
    pub tp0_b: f64,
    pub etrq_b: f64,
    pub ls_c: f64,
    pub tp0_c: f64,
    pub etrq_c: f64,
    pub rstall: f64,
    pub xstall: f64,
    pub comp_pf: f64,
    pub frst: f64,
    pub kp1: f64,
    pub np1: f64,
    pub nq1: f64,
    pub np2: f64,
    pub nq2: f64,
    pub p1c: f64,
    pub p2c: f64,
    pub pf: f64,
    pub frcel: f64,
    pub qel0: f64,
    pub imax: f64,
    pub qref: f64,
}

impl LoadParams {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(CoreError::Param(format!("expected {N_PARAMS} parameters, got {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Param("non-finite parameter".into()));
        }
        let p = Self {
            fma: v[0],
            fmb: v[1],
            fmc: v[2],
            fmd: v[3],
            fel: v[4],
            fder_a: v[5],
            ls_a: v[6],
            etrq_a: v[7],
            ls_b: v[8],
            tp0_b: v[9],
            etrq_b: v[10],
            ls_c: v[11],
            tp0_c: v[12],
            etrq_c: v[13],
            rstall: v[14],
            xstall: v[15],
            comp_pf: v[16],
            frst: v[17],
            kp1: v[18],
            np1: v[19],
            nq1: v[20],
            np2: v[21],
            nq2: v[22],
            p1c: v[23],
            p2c: v[24],
            pf: v[25],
            frcel: v[26],
            qel0: v[27],
            imax: v[28],
            qref: v[29],
        };
        if p.rstall <= 0.0 || p.xstall <= 0.0 {
            return Err(CoreError::Param("Rstall and Xstall must be positive".into()));
        }
        for (name, x) in [("Ls", p.ls_a), ("Ls", p.ls_b), ("Ls", p.ls_c), ("Tp0", p.tp0_b), ("Tp0", p.tp0_c)] {
            if x <= 0.0 {
                return Err(CoreError::Param(format!("{name} must be positive")));
            }
        }
        Ok(p)
    }

    /// Static load fraction: whatever the listed loads leave of 1 pu.
    pub fn static_fraction(&self) -> f64 {
        (1.0 - (self.fma + self.fmb + self.fmc + self.fmd + self.fel)).max(0.0)
    }
}

/// `tan(arccos(pf))` without the trigonometric round trip.
pub fn pf_ratio(pf: f64) -> f64 {
    let pf = pf.clamp(1e-9, 1.0);
    (1.0 - pf * pf).max(0.0).sqrt() / pf
}

// ---------------------------------------------------------------- motors A/B/C

/// Electrical torque `E^2 (Rr/s) / ((Rr/s)^2 + X'^2)`, written in a form that
/// is finite at `s = 0`.
pub fn electrical_torque(e: f64, s: f64) -> f64 {
    e * e * MOTOR_RR * s / (MOTOR_RR * MOTOR_RR + MOTOR_XP * MOTOR_XP * s * s)
}

/// Slip at which electrical torque peaks; the stable branch is `(0, s_peak]`.
pub const fn peak_slip() -> f64 {
    MOTOR_RR / MOTOR_XP
}

/// Solves `Te(1, s) = T0 (1 - s)^etrq` on the stable branch by bisection.
/// Returns the slip and the residual at that slip.
pub fn equilibrium_slip(etrq: f64, t0: f64) -> Result<(f64, f64)> {
    let f = |s: f64| electrical_torque(1.0, s) - t0 * (1.0 - s).powf(etrq);
    let (mut lo, mut hi) = (0.0, peak_slip());
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(CoreError::Infeasible(format!("no torque balance for etrq {etrq}, T0 {t0}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    Ok((s, f(s)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Motor3 {
    pub frac: f64,
    pub ls: f64,
    pub tp0: f64,
    pub etrq: f64,
    /// Load torque coefficient, set so that the initial state balances.
    pub t0: f64,
    /// Maps `Te (1 - s)` at the operating point to 1 pu.
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motor3State {
    pub e: f64,
    pub s: f64,
}

impl Motor3 {
    /// Motor at its V = 1 operating point.
    pub fn at_equilibrium(frac: f64, ls: f64, tp0: f64, etrq: f64) -> Result<(Self, Motor3State)> {
        let (s, _) = equilibrium_slip(etrq, MOTOR_T0)?;
        let te = electrical_torque(1.0, s);
        // absorb the bisection residual so that the balance is exact in
        // floating point
        let t0 = te / (1.0 - s).powf(etrq);
        let scale = 1.0 / (te * (1.0 - s));
        Ok((Self { frac, ls, tp0, etrq, t0, scale }, Motor3State { e: 1.0, s }))
    }

    /// Per-unit electrical output of the whole component.
    pub fn power(&self, st: &Motor3State) -> (f64, f64) {
        let pm = electrical_torque(st.e, st.s) * (1.0 - st.s) * self.scale;
        let q = st.e * st.e / self.ls + pm * MOTOR_XP * st.s / MOTOR_RR;
        (self.frac * pm, self.frac * q)
    }

    /// One explicit Euler step; returns true if the slip had to be clamped.
    pub fn step(&self, st: &mut Motor3State, v: f64, dt: f64) -> bool {
        let te = electrical_torque(st.e, st.s);
        let tm = self.t0 * (1.0 - st.s).powf(self.etrq);
        let de = (v - st.e) / self.tp0;
        let ds = (tm - te) / (2.0 * MOTOR_H);
        st.e += dt * de;
        let s = st.s + dt * ds;
        st.s = s.clamp(SLIP_MIN, SLIP_MAX);
        st.s != s
    }
}

// ---------------------------------------------------------------- motor D

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotorDMode {
    Run,
    Stall,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotorDState {
    pub mode: MotorDMode,
    /// Consecutive integration steps with V below `V_STALL` (run mode).
    pub below_steps: usize,
    /// Consecutive integration steps with V above `V_RST` (stall mode).
    pub above_steps: usize,
    /// Fraction of motor D currently stalled.
    pub stalled: f64,
    pub restarted: bool,
}

impl MotorDState {
    pub fn running() -> Self {
        Self { mode: MotorDMode::Run, below_steps: 0, above_steps: 0, stalled: 0.0, restarted: false }
    }
}

/// Run-state powers of motor D.
pub fn motor_d_run_power(p: &LoadParams, v: f64) -> (f64, f64) {
    let pp = p.fmd * (1.0 + p.kp1 * (v - 1.0)) * v.powf(p.np1);
    let qq = p.fmd * pf_ratio(p.comp_pf) * v.powf(p.nq1);
    (pp, qq)
}

/// Stall-state powers of motor D (reactive magnitude, load convention).
pub fn motor_d_stall_power(p: &LoadParams, v: f64) -> (f64, f64) {
    (p.fmd * v.powf(p.np2) / p.rstall, p.fmd * v.powf(p.nq2) / p.xstall)
}

pub fn motor_d_power(p: &LoadParams, st: &MotorDState, v: f64) -> (f64, f64) {
    let (pr, qr) = motor_d_run_power(p, v);
    if st.stalled == 0.0 {
        return (pr, qr);
    }
    let (ps, qs) = motor_d_stall_power(p, v);
    let f = st.stalled;
    ((1.0 - f) * pr + f * ps, (1.0 - f) * qr + f * qs)
}

/// Advances the stall/restart timers by one 1 ms step at voltage `v`.
pub fn motor_d_step(p: &LoadParams, st: &mut MotorDState, v: f64) {
    match st.mode {
        MotorDMode::Run => {
            if v < V_STALL {
                st.below_steps += 1;
                if st.below_steps >= T_STALL_MS {
                    st.mode = MotorDMode::Stall;
                    st.stalled = 1.0;
                    st.above_steps = 0;
                }
            } else {
                st.below_steps = 0;
            }
        }
        MotorDMode::Stall => {
            if st.restarted {
                return;
            }
            if v > V_RST {
                st.above_steps += 1;
                if st.above_steps >= T_RST_MS {
                    st.stalled = 1.0 - p.frst;
                    st.restarted = true;
                }
            } else {
                st.above_steps = 0;
            }
        }
    }
}

// ---------------------------------------------------------------- electronic load

/// Fraction of electronic load connected on the trip ramp at voltage `v`.
pub fn trip_ramp(v: f64) -> f64 {
    ((v - V_D2) / (V_D1 - V_D2)).clamp(0.0, 1.0)
}

/// Recovered fraction after a dip to `v_min`. `v_min` is clamped to
/// `[V_D2, V_D1]`: dips below `V_D2` count as a full trip.
pub fn fvl_rec(v_min: f64, frcel: f64) -> f64 {
    let vm = v_min.clamp(V_D2, V_D1);
    ((vm - V_D2) + frcel * (V_D1 - vm)) / (V_D1 - V_D2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElMode {
    Nominal,
    Tripped,
    Recovered,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElState {
    pub mode: ElMode,
    pub v_min: f64,
    /// Connected fraction at the current voltage.
    pub frac: f64,
    /// Latched recovery fraction.
    pub rec: f64,
}

impl ElState {
    pub fn nominal() -> Self {
        Self { mode: ElMode::Nominal, v_min: 1.0, frac: 1.0, rec: 1.0 }
    }
}

/// Updates the connected fraction for voltage `v`. Falling voltage follows
/// the trip ramp; rising voltage follows the straight line from
/// `(v_min, ramp(v_min))` to `(V_D1, Fvl_rec)`, and the recovered fraction
/// latches once `V_D1` is reached.
pub fn electronic_update(st: &mut ElState, v: f64, frcel: f64) {
    match st.mode {
        ElMode::Nominal => {
            if v < V_D1 {
                st.mode = ElMode::Tripped;
                st.v_min = v;
                st.frac = trip_ramp(v);
            } else {
                st.frac = 1.0;
            }
        }
        ElMode::Tripped => {
            if v <= st.v_min {
                st.v_min = v;
                st.frac = trip_ramp(v);
            } else if v >= V_D1 {
                st.mode = ElMode::Recovered;
                st.rec = fvl_rec(st.v_min, frcel);
                st.frac = st.rec;
            } else {
                let start = trip_ramp(st.v_min);
                let end = fvl_rec(st.v_min, frcel);
                st.frac = start + (end - start) * (v - st.v_min) / (V_D1 - st.v_min);
            }
        }
        ElMode::Recovered => {
            // a later dip scales the latched fraction down the same ramp
            st.frac = st.rec * trip_ramp(v);
        }
    }
}

pub fn electronic_power(p: &LoadParams, st: &ElState) -> (f64, f64) {
    (p.fel * st.frac, p.fel * p.qel0 * st.frac)
}

// ---------------------------------------------------------------- static + DER

pub fn static_zip_power(p: &LoadParams, v: f64) -> (f64, f64) {
    let poly = p.p2c * v * v + p.p1c * v + (1.0 - p.p1c - p.p2c);
    let fs = p.static_fraction();
    (fs * poly, fs * poly * pf_ratio(p.pf))
}

/// Inverter-based generation as negative load: active output limited by the
/// current limit, reactive support from the remaining current headroom
/// capped by `Qref`.
pub fn der_a_power(p: &LoadParams, v: f64) -> (f64, f64) {
    let i_v = v * p.imax;
    let pa = i_v.min(1.0);
    let headroom = (i_v * i_v - pa * pa).max(0.0).sqrt();
    let qa = p.qref.abs().min(headroom);
    (p.fder_a * pa, -p.fder_a.signum() * qa * p.fder_a)
}

// ---------------------------------------------------------------- full model

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub motors: [Motor3State; 3],
    pub motor_d: MotorDState,
    pub el: ElState,
    /// Last DER output, kept for inspection.
    pub der: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct LoadModel {
    pub params: LoadParams,
    pub motors: [Motor3; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    pub slip_clamped: bool,
    pub stalled: bool,
    pub restarted: bool,
    pub tripped: bool,
    pub el_v_min: f64,
    pub fvl_rec: Option<f64>,
}

impl LoadModel {
    /// Builds the model and its V = 1 equilibrium.
    pub fn steady_state_init(theta: &[f64]) -> Result<(Self, SimState)> {
        let params = LoadParams::from_slice(theta)?;
        let (ma, sa) = Motor3::at_equilibrium(params.fma, params.ls_a, TP0_A, params.etrq_a)?;
        let (mb, sb) = Motor3::at_equilibrium(params.fmb, params.ls_b, params.tp0_b, params.etrq_b)?;
        let (mc, sc) = Motor3::at_equilibrium(params.fmc, params.ls_c, params.tp0_c, params.etrq_c)?;
        let der = der_a_power(&params, 1.0);
        let model = Self { params, motors: [ma, mb, mc] };
        let state = SimState { motors: [sa, sb, sc], motor_d: MotorDState::running(), el: ElState::nominal(), der };
        Ok((model, state))
    }

    /// Total bus power at voltage `v`; updates the algebraic parts of the
    /// state (electronic-load fraction, DER output).
    pub fn output(&self, st: &mut SimState, v: f64) -> (f64, f64) {
        let p = &self.params;
        electronic_update(&mut st.el, v, p.frcel);
        st.der = der_a_power(p, v);
        let mut pt = 0.0;
        let mut qt = 0.0;
        for (m, ms) in self.motors.iter().zip(&st.motors) {
            let (a, b) = m.power(ms);
            pt += a;
            qt += b;
        }
        for (a, b) in [motor_d_power(p, &st.motor_d, v), electronic_power(p, &st.el), static_zip_power(p, v), st.der] {
            pt += a;
            qt += b;
        }
        (pt, qt)
    }

    /// Advances the dynamic states by one integration step at voltage `v`.
    pub fn advance(&self, st: &mut SimState, v: f64) -> bool {
        let mut clamped = false;
        for (m, ms) in self.motors.iter().zip(st.motors.iter_mut()) {
            clamped |= m.step(ms, v, DT);
        }
        motor_d_step(&self.params, &mut st.motor_d, v);
        clamped
    }

    /// Integrates over a fine voltage grid and returns every output sample
    /// (one per integration step).
    pub fn run_fine(&self, st: &mut SimState, fine: &[f64], diag: &mut SimDiagnostics) -> Result<Trajectory> {
        let mut p = Vec::with_capacity(fine.len());
        let mut q = Vec::with_capacity(fine.len());
        for (n, &v) in fine.iter().enumerate() {
            let (a, b) = self.output(st, v);
            if !a.is_finite() || !b.is_finite() {
                return Err(CoreError::Diverged { step: n });
            }
            p.push(a);
            q.push(b);
            diag.slip_clamped |= self.advance(st, v);
        }
        diag.stalled = st.motor_d.mode == MotorDMode::Stall;
        diag.restarted = st.motor_d.restarted;
        diag.tripped = st.el.mode != ElMode::Nominal;
        diag.el_v_min = st.el.v_min;
        diag.fvl_rec = (st.el.mode == ElMode::Recovered).then_some(st.el.rec);
        Ok(Trajectory { p, q })
    }
}

/// Forward operator: parameters and a voltage profile to the (2, 512)
/// power trajectory.
pub fn simulate(theta: &[f64], profile: &VoltageProfile) -> Result<Trajectory> {
    simulate_detailed(theta, profile).map(|(t, _)| t)
}

pub fn simulate_detailed(theta: &[f64], profile: &VoltageProfile) -> Result<(Trajectory, SimDiagnostics)> {
    if profile.fine.len() != N_FINE {
        return Err(CoreError::Config(format!("fine profile has {} samples, expected {N_FINE}", profile.fine.len())));
    }
    let (model, mut st) = LoadModel::steady_state_init(theta)?;
    let mut diag = SimDiagnostics::default();
    let fine = model.run_fine(&mut st, &profile.fine, &mut diag)?;
    let traj = Trajectory {
        p: (0..N_OUT).map(|j| fine.p[j * DECIMATE]).collect(),
        q: (0..N_OUT).map(|j| fine.q[j * DECIMATE]).collect(),
    };
    Ok((traj, diag))
}
