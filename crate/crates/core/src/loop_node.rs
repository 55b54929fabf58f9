//! All-optical loop memory: map-in, lossy circulation, full and partial map-out.
//!
//! Time inside the loop is a grid `entry_time + k * period_tau`. Photons that
//! share a grid phase share a temporal slot; distinct slots must be separated
//! by more than the switch rise time or the switch would disturb a neighbour.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phys_model::{LoopParams, ModelError};
use crate::time::TimeNs;

pub type SlotId = u32;

/// Hard stop for geometric chopping when `q` is tiny and `T` is close to one.
pub const MAX_CHOP_ROUNDS: u32 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error(
        "slot collision: photon {photon_id} at phase distance {distance} from slot {other_slot} (rise time {rise})"
    )]
    SlotCollision {
        photon_id: u64,
        other_slot: SlotId,
        distance: TimeNs,
        rise: TimeNs,
    },
    #[error("photon id {0} is already in the loop")]
    DuplicatePhoton(u64),
    #[error("no photon with id {0} in the loop")]
    UnknownPhoton(u64),
    #[error("photon {photon_id} has completed {completed} cycles, map-out requested after {requested}")]
    CycleMismatch {
        photon_id: u64,
        completed: u32,
        requested: u32,
    },
    #[error("voltage ratio {0} outside [0, 1]")]
    VoltageDomain(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A photon as it enters the loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonTag {
    pub id: u64,
    pub slot: SlotId,
    /// Pulse duration; carried unchanged through storage.
    pub pulse_fwhm: TimeNs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOccupant {
    pub photon_id: u64,
    pub slot: SlotId,
    pub entry_time: TimeNs,
    pub cycles_completed: u32,
    pub alive: bool,
    pub pulse_fwhm: TimeNs,
}

/// A photon leaving the loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub photon_id: u64,
    pub slot: SlotId,
    pub time: TimeNs,
    pub cycles: u32,
    pub pulse_fwhm: TimeNs,
}

#[derive(Clone, Debug)]
pub struct LoopState {
    pub params: LoopParams,
    occupants: Vec<LoopOccupant>,
}

impl LoopState {
    pub fn new(params: LoopParams) -> Result<Self, LoopError> {
        params.validate()?;
        Ok(Self {
            params,
            occupants: Vec::new(),
        })
    }

    pub fn occupants(&self) -> &[LoopOccupant] {
        &self.occupants
    }

    pub fn is_empty(&self) -> bool {
        self.occupants.is_empty()
    }

    pub fn clear(&mut self) {
        self.occupants.clear();
    }

    fn position(&self, photon_id: u64) -> Result<usize, LoopError> {
        self.occupants
            .iter()
            .position(|o| o.photon_id == photon_id)
            .ok_or(LoopError::UnknownPhoton(photon_id))
    }

    pub fn occupant(&self, photon_id: u64) -> Result<&LoopOccupant, LoopError> {
        self.position(photon_id).map(|i| &self.occupants[i])
    }

    /// Ids of the occupants in `slot`, in map-in order.
    pub fn slot_members(&self, slot: SlotId) -> impl Iterator<Item = u64> + '_ {
        self.occupants
            .iter()
            .filter(move |o| o.slot == slot)
            .map(|o| o.photon_id)
    }
}

/// Per-pass out-coupling probability at fractional half-wave voltage `v`.
pub fn q_of_voltage(v: f64) -> f64 {
    (FRAC_PI_2 * v).sin().powi(2)
}

/// Inverse of [`q_of_voltage`] on `[0, 1]`.
pub fn voltage_for_q(q: f64) -> f64 {
    q.clamp(0.0, 1.0).sqrt().asin() / FRAC_PI_2
}

/// `P_out(m) = T^m q (1 - q)^(m - 1)` for `m >= 1`.
pub fn chop_emission_probability(transmission: f64, q: f64, m: u32) -> f64 {
    if m == 0 {
        return 0.0;
    }
    transmission.powi(m as i32) * q * (1.0 - q).powi(m as i32 - 1)
}

pub fn map_in(state: &mut LoopState, photon: PhotonTag, t: TimeNs) -> Result<(), LoopError> {
    let tau = state.params.period_tau;
    let rise = state.params.pc_rise_time;
    for o in state.occupants.iter().filter(|o| o.alive) {
        if o.photon_id == photon.id {
            return Err(LoopError::DuplicatePhoton(photon.id));
        }
        let d = (t - o.entry_time).grid_distance(tau);
        let same_mode = d == TimeNs::ZERO && o.slot == photon.slot;
        if !same_mode && d < rise {
            return Err(LoopError::SlotCollision {
                photon_id: photon.id,
                other_slot: o.slot,
                distance: d,
                rise,
            });
        }
    }
    state.occupants.push(LoopOccupant {
        photon_id: photon.id,
        slot: photon.slot,
        entry_time: t,
        cycles_completed: 0,
        alive: true,
        pulse_fwhm: photon.pulse_fwhm,
    });
    Ok(())
}

fn advance<R: Rng + ?Sized>(o: &mut LoopOccupant, transmission: f64, rng: &mut R) {
    o.cycles_completed += 1;
    if o.alive && transmission < 1.0 && rng.gen::<f64>() >= transmission {
        o.alive = false;
    }
}

/// One round trip for every occupant.
pub fn circulate<R: Rng + ?Sized>(state: &mut LoopState, rng: &mut R) {
    let t = state.params.transmission_per_cycle;
    for o in state.occupants.iter_mut() {
        advance(o, t, rng);
    }
}

/// One round trip for a single occupant.
pub fn circulate_occupant<R: Rng + ?Sized>(
    state: &mut LoopState,
    photon_id: u64,
    rng: &mut R,
) -> Result<(), LoopError> {
    let i = state.position(photon_id)?;
    let t = state.params.transmission_per_cycle;
    advance(&mut state.occupants[i], t, rng);
    Ok(())
}

fn emission(o: &LoopOccupant, tau: TimeNs) -> Emission {
    Emission {
        photon_id: o.photon_id,
        slot: o.slot,
        time: o.entry_time + tau * o.cycles_completed as i64,
        cycles: o.cycles_completed,
        pulse_fwhm: o.pulse_fwhm,
    }
}

/// Removes the occupant after `k` completed cycles; emits it if it survived.
pub fn map_out_full(state: &mut LoopState, photon_id: u64, k: u32) -> Result<Option<Emission>, LoopError> {
    let i = state.position(photon_id)?;
    let o = &state.occupants[i];
    if o.cycles_completed != k {
        return Err(LoopError::CycleMismatch {
            photon_id,
            completed: o.cycles_completed,
            requested: k,
        });
    }
    let o = state.occupants.swap_remove(i);
    Ok(o.alive.then(|| emission(&o, state.params.period_tau)))
}

/// A single partial out-coupling pass at voltage ratio `v`. A photon that is
/// not coupled out stays in the loop.
pub fn map_out_partial<R: Rng + ?Sized>(
    state: &mut LoopState,
    photon_id: u64,
    v: f64,
    rng: &mut R,
) -> Result<Option<Emission>, LoopError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(LoopError::VoltageDomain(v));
    }
    let i = state.position(photon_id)?;
    if !state.occupants[i].alive {
        return Ok(None);
    }
    if rng.gen::<f64>() < q_of_voltage(v) {
        let o = state.occupants.swap_remove(i);
        return Ok(Some(emission(&o, state.params.period_tau)));
    }
    Ok(None)
}

/// Leaves the switch at voltage `v` on every pass: each round the photon
/// survives with `T` and is then coupled out with `q(v)`. The outcomes on
/// different rounds are mutually exclusive, so at most one emission results.
/// The occupant is removed either way.
pub fn chop_out<R: Rng + ?Sized>(
    state: &mut LoopState,
    photon_id: u64,
    v: f64,
    rng: &mut R,
) -> Result<Option<Emission>, LoopError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(LoopError::VoltageDomain(v));
    }
    let i = state.position(photon_id)?;
    let mut o = state.occupants.swap_remove(i);
    let q = q_of_voltage(v);
    if q <= 0.0 {
        return Ok(None);
    }
    let t = state.params.transmission_per_cycle;
    for _ in 0..MAX_CHOP_ROUNDS {
        advance(&mut o, t, rng);
        if !o.alive {
            return Ok(None);
        }
        if rng.gen::<f64>() < q {
            return Ok(Some(emission(&o, state.params.period_tau)));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SwitchKind {
    MapIn,
    MapOutFull,
    MapOutPartial { v: f64 },
}

/// The switch channel an event uses. Write, full read and partial read are
/// driven separately, so spacing limits apply per channel and slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SwitchChannel {
    Write,
    Read,
    Chop,
}

impl SwitchKind {
    pub fn channel(&self) -> SwitchChannel {
        match self {
            SwitchKind::MapIn => SwitchChannel::Write,
            SwitchKind::MapOutFull => SwitchChannel::Read,
            SwitchKind::MapOutPartial { .. } => SwitchChannel::Chop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub time: TimeNs,
    pub kind: SwitchKind,
    pub target: SlotId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// Events are not in time order.
    Unsorted { index: usize },
    /// Two activations of the same switch closer than `pc_min_spacing`.
    SwitchSpacing {
        first: usize,
        second: usize,
        gap: TimeNs,
        min_spacing: TimeNs,
    },
    /// An event fires within the rise time of another stored photon's pass.
    SlotDisturbance {
        event: usize,
        slot: SlotId,
        distance: TimeNs,
        rise: TimeNs,
    },
    /// A partial map-out with `v` outside `[0, 1]`.
    VoltageDomain { event: usize, v: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Unsorted { index } => write!(f, "event {index} is out of time order"),
            Violation::SwitchSpacing {
                first,
                second,
                gap,
                min_spacing,
            } => write!(
                f,
                "switch spacing: events {first} and {second} are {gap} ns apart (minimum {min_spacing} ns)"
            ),
            Violation::SlotDisturbance {
                event,
                slot,
                distance,
                rise,
            } => write!(
                f,
                "slot disturbance: event {event} is {distance} ns from the pass of slot {slot} (rise time {rise} ns)"
            ),
            Violation::VoltageDomain { event, v } => {
                write!(f, "voltage ratio {v} of event {event} is outside [0, 1]")
            }
        }
    }
}

/// Interval during which a slot holds a photon: from its first map-in to its
/// last full map-out (open-ended if never mapped out).
fn occupancy(events: &[SwitchEvent], slot: SlotId) -> Option<(TimeNs, Option<TimeNs>)> {
    let start = events
        .iter()
        .filter(|e| e.target == slot && e.kind == SwitchKind::MapIn)
        .map(|e| e.time)
        .min()?;
    let end = events
        .iter()
        .filter(|e| e.target == slot)
        .filter(|e| match e.kind {
            SwitchKind::MapOutFull => true,
            SwitchKind::MapOutPartial { v } => v >= 1.0,
            SwitchKind::MapIn => false,
        })
        .map(|e| e.time)
        .max();
    Some((start, end))
}

/// Checks a switch schedule. Violations are returned as data.
pub fn validate_sequence(events: &[SwitchEvent], loop_params: &LoopParams) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let tau = loop_params.period_tau;
    let rise = loop_params.pc_rise_time;

    for (i, w) in events.windows(2).enumerate() {
        if w[1].time < w[0].time {
            out.push(Violation::Unsorted { index: i + 1 });
        }
    }
    for (i, e) in events.iter().enumerate() {
        if let SwitchKind::MapOutPartial { v } = e.kind {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::VoltageDomain { event: i, v });
            }
        }
    }

    // Same switch: same target slot and channel.
    for (i, a) in events.iter().enumerate() {
        let next = events
            .iter()
            .enumerate()
            .skip(i + 1)
            .find(|(_, b)| b.target == a.target && b.kind.channel() == a.kind.channel());
        if let Some((j, b)) = next {
            let gap = (b.time - a.time).abs();
            if gap < loop_params.pc_min_spacing {
                out.push(Violation::SwitchSpacing {
                    first: i,
                    second: j,
                    gap,
                    min_spacing: loop_params.pc_min_spacing,
                });
            }
        }
    }

    let mut slots: Vec<SlotId> = events.iter().map(|e| e.target).collect();
    slots.sort_unstable();
    slots.dedup();
    let spans: Vec<(SlotId, TimeNs, Option<TimeNs>)> = slots
        .iter()
        .filter_map(|&s| occupancy(events, s).map(|(a, b)| (s, a, b)))
        .collect();

    for (i, e) in events.iter().enumerate() {
        for &(slot, start, end) in &spans {
            if slot == e.target {
                continue;
            }
            let inside = e.time >= start && end.is_none_or(|end| e.time <= end);
            if !inside {
                continue;
            }
            let distance = (e.time - start).grid_distance(tau);
            if distance < rise {
                out.push(Violation::SlotDisturbance {
                    event: i,
                    slot,
                    distance,
                    rise,
                });
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(tau: f64, t: f64) -> LoopParams {
        LoopParams {
            period_tau: TimeNs::from_ns(tau),
            transmission_per_cycle: t,
            pc_rise_time: TimeNs::from_ns(5.0),
            pc_min_spacing: TimeNs::from_ns(33.3),
            voltage_ratio: 1.0,
        }
    }

    fn tag(id: u64, slot: SlotId) -> PhotonTag {
        PhotonTag {
            id,
            slot,
            pulse_fwhm: TimeNs::from_ns(1.6),
        }
    }

    #[test]
    fn map_in_slots() {
        let mut s = LoopState::new(params(20.3, 0.95)).unwrap();
        map_in(&mut s, tag(0, 0), TimeNs::from_ns(100.0)).unwrap();
        map_in(&mut s, tag(1, 1), TimeNs::from_ns(110.0)).unwrap();
        let err = map_in(&mut s, tag(2, 2), TimeNs::from_ns(103.0)).unwrap_err();
        assert!(matches!(err, LoopError::SlotCollision { .. }));
        // same mode, same slot
        map_in(&mut s, tag(3, 0), TimeNs::from_ns(100.0)).unwrap();
        assert!(matches!(
            map_in(&mut s, tag(3, 0), TimeNs::from_ns(100.0)),
            Err(LoopError::DuplicatePhoton(3))
        ));
    }

    #[test]
    fn circulation_is_lossless_at_unit_transmission() {
        let mut s = LoopState::new(params(10.4, 1.0)).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        map_in(&mut s, tag(0, 0), TimeNs::ZERO).unwrap();
        for _ in 0..50 {
            circulate(&mut s, &mut r);
        }
        let o = s.occupant(0).unwrap();
        assert!(o.alive);
        assert_eq!(o.cycles_completed, 50);
    }

    #[test]
    fn map_out_timing_on_grid() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut s = LoopState::new(params(10.4, 1.0)).unwrap();
        map_in(&mut s, tag(0, 0), TimeNs::from_ns(7.0)).unwrap();
        for _ in 0..11 {
            circulate(&mut s, &mut r);
        }
        let e = map_out_full(&mut s, 0, 11).unwrap().unwrap();
        assert_eq!(e.time, TimeNs::from_ns(7.0 + 114.4));
        assert_eq!(e.pulse_fwhm, TimeNs::from_ns(1.6));
        assert!(s.is_empty());

        let mut s = LoopState::new(params(20.3, 1.0)).unwrap();
        map_in(&mut s, tag(0, 0), TimeNs::ZERO).unwrap();
        assert!(matches!(
            map_out_full(&mut s, 0, 3),
            Err(LoopError::CycleMismatch { .. })
        ));
        for _ in 0..3 {
            circulate(&mut s, &mut r);
        }
        assert_eq!(map_out_full(&mut s, 0, 3).unwrap().unwrap().time, TimeNs::from_ns(60.9));
        assert!(matches!(map_out_full(&mut s, 9, 0), Err(LoopError::UnknownPhoton(9))));
    }

    #[test]
    fn immediate_map_out() {
        let mut s = LoopState::new(params(20.3, 0.5)).unwrap();
        map_in(&mut s, tag(0, 0), TimeNs::from_ns(1.0)).unwrap();
        assert_eq!(map_out_full(&mut s, 0, 0).unwrap().unwrap().time, TimeNs::from_ns(1.0));
    }

    #[test]
    fn survivor_fraction_one_cycle() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut s = LoopState::new(params(10.4, 0.9)).unwrap();
        let n = 200_000u64;
        let mut alive = 0u64;
        for id in 0..n {
            map_in(&mut s, tag(id, 0), TimeNs::ZERO).unwrap();
            circulate_occupant(&mut s, id, &mut r).unwrap();
            if map_out_full(&mut s, id, 1).unwrap().is_some() {
                alive += 1;
            }
        }
        let f = alive as f64 / n as f64;
        assert!((f - 0.9).abs() < 3.0 * (0.09 / n as f64).sqrt());
    }

    #[test]
    fn voltage_mapping() {
        assert_eq!(q_of_voltage(0.0), 0.0);
        assert_relative_eq!(q_of_voltage(1.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(q_of_voltage(0.5), 0.5, epsilon = 1e-15);
        for q in [0.0, 0.1, 0.4, 0.75, 1.0] {
            assert_relative_eq!(q_of_voltage(voltage_for_q(q)), q, epsilon = 1e-12);
        }
        // two passes at v >= 0.5 couple out at least 75%
        let q = q_of_voltage(0.5);
        assert!(1.0 - (1.0 - q).powi(2) >= 0.75 - 1e-12);
    }

    #[test]
    fn chop_closed_form() {
        assert_relative_eq!(chop_emission_probability(0.95, 0.4, 1), 0.38, epsilon = 1e-12);
        assert_relative_eq!(chop_emission_probability(0.95, 0.4, 2), 0.2166, epsilon = 1e-12);
        assert_relative_eq!(chop_emission_probability(0.9, 1.0, 1), 0.9);
        assert_eq!(chop_emission_probability(0.9, 1.0, 2), 0.0);
        let total: f64 = (1..2000).map(|m| chop_emission_probability(1.0, 0.3, m)).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chop_extremes() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut s = LoopState::new(params(20.3, 1.0)).unwrap();
        map_in(&mut s, tag(0, 0), TimeNs::ZERO).unwrap();
        let e = chop_out(&mut s, 0, 1.0, &mut r).unwrap().unwrap();
        assert_eq!(e.cycles, 1);
        assert_eq!(e.time, TimeNs::from_ns(20.3));
        map_in(&mut s, tag(1, 0), TimeNs::ZERO).unwrap();
        assert!(chop_out(&mut s, 1, 0.0, &mut r).unwrap().is_none());
        assert!(s.is_empty());
        map_in(&mut s, tag(2, 0), TimeNs::ZERO).unwrap();
        assert!(matches!(
            chop_out(&mut s, 2, 1.5, &mut r),
            Err(LoopError::VoltageDomain(_))
        ));
    }

    fn ev(t: f64, kind: SwitchKind, target: SlotId) -> SwitchEvent {
        SwitchEvent {
            time: TimeNs::from_ns(t),
            kind,
            target,
        }
    }

    #[test]
    fn validator_cases() {
        let p = params(20.3, 0.95);
        assert!(validate_sequence(&[ev(0.0, SwitchKind::MapIn, 0)], &p).is_ok());
        let close = [ev(0.0, SwitchKind::MapIn, 0), ev(4.0, SwitchKind::MapIn, 1)];
        let v = validate_sequence(&close, &p).unwrap_err();
        assert!(matches!(v[0], Violation::SlotDisturbance { .. }));
        let fifo = [
            ev(0.0, SwitchKind::MapIn, 0),
            ev(10.0, SwitchKind::MapIn, 1),
            ev(20.3, SwitchKind::MapOutFull, 0),
            ev(30.3, SwitchKind::MapOutFull, 1),
        ];
        assert!(validate_sequence(&fifo, &p).is_ok());
        let respaced = [ev(0.0, SwitchKind::MapIn, 0), ev(20.0, SwitchKind::MapIn, 0)];
        let v = validate_sequence(&respaced, &p).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::SwitchSpacing { .. })));
        let unsorted = [ev(10.0, SwitchKind::MapIn, 0), ev(0.0, SwitchKind::MapOutFull, 0)];
        assert!(validate_sequence(&unsorted, &p)
            .unwrap_err()
            .iter()
            .any(|x| matches!(x, Violation::Unsorted { .. })));
    }

    #[test]
    fn switch_event_serde() {
        let e = ev(20.3, SwitchKind::MapOutPartial { v: 0.5 }, 1);
        let s = serde_json::to_string(&e).unwrap();
        let back: SwitchEvent = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
