//! Counterbalanced assignment of conditions and routes to participants.

use serde::Serialize;
use thiserror::Error;

use crate::script::ConditionKind;

/// Williams design for three treatments: every ordering once, so each
/// condition holds every position and follows every other condition
/// equally often within a block of six.
const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [1, 0, 2], [2, 1, 0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub condition: ConditionKind,
    /// Index into the route list the schedule is applied to.
    pub route: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleRow {
    /// 1-based.
    pub participant: u32,
    pub slots: [Slot; 3],
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("participant count must be positive")]
    NoParticipants,
}

pub fn latin_square_schedule(participants: u32) -> Result<Vec<ScheduleRow>, ScheduleError> {
    if participants == 0 {
        return Err(ScheduleError::NoParticipants);
    }
    Ok((0..participants)
        .map(|p| {
            let order = ORDERS[(p % 6) as usize];
            let slots = order.map(|c| Slot {
                condition: ConditionKind::ALL[c],
                route: (c + p as usize) % 3,
            });
            ScheduleRow { participant: p + 1, slots }
        })
        .collect())
}
