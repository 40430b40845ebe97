//! Plan, preview, execute and gripper session behind the operator's
//! blue/green/red indicator. Pure bookkeeping; the engine does the work.

use teleop_core::planner::{JointTrajectory, PlanFailure, PlanOutcome};
use teleop_core::protocol::ResultCode;

#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Idle,
    Planning(u64),
    Planned(u64, JointTrajectory),
    Executing(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Indicator {
    Blue,
    Green,
    Red,
    None,
}

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::Blue => "blue",
            Indicator::Green => "green",
            Indicator::Red => "red",
            Indicator::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    last_outcome: PlanOutcome,
    indicator: Indicator,
}

impl Default for Session {
    fn default() -> Self {
        Session {
            state: SessionState::Idle,
            last_outcome: PlanOutcome::Pending,
            indicator: Indicator::None,
        }
    }
}

/// The indicator a state and last outcome must show.
pub fn expected_indicator(state: &SessionState, last_outcome: &PlanOutcome) -> Indicator {
    match (state, last_outcome) {
        (SessionState::Planning(_), _) => Indicator::Blue,
        (SessionState::Planned(..), _) => Indicator::Green,
        (SessionState::Idle, PlanOutcome::Failure(_)) => Indicator::Red,
        _ => Indicator::None,
    }
}

impl Session {
    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn indicator(&self) -> Indicator {
        self.indicator
    }

    pub fn last_outcome(&self) -> &PlanOutcome {
        &self.last_outcome
    }

    fn set(&mut self, state: SessionState, indicator: Indicator) {
        self.state = state;
        self.indicator = indicator;
        assert_eq!(
            self.indicator,
            expected_indicator(&self.state, &self.last_outcome),
            "indicator out of step with {:?}",
            self.state
        );
    }

    /// Starts planning. Returns the goal id of a stored plan this discards.
    pub fn request_plan(&mut self, goal_id: u64) -> Result<Option<u64>, ResultCode> {
        let discarded = match &self.state {
            SessionState::Idle => None,
            SessionState::Planned(old, _) => Some(*old),
            SessionState::Planning(_) | SessionState::Executing(_) => return Err(ResultCode::Busy),
        };
        self.last_outcome = PlanOutcome::Pending;
        self.set(SessionState::Planning(goal_id), Indicator::Blue);
        Ok(discarded)
    }

    /// Records a planner result for the goal being planned. Results for
    /// any other goal are stale and ignored.
    pub fn plan_finished(&mut self, goal_id: u64, outcome: &PlanOutcome) -> bool {
        if self.state != SessionState::Planning(goal_id) {
            return false;
        }
        match outcome {
            PlanOutcome::Success(t) => {
                self.last_outcome = outcome.clone();
                self.set(SessionState::Planned(goal_id, t.clone()), Indicator::Green);
            }
            PlanOutcome::Failure(f) => {
                self.last_outcome = PlanOutcome::Failure(*f);
                self.set(SessionState::Idle, Indicator::Red);
            }
            PlanOutcome::Pending => return false,
        }
        true
    }

    /// Takes the stored plan for execution.
    pub fn request_execute(&mut self, goal_id: u64) -> Result<JointTrajectory, ResultCode> {
        match std::mem::replace(&mut self.state, SessionState::Idle) {
            SessionState::Planned(_, t) => {
                self.set(SessionState::Executing(goal_id), Indicator::None);
                Ok(t)
            }
            other => {
                let busy = !matches!(other, SessionState::Idle);
                self.state = other;
                Err(if busy { ResultCode::Busy } else { ResultCode::NoPlan })
            }
        }
    }

    pub fn execute_finished(&mut self, goal_id: u64) -> bool {
        if self.state != SessionState::Executing(goal_id) {
            return false;
        }
        self.set(SessionState::Idle, Indicator::None);
        true
    }

    /// Gripper commands may not overlap a running plan or execution.
    pub fn request_gripper(&self) -> Result<(), ResultCode> {
        match self.state {
            SessionState::Planning(_) | SessionState::Executing(_) => Err(ResultCode::Busy),
            _ => Ok(()),
        }
    }

    /// Cancels the running plan or execution with this goal id.
    pub fn cancel(&mut self, goal_id: u64) -> bool {
        match self.state {
            SessionState::Planning(g) | SessionState::Executing(g) if g == goal_id => {
                self.last_outcome = PlanOutcome::Pending;
                self.set(SessionState::Idle, Indicator::None);
                true
            }
            _ => false,
        }
    }

    pub fn last_failure(&self) -> Option<PlanFailure> {
        match self.last_outcome {
            PlanOutcome::Failure(f) => Some(f),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use teleop_core::arm::JointVector;
    use teleop_core::planner::TrajectoryPoint;

    fn traj(t: f64) -> JointTrajectory {
        JointTrajectory {
            points: vec![
                TrajectoryPoint { q: JointVector::zeros(), time_from_start: 0.0 },
                TrajectoryPoint { q: JointVector::repeat(0.1), time_from_start: t },
            ],
        }
    }

    #[test]
    fn plan_success_goes_blue_then_green() {
        let mut s = Session::default();
        assert_eq!(s.indicator(), Indicator::None);
        s.request_plan(1).unwrap();
        assert_eq!(s.indicator(), Indicator::Blue);
        assert!(s.plan_finished(1, &PlanOutcome::Success(traj(1.0))));
        assert_eq!(s.indicator(), Indicator::Green);
    }

    #[test]
    fn plan_failure_goes_red_until_the_next_plan() {
        let mut s = Session::default();
        s.request_plan(1).unwrap();
        s.plan_finished(1, &PlanOutcome::Failure(PlanFailure::GoalInCollision));
        assert_eq!((s.state(), s.indicator()), (&SessionState::Idle, Indicator::Red));
        assert_eq!(s.request_execute(2), Err(ResultCode::NoPlan));
        assert_eq!(s.indicator(), Indicator::Red);
        s.request_plan(3).unwrap();
        assert_eq!(s.indicator(), Indicator::Blue);
    }

    #[test]
    fn busy_rules() {
        let mut s = Session::default();
        s.request_plan(1).unwrap();
        assert_eq!(s.request_plan(2), Err(ResultCode::Busy));
        assert_eq!(s.request_execute(2), Err(ResultCode::Busy));
        assert_eq!(s.request_gripper(), Err(ResultCode::Busy));
        assert_eq!(s.state(), &SessionState::Planning(1));
        s.plan_finished(1, &PlanOutcome::Success(traj(1.0)));
        assert!(s.request_gripper().is_ok());
        s.request_execute(3).unwrap();
        assert_eq!(s.request_plan(4), Err(ResultCode::Busy));
        assert_eq!(s.request_execute(4), Err(ResultCode::Busy));
        assert!(s.execute_finished(3));
        assert_eq!(s.request_execute(5), Err(ResultCode::NoPlan));
    }

    #[test]
    fn replanning_discards_the_stored_plan() {
        let mut s = Session::default();
        s.request_plan(1).unwrap();
        s.plan_finished(1, &PlanOutcome::Success(traj(1.0)));
        assert_eq!(s.request_plan(2), Ok(Some(1)));
        assert!(!s.plan_finished(1, &PlanOutcome::Success(traj(1.0))));
        s.plan_finished(2, &PlanOutcome::Success(traj(2.0)));
        assert_eq!(s.request_execute(3).unwrap(), traj(2.0));
    }

    #[test]
    fn cancel_clears_the_indicator() {
        let mut s = Session::default();
        s.request_plan(1).unwrap();
        assert!(!s.cancel(9));
        assert!(s.cancel(1));
        assert_eq!((s.state(), s.indicator()), (&SessionState::Idle, Indicator::None));
        assert!(!s.plan_finished(1, &PlanOutcome::Success(traj(1.0))));
    }
}
