use std::collections::HashSet;

use super::window::{situate, HistoryWindow};
use super::{ClockRegression, Condition, ConfigError, Rule, RuleKind, StatusEvent};
use crate::ingestion::SensorReading;
use crate::spatial::{SensorId, SpatialModel};

/// Mutable state of one rule's automaton.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleState {
    pub raised: bool,
    /// Earliest unexpired deadline of an unanswered trigger.
    pub deadline: Option<u64>,
}

fn event(rule: &Rule, model: &SpatialModel, condition: Condition, timestamp: u64, sensor: &SensorId) -> StatusEvent {
    StatusEvent {
        rule_id: rule.id.clone(),
        component: rule.component.clone(),
        condition,
        severity: rule.severity,
        anchor: model.anchor_of(&rule.component).unwrap_or_default(),
        timestamp,
        message: rule.render_message(sensor),
    }
}

/// Evaluates a threshold-sustained rule against the newest reading of its
/// sensor. Raises once the predicate has held on every reading spanning at
/// least `sustain_ms`; clears on the first violating reading.
pub fn eval_threshold_sustained(
    rule: &Rule,
    state: &mut RuleState,
    window: &HistoryWindow,
    model: &SpatialModel,
) -> Option<StatusEvent> {
    let RuleKind::ThresholdSustained { when, sustain_ms } = &rule.kind else {
        return None;
    };
    let latest = window.latest(&when.sensor)?;
    let now = latest.reading.timestamp;
    if !when.predicate.matches(&latest.reading.value) {
        if state.raised {
            state.raised = false;
            return Some(event(rule, model, Condition::Cleared, now, &when.sensor));
        }
        return None;
    }
    if state.raised {
        return None;
    }
    let run_start = window
        .readings(&when.sensor)
        .rev()
        .take_while(|r| when.predicate.matches(&r.reading.value))
        .last()
        .map_or(now, |r| r.reading.timestamp);
    if now - run_start >= *sustain_ms {
        state.raised = true;
        return Some(event(rule, model, Condition::Raised, now, &when.sensor));
    }
    None
}

/// Feeds one reading to an absence-after-trigger rule. An expected reading
/// answers every outstanding trigger and clears a raised fault; a trigger
/// reading arms a deadline. Deadlines are fired by [`fire_timeout`].
pub fn eval_absence_after_trigger(
    rule: &Rule,
    state: &mut RuleState,
    reading: &SensorReading,
    model: &SpatialModel,
) -> Option<StatusEvent> {
    let RuleKind::AbsenceAfterTrigger { trigger, expect, timeout_ms } = &rule.kind else {
        return None;
    };
    let mut out = None;
    if reading.sensor == expect.sensor && expect.predicate.matches(&reading.value) {
        state.deadline = None;
        if state.raised {
            state.raised = false;
            out = Some(event(rule, model, Condition::Cleared, reading.timestamp, &expect.sensor));
        }
    }
    if reading.sensor == trigger.sensor && trigger.predicate.matches(&reading.value) {
        let d = reading.timestamp.saturating_add(*timeout_ms);
        state.deadline = Some(state.deadline.map_or(d, |cur| cur.min(d)));
    }
    out
}

/// Fires an armed deadline if `deadline <= now`.
pub fn fire_timeout(rule: &Rule, state: &mut RuleState, now: u64, model: &SpatialModel) -> Option<StatusEvent> {
    let RuleKind::AbsenceAfterTrigger { expect, .. } = &rule.kind else {
        return None;
    };
    let deadline = state.deadline.filter(|d| *d <= now)?;
    state.deadline = None;
    if state.raised {
        return None;
    }
    state.raised = true;
    Some(event(rule, model, Condition::Raised, deadline, &expect.sensor))
}

/// The rule engine. One logical consumer drives it; output is a pure
/// function of the sequence of [`process`](Engine::process) and
/// [`advance_clock`](Engine::advance_clock) calls.
#[derive(Debug, Clone)]
pub struct Engine {
    model: SpatialModel,
    rules: Vec<Rule>,
    states: Vec<RuleState>,
    window: HistoryWindow,
    clock_ms: Option<u64>,
    quarantined: u64,
    processed: u64,
}

impl Engine {
    pub fn new(model: SpatialModel, rules: Vec<Rule>) -> Result<Engine, Vec<ConfigError>> {
        Engine::with_window(model, rules, HistoryWindow::default())
    }

    pub fn with_window(
        model: SpatialModel,
        mut rules: Vec<Rule>,
        window: HistoryWindow,
    ) -> Result<Engine, Vec<ConfigError>> {
        let errors = validate_config(&model, &rules, window.horizon_ms());
        if !errors.is_empty() {
            return Err(errors);
        }
        rules.sort_by(|a, b| a.id.cmp(&b.id));
        let states = vec![RuleState::default(); rules.len()];
        Ok(Engine { model, rules, states, window, clock_ms: None, quarantined: 0, processed: 0 })
    }

    pub fn model(&self) -> &SpatialModel {
        &self.model
    }

    /// Rules in evaluation (id) order.
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule_state(&self, id: &str) -> Option<&RuleState> {
        self.rules.iter().position(|r| r.id == id).map(|i| &self.states[i])
    }

    pub fn window(&self) -> &HistoryWindow {
        &self.window
    }

    /// Latest producer time seen.
    pub fn clock_ms(&self) -> Option<u64> {
        self.clock_ms
    }

    /// Readings dropped because their sensor is unbound.
    pub fn quarantined(&self) -> u64 {
        self.quarantined
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Situates `r`, updates history, evaluates the rules that watch its
    /// sensor and fires every deadline up to its timestamp. Events come
    /// back in rule-id order.
    pub fn process(&mut self, r: &SensorReading) -> Vec<StatusEvent> {
        let situated = match situate(&self.model, r) {
            Ok(s) => s,
            Err(_) => {
                self.quarantined += 1;
                return Vec::new();
            }
        };
        self.processed += 1;
        let now = self.clock_ms.map_or(r.timestamp, |c| c.max(r.timestamp));
        self.clock_ms = Some(now);
        self.window.push(situated);
        self.window.prune();

        let mut out = Vec::new();
        for (rule, state) in self.rules.iter().zip(self.states.iter_mut()) {
            match &rule.kind {
                RuleKind::ThresholdSustained { when, .. } => {
                    if when.sensor == r.sensor {
                        out.extend(eval_threshold_sustained(rule, state, &self.window, &self.model));
                    }
                }
                RuleKind::AbsenceAfterTrigger { .. } => {
                    out.extend(eval_absence_after_trigger(rule, state, r, &self.model));
                    out.extend(fire_timeout(rule, state, now, &self.model));
                }
            }
        }
        out
    }

    /// Fires deadlines that are due at `now_ms` without a new reading.
    pub fn advance_clock(&mut self, now_ms: u64) -> Result<Vec<StatusEvent>, ClockRegression> {
        if let Some(current) = self.clock_ms {
            if now_ms < current {
                return Err(ClockRegression { current, requested: now_ms });
            }
        }
        self.clock_ms = Some(now_ms);
        Ok(self
            .rules
            .iter()
            .zip(self.states.iter_mut())
            .filter_map(|(rule, state)| fire_timeout(rule, state, now_ms, &self.model))
            .collect())
    }

    /// Earliest armed deadline across all rules.
    pub fn next_deadline(&self) -> Option<u64> {
        self.states.iter().filter_map(|s| s.deadline).min()
    }
}

fn validate_config(model: &SpatialModel, rules: &[Rule], horizon_ms: u64) -> Vec<ConfigError> {
    let mut errors: Vec<ConfigError> = model.validate().into_iter().map(ConfigError::Model).collect();
    let mut ids = HashSet::new();
    for rule in rules {
        if rule.id.is_empty() {
            errors.push(ConfigError::EmptyRuleId);
        }
        if !ids.insert(rule.id.as_str()) {
            errors.push(ConfigError::DuplicateRule(rule.id.clone()));
        }
        if !model.zones.contains_key(&rule.component) {
            errors.push(ConfigError::UnknownComponent {
                rule: rule.id.clone(),
                component: rule.component.clone(),
            });
        }
        for sensor in rule.kind.sensors() {
            if model.component_of(sensor).is_none() {
                errors.push(ConfigError::UnboundSensor { rule: rule.id.clone(), sensor: sensor.clone() });
            }
        }
        if let RuleKind::ThresholdSustained { sustain_ms, .. } = rule.kind {
            if sustain_ms > horizon_ms {
                errors.push(ConfigError::SustainBeyondHorizon {
                    rule: rule.id.clone(),
                    sustain_ms,
                    horizon_ms,
                });
            }
        }
    }
    errors
}
