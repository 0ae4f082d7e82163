//! Runs: an initial state and the labelled transitions taken from it.

use std::collections::BTreeSet;

use crate::semantics::{step, Action, HbeState, Violation};

#[derive(Clone, Debug)]
pub struct Run {
    initial: HbeState,
    steps: Vec<(Action, HbeState)>,
    labels: BTreeSet<Action>,
}

impl Run {
    pub fn new(initial: HbeState) -> Run {
        Run { initial, steps: Vec::new(), labels: BTreeSet::new() }
    }

    pub fn initial(&self) -> &HbeState {
        &self.initial
    }

    pub fn last_state(&self) -> &HbeState {
        self.steps.last().map(|(_, s)| s).unwrap_or(&self.initial)
    }

    pub fn steps(&self) -> &[(Action, HbeState)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|(a, _)| a)
    }

    /// The set of labels taken so far.
    pub fn labels(&self) -> &BTreeSet<Action> {
        &self.labels
    }

    pub fn contains_action(&self, a: &Action) -> bool {
        self.labels.contains(a)
    }

    /// All states, starting with the initial one.
    pub fn states(&self) -> impl Iterator<Item = &HbeState> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|(_, s)| s))
    }

    /// Extend the run by one transition.
    pub fn extend(&mut self, a: Action) -> Result<(), Violation> {
        let next = step(self.last_state(), &a)?;
        self.labels.insert(a.clone());
        self.steps.push((a, next));
        Ok(())
    }

    /// The run truncated to its first `n` transitions.
    pub fn prefix(&self, n: usize) -> Run {
        let steps: Vec<_> = self.steps[..n.min(self.steps.len())].to_vec();
        let labels = steps.iter().map(|(a, _)| a.clone()).collect();
        Run { initial: self.initial.clone(), steps, labels }
    }
}
