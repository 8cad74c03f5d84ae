use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One numbered transition `from -> to` (states 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub number: usize,
    pub from: usize,
    pub to: usize,
}

/// State set, labels and transition matrix of a multi-state model.
///
/// States are 1-based. Cell `(h, j)` of the matrix holds the transition
/// number, assigned row-major over the present cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpec", into = "SystemSpec")]
pub struct TransitionSystem {
    n_states: usize,
    labels: Vec<String>,
    transitions: Vec<Transition>,
}

/// Serialized form: state count, labels and `[from, to]` edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n_states: usize,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    pub edges: Vec<(usize, usize)>,
}

impl TryFrom<SystemSpec> for TransitionSystem {
    type Error = Error;

    fn try_from(s: SystemSpec) -> Result<TransitionSystem> {
        TransitionSystem::build(s.n_states, s.labels, &s.edges)
    }
}

impl From<TransitionSystem> for SystemSpec {
    fn from(t: TransitionSystem) -> SystemSpec {
        SystemSpec {
            n_states: t.n_states,
            edges: t.transitions.iter().map(|e| (e.from, e.to)).collect(),
            labels: Some(t.labels),
        }
    }
}

impl TransitionSystem {
    /// Three-state progressive illness-death structure: 1->2, 1->3, 2->3.
    pub fn illness_death() -> TransitionSystem {
        Self::build(
            3,
            Some(vec![
                "healthy".to_string(),
                "recurrence/diseased".to_string(),
                "death".to_string(),
            ]),
            &[(1, 2), (1, 3), (2, 3)],
        )
        .expect("static schema")
    }

    pub fn build(
        n_states: usize,
        labels: Option<Vec<String>>,
        edges: &[(usize, usize)],
    ) -> Result<TransitionSystem> {
        if n_states < 2 {
            return Err(Error::InvalidSystem(
                "at least two states are required".into(),
            ));
        }
        let labels = match labels {
            Some(l) if l.len() != n_states => {
                return Err(Error::InvalidSystem(format!(
                    "{} labels given for {} states",
                    l.len(),
                    n_states
                )))
            }
            Some(l) => l,
            None => (1..=n_states).map(|s| format!("state {s}")).collect(),
        };
        let mut sorted = Vec::with_capacity(edges.len());
        for &(from, to) in edges {
            if from == 0 || to == 0 || from > n_states || to > n_states {
                return Err(Error::InvalidSystem(format!(
                    "edge {from} -> {to} outside 1..={n_states}"
                )));
            }
            if from == to {
                return Err(Error::SelfTransition(from));
            }
            if sorted.contains(&(from, to)) {
                return Err(Error::DuplicateEdge { from, to });
            }
            sorted.push((from, to));
        }
        if sorted.is_empty() {
            return Err(Error::InvalidSystem("no transitions".into()));
        }
        sorted.sort_unstable();
        let transitions = sorted
            .into_iter()
            .enumerate()
            .map(|(i, (from, to))| Transition {
                number: i + 1,
                from,
                to,
            })
            .collect();
        Ok(TransitionSystem {
            n_states,
            labels,
            transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state - 1]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Transition by 1-based number.
    pub fn transition(&self, number: usize) -> Option<Transition> {
        self.transitions.get(number.wrapping_sub(1)).copied()
    }

    pub fn number(&self, from: usize, to: usize) -> Option<usize> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
            .map(|t| t.number)
    }

    /// Transitions leaving `state`, in numbering order.
    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.from == state)
    }

    pub fn targets(&self, state: usize) -> Vec<usize> {
        self.outgoing(state).map(|t| t.to).collect()
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.outgoing(state).next().is_none()
    }

    /// Dense matrix view: `tmat[h-1][j-1]` holds the transition number.
    pub fn tmat(&self) -> Vec<Vec<Option<usize>>> {
        let mut m = vec![vec![None; self.n_states]; self.n_states];
        for t in &self.transitions {
            m[t.from - 1][t.to - 1] = Some(t.number);
        }
        m
    }

    /// `reach[h-1][j-1]` is true when `j` can be reached from `h` in one or more steps.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n_states;
        let mut reach = vec![vec![false; n]; n];
        for t in &self.transitions {
            reach[t.from - 1][t.to - 1] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if reach[k][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    /// True when no state can be revisited.
    pub fn is_progressive(&self) -> bool {
        let reach = self.reachability();
        (0..self.n_states).all(|i| !reach[i][i])
    }

    /// Structural oddities that are reported but not rejected.
    pub fn warnings(&self) -> Vec<String> {
        let reach = self.reachability();
        let mut out = Vec::new();
        for s in 2..=self.n_states {
            if !reach[0][s - 1] {
                out.push(format!("state {s} is not reachable from state 1"));
            }
        }
        if !(1..=self.n_states).any(|s| self.is_absorbing(s)) {
            out.push("no absorbing state".to_string());
        }
        out
    }

    /// Two-character code such as `"01"` for a transition, with states shifted
    /// so that the initial state displays as `base`.
    pub fn display_code(&self, from: usize, to: usize, base: usize) -> String {
        format!("{}{}", from - 1 + base, to - 1 + base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_validates() {
        let sys = TransitionSystem::illness_death();
        let v = serde_json::to_value(&sys).unwrap();
        assert_eq!(v["edges"], serde_json::json!([[1, 2], [1, 3], [2, 3]]));
        assert_eq!(serde_json::from_value::<TransitionSystem>(v).unwrap(), sys);
        let bad = serde_json::json!({"n_states": 2, "edges": [[1, 1]]});
        let e = serde_json::from_value::<TransitionSystem>(bad).unwrap_err();
        assert!(e.to_string().contains("self transition"));
    }

    pub(crate) fn ebmt_edges() -> Vec<(usize, usize)> {
        vec![
            (1, 2),
            (1, 3),
            (1, 5),
            (1, 6),
            (2, 4),
            (2, 5),
            (2, 6),
            (3, 4),
            (3, 5),
            (3, 6),
            (4, 5),
            (4, 6),
        ]
    }

    #[test]
    fn illness_death_layout() {
        let sys = TransitionSystem::illness_death();
        assert_eq!(sys.n_transitions(), 3);
        let cells = sys.tmat().iter().flatten().filter(|c| c.is_some()).count();
        assert_eq!(cells, 3);
        assert_eq!(
            sys.transition(3),
            Some(Transition {
                number: 3,
                from: 2,
                to: 3
            })
        );
        assert_eq!(sys.number(1, 2), Some(1));
        assert_eq!(sys.number(1, 3), Some(2));
        assert_eq!(sys.number(2, 1), None);
        assert_eq!(sys.label(1), "healthy");
        assert!(sys.is_progressive());
        assert_eq!(sys.display_code(1, 2, 0), "01");
        assert_eq!(sys.display_code(2, 3, 0), "12");
    }

    #[test]
    fn ebmt_has_twelve_transitions() {
        let sys = TransitionSystem::build(6, None, &ebmt_edges()).unwrap();
        assert_eq!(sys.n_transitions(), 12);
        assert_eq!(sys.number(4, 6), Some(12));
        assert_eq!(sys.number(1, 6), Some(4));
        assert!(sys.warnings().is_empty());
    }

    #[test]
    fn row_major_numbering_ignores_edge_order() {
        let sys = TransitionSystem::build(3, None, &[(2, 3), (1, 3), (1, 2)]).unwrap();
        assert_eq!(sys.number(1, 2), Some(1));
        assert_eq!(sys.number(1, 3), Some(2));
        assert_eq!(sys.number(2, 3), Some(3));
    }

    #[test]
    fn rejects_self_and_duplicate_edges() {
        assert_eq!(
            TransitionSystem::build(3, None, &[(2, 2)]),
            Err(Error::SelfTransition(2))
        );
        assert_eq!(
            TransitionSystem::build(3, None, &[(1, 2), (1, 2)]),
            Err(Error::DuplicateEdge { from: 1, to: 2 })
        );
        assert!(TransitionSystem::build(1, None, &[]).is_err());
        assert!(TransitionSystem::build(3, None, &[(1, 4)]).is_err());
    }

    #[test]
    fn reversible_edges_allowed() {
        let sys = TransitionSystem::build(2, None, &[(1, 2), (2, 1)]).unwrap();
        assert_eq!(sys.n_transitions(), 2);
        assert!(!sys.is_progressive());
        assert_eq!(sys.warnings(), vec!["no absorbing state".to_string()]);
    }
}
