use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Embedder,
    HotGraph,
    ColdIndex,
    SparseIndex,
    Cache,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Embedder,
        Component::HotGraph,
        Component::ColdIndex,
        Component::SparseIndex,
        Component::Cache,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Embedder => "embedder",
            Component::HotGraph => "hot_graph",
            Component::ColdIndex => "cold_index",
            Component::SparseIndex => "sparse_index",
            Component::Cache => "cache",
        }
    }

    /// Optional components may be evicted to make room; mandatory ones are
    /// needed to answer a query.
    pub fn mandatory(self) -> bool {
        !matches!(self, Component::Embedder | Component::Cache)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Load,
    Unload,
    Evict,
    Refuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub at_ms: u64,
    pub component: Component,
    pub action: Action,
    pub bytes: u64,
    pub loaded_after: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentState {
    pub loaded: bool,
    pub bytes: u64,
    #[serde(skip)]
    last_used: Duration,
}

/// Byte accounting for every resident component against one ceiling.
/// Times are offsets from an arbitrary origin chosen by the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceLedger {
    ceiling: u64,
    idle_unload: Duration,
    components: BTreeMap<Component, ComponentState>,
    events: Vec<LedgerEvent>,
}

const EVENT_CAP: usize = 1024;

impl ResourceLedger {
    pub fn new(ceiling: u64, idle_unload: Duration) -> Self {
        ResourceLedger {
            ceiling,
            idle_unload,
            components: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn ceiling(&self) -> u64 {
        self.ceiling
    }

    pub fn state(&self, c: Component) -> Option<ComponentState> {
        self.components.get(&c).copied()
    }

    pub fn is_loaded(&self, c: Component) -> bool {
        self.components.get(&c).is_some_and(|s| s.loaded)
    }

    pub fn loaded_bytes(&self) -> u64 {
        self.components.values().filter(|s| s.loaded).map(|s| s.bytes).sum()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Record the resident size of `c`; takes effect at its next load.
    pub fn declare(&mut self, c: Component, bytes: u64) {
        let st = self.components.entry(c).or_insert(ComponentState {
            loaded: false,
            bytes,
            last_used: Duration::ZERO,
        });
        if !st.loaded {
            st.bytes = bytes;
        }
    }

    pub fn touch(&mut self, c: Component, now: Duration) {
        if let Some(s) = self.components.get_mut(&c) {
            s.last_used = now;
        }
    }

    fn log(&mut self, now: Duration, component: Component, action: Action, bytes: u64) {
        if self.events.len() == EVENT_CAP {
            self.events.drain(..EVENT_CAP / 2);
        }
        let loaded_after = self.loaded_bytes();
        self.events.push(LedgerEvent {
            at_ms: now.as_millis() as u64,
            component,
            action,
            bytes,
            loaded_after,
        });
    }

    fn itemized(&self, c: Component, bytes: u64) -> String {
        let mut parts: Vec<String> = self
            .components
            .iter()
            .filter(|(_, s)| s.loaded)
            .map(|(k, s)| format!("{k}={}", s.bytes))
            .collect();
        parts.push(format!("requested {c}={bytes}"));
        format!(
            "{} exceeds ceiling {} ({})",
            self.loaded_bytes() + bytes,
            self.ceiling,
            parts.join(", ")
        )
    }

    /// Mark `c` loaded, evicting least-recently-used optional components if
    /// needed. Fails before any state change when the load cannot fit.
    pub fn request_load(&mut self, c: Component, now: Duration) -> Result<Vec<(Component, Action)>> {
        let bytes = match self.components.get(&c) {
            Some(s) if s.loaded => {
                self.touch(c, now);
                return Ok(Vec::new());
            }
            Some(s) => s.bytes,
            None => return Err(Error::InvalidConfig(format!("component {c} was never declared"))),
        };
        let mut victims: Vec<(Component, ComponentState)> = self
            .components
            .iter()
            .filter(|(k, s)| s.loaded && !k.mandatory() && **k != c)
            .map(|(k, s)| (*k, *s))
            .collect();
        victims.sort_by_key(|(k, s)| (s.last_used, *k));
        let mut projected = self.loaded_bytes() + bytes;
        let mut evict = Vec::new();
        for (k, s) in victims {
            if projected <= self.ceiling {
                break;
            }
            projected -= s.bytes;
            evict.push(k);
        }
        if projected > self.ceiling {
            self.log(now, c, Action::Refuse, bytes);
            return Err(Error::BudgetExceeded(self.itemized(c, bytes)));
        }
        let mut actions = Vec::new();
        for k in evict {
            let b = self.components[&k].bytes;
            self.components.get_mut(&k).expect("declared").loaded = false;
            self.log(now, k, Action::Evict, b);
            actions.push((k, Action::Evict));
        }
        let st = self.components.get_mut(&c).expect("declared");
        st.loaded = true;
        st.last_used = now;
        self.log(now, c, Action::Load, bytes);
        actions.push((c, Action::Load));
        Ok(actions)
    }

    /// Change the declared size of `c` and load it at the new size. On
    /// failure the previous state is restored.
    pub fn resize(&mut self, c: Component, bytes: u64, now: Duration) -> Result<Vec<(Component, Action)>> {
        let prev = self.components.get(&c).copied();
        if let Some(s) = self.components.get_mut(&c) {
            s.loaded = false;
        }
        self.declare(c, bytes);
        match self.request_load(c, now) {
            Ok(a) => Ok(a),
            Err(e) => {
                match prev {
                    Some(p) => {
                        self.components.insert(c, p);
                    }
                    None => {
                        self.components.remove(&c);
                    }
                }
                Err(e)
            }
        }
    }

    pub fn unload(&mut self, c: Component, now: Duration) -> bool {
        match self.components.get_mut(&c) {
            Some(s) if s.loaded => {
                s.loaded = false;
                let b = s.bytes;
                self.log(now, c, Action::Unload, b);
                true
            }
            _ => false,
        }
    }

    /// Periodic housekeeping: unload the embedder once it has been idle for
    /// longer than the configured window.
    pub fn governor_tick(&mut self, now: Duration) -> Vec<(Component, Action)> {
        let idle = match self.components.get(&Component::Embedder) {
            Some(s) if s.loaded => now.saturating_sub(s.last_used),
            _ => return Vec::new(),
        };
        if idle > self.idle_unload && self.unload(Component::Embedder, now) {
            vec![(Component::Embedder, Action::Unload)]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn secs(s: u64) -> Duration {
        Duration::from_secs(s)
    }

    fn ledger(ceiling: u64) -> ResourceLedger {
        let mut l = ResourceLedger::new(ceiling, secs(300));
        l.declare(Component::Embedder, 300);
        l.declare(Component::HotGraph, 200);
        l.declare(Component::ColdIndex, 100);
        l.declare(Component::SparseIndex, 100);
        l.declare(Component::Cache, 50);
        l
    }

    #[test]
    fn idle_embedder_unloads() {
        let mut l = ledger(1000);
        l.request_load(Component::Embedder, secs(0)).unwrap();
        assert!(l.governor_tick(secs(0)).is_empty());
        assert!(l.governor_tick(secs(300)).is_empty());
        assert_eq!(l.governor_tick(secs(301)), vec![(Component::Embedder, Action::Unload)]);
        assert!(!l.is_loaded(Component::Embedder));
        l.request_load(Component::Embedder, secs(302)).unwrap();
        assert!(l.is_loaded(Component::Embedder));
    }

    #[test]
    fn touching_resets_idle_clock() {
        let mut l = ledger(1000);
        l.request_load(Component::Embedder, secs(0)).unwrap();
        l.touch(Component::Embedder, secs(200));
        assert!(l.governor_tick(secs(400)).is_empty());
        assert_eq!(l.governor_tick(secs(501)).len(), 1);
    }

    #[test]
    fn lru_optional_evicted_first() {
        let mut l = ledger(600);
        l.request_load(Component::Cache, secs(1)).unwrap();
        l.request_load(Component::Embedder, secs(2)).unwrap();
        l.request_load(Component::SparseIndex, secs(3)).unwrap();
        // 450 loaded; hot graph needs 200 more than fits with both optional.
        let acts = l.request_load(Component::HotGraph, secs(4)).unwrap();
        assert_eq!(acts, vec![(Component::Cache, Action::Evict), (Component::HotGraph, Action::Load)]);
        assert!(l.is_loaded(Component::Embedder));
        assert!(l.loaded_bytes() <= l.ceiling());
    }

    #[test]
    fn mandatory_overflow_is_itemized_and_stateless() {
        let mut l = ledger(250);
        l.request_load(Component::SparseIndex, secs(0)).unwrap();
        l.request_load(Component::ColdIndex, secs(0)).unwrap();
        let before = l.loaded_bytes();
        let err = l.request_load(Component::HotGraph, secs(1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sparse_index=100") && msg.contains("cold_index=100"), "{msg}");
        assert!(msg.contains("hot_graph=200"), "{msg}");
        assert_eq!(l.loaded_bytes(), before);
        assert!(!l.is_loaded(Component::HotGraph));
        assert_eq!(l.events().last().unwrap().action, Action::Refuse);
    }

    #[test]
    fn resize_restores_on_failure() {
        let mut l = ledger(400);
        l.request_load(Component::SparseIndex, secs(0)).unwrap();
        l.resize(Component::SparseIndex, 300, secs(1)).unwrap();
        assert_eq!(l.loaded_bytes(), 300);
        assert!(l.resize(Component::SparseIndex, 500, secs(2)).is_err());
        assert_eq!(l.state(Component::SparseIndex).unwrap().bytes, 300);
        assert!(l.is_loaded(Component::SparseIndex));
    }

    #[test]
    fn undeclared_component_rejected() {
        let mut l = ResourceLedger::new(10, secs(300));
        assert!(l.request_load(Component::Cache, secs(0)).is_err());
    }

    proptest! {
        #[test]
        fn never_exceeds_ceiling(
            ceiling in 0u64..1500,
            ops in proptest::collection::vec((0usize..5, 0u8..3, 0u64..1000), 1..60),
        ) {
            let mut l = ledger(ceiling);
            for (c, op, t) in ops {
                let c = Component::ALL[c];
                let now = secs(t);
                match op {
                    0 => {
                        let before = l.loaded_bytes();
                        if l.request_load(c, now).is_err() {
                            prop_assert_eq!(l.loaded_bytes(), before);
                        }
                    }
                    1 => { l.unload(c, now); }
                    _ => { l.governor_tick(now); }
                }
                prop_assert!(l.loaded_bytes() <= ceiling);
            }
        }
    }
}
