use std::collections::{HashMap, VecDeque};

use serde::Deserialize;

use crate::data::RegionKind;
use crate::error::{Error, Result};

const DEFAULT_TOML: &str = include_str!("../../data/tm_grammar.toml");

/// Hidden-state machine for the tagger: which states may start or end a
/// sequence, which transitions are allowed, and the region each state
/// reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    names: Vec<String>,
    regions: Vec<RegionKind>,
    allowed: Vec<bool>,
    start: Vec<bool>,
    end: Vec<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSpec {
    name: String,
    region: String,
    #[serde(default)]
    start: bool,
    #[serde(default)]
    end: bool,
    #[serde(default)]
    next: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarSpec {
    state: Vec<StateSpec>,
}

impl Grammar {
    pub fn default_tm() -> Self {
        Grammar::from_toml(DEFAULT_TOML).expect("bundled grammar is valid")
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_TOML
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: GrammarSpec = toml::from_str(text).map_err(|e| Error::Grammar(e.to_string()))?;
        let mut index = HashMap::new();
        for (i, s) in spec.state.iter().enumerate() {
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Grammar(format!("duplicate state {:?}", s.name)));
            }
        }
        let k = spec.state.len();
        let mut g = Grammar {
            names: Vec::with_capacity(k),
            regions: Vec::with_capacity(k),
            allowed: vec![false; k * k],
            start: Vec::with_capacity(k),
            end: Vec::with_capacity(k),
        };
        for (i, s) in spec.state.iter().enumerate() {
            let mut letters = s.region.chars();
            let region = match (letters.next().and_then(RegionKind::from_letter), letters.next()) {
                (Some(r), None) => r,
                _ => return Err(Error::Grammar(format!("state {:?}: bad region {:?}", s.name, s.region))),
            };
            for n in &s.next {
                let j = *index
                    .get(n.as_str())
                    .ok_or_else(|| Error::Grammar(format!("state {:?}: unknown successor {n:?}", s.name)))?;
                g.allowed[i * k + j] = true;
            }
            g.names.push(s.name.clone());
            g.regions.push(region);
            g.start.push(s.start);
            g.end.push(s.end);
        }
        g.validate()?;
        Ok(g)
    }

    /// Builds a grammar directly; used for tests and small fixtures.
    pub fn from_parts(regions: Vec<RegionKind>, allowed: Vec<bool>, start: Vec<bool>, end: Vec<bool>) -> Result<Self> {
        let k = regions.len();
        if allowed.len() != k * k || start.len() != k || end.len() != k {
            return Err(Error::Grammar("transition mask or start/end flags do not match the state count".into()));
        }
        let g = Grammar {
            names: (0..k).map(|i| format!("s{i}")).collect(),
            regions,
            allowed,
            start,
            end,
        };
        g.validate()?;
        Ok(g)
    }

    /// Every transition allowed, every state a start and end state.
    pub fn unconstrained(k: usize) -> Self {
        Grammar::from_parts(vec![RegionKind::Globular; k], vec![true; k * k], vec![true; k], vec![true; k])
            .expect("complete graph is valid")
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_states();
        if k == 0 {
            return Err(Error::Grammar("no states".into()));
        }
        let reach = |seeds: &[bool], forward: bool| {
            let mut seen = seeds.to_vec();
            let mut queue: VecDeque<usize> = (0..k).filter(|&i| seeds[i]).collect();
            while let Some(s) = queue.pop_front() {
                for t in 0..k {
                    let edge = if forward { self.allowed(s, t) } else { self.allowed(t, s) };
                    if edge && !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
            seen
        };
        if let Some(s) = reach(&self.start, true).iter().position(|&r| !r) {
            return Err(Error::Grammar(format!("state {:?} is unreachable from any start state", self.names[s])));
        }
        if let Some(s) = reach(&self.end, false).iter().position(|&r| !r) {
            return Err(Error::Grammar(format!("no end state is reachable from {:?}", self.names[s])));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, s: usize) -> &str {
        &self.names[s]
    }

    pub fn region(&self, s: usize) -> RegionKind {
        self.regions[s]
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.num_states() + to]
    }

    pub fn is_start(&self, s: usize) -> bool {
        self.start[s]
    }

    pub fn is_end(&self, s: usize) -> bool {
        self.end[s]
    }

    pub fn to_toml(&self) -> String {
        let k = self.num_states();
        let mut out = String::new();
        for i in 0..k {
            let next: Vec<String> = (0..k)
                .filter(|&j| self.allowed(i, j))
                .map(|j| format!("{:?}", self.names[j]))
                .collect();
            out.push_str(&format!(
                "[[state]]\nname = {:?}\nregion = \"{}\"\nstart = {}\nend = {}\nnext = [{}]\n\n",
                self.names[i],
                self.regions[i].letter(),
                self.start[i],
                self.end[i],
                next.join(", ")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grammar_shape() {
        let g = Grammar::default_tm();
        assert_eq!(g.num_states(), 18);
        let idx = |n: &str| (0..g.num_states()).find(|&s| g.name(s) == n).unwrap();
        assert!(g.allowed(idx("in"), idx("tm_io1")));
        assert!(!g.allowed(idx("in"), idx("out")));
        assert!(!g.allowed(idx("tm_io3"), idx("out")));
        assert!(g.allowed(idx("tm_io5"), idx("out")));
        assert!(!g.is_start(idx("sp2")));
        assert!(!g.is_end(idx("sp5")));
        assert_eq!(g.region(idx("tm_oi4")), RegionKind::Transmembrane);
    }

    #[test]
    fn toml_round_trip() {
        let g = Grammar::default_tm();
        assert_eq!(Grammar::from_toml(&g.to_toml()).unwrap(), g);
    }

    #[test]
    fn rejects_invalid_grammars() {
        let dead_end = "[[state]]\nname = \"a\"\nregion = \"G\"\nstart = true\nnext = [\"b\"]\n\
                        [[state]]\nname = \"b\"\nregion = \"G\"\n";
        assert!(Grammar::from_toml(dead_end).is_err());
        let orphan = "[[state]]\nname = \"a\"\nregion = \"G\"\nstart = true\nend = true\n\
                      [[state]]\nname = \"b\"\nregion = \"G\"\nend = true\n";
        assert!(Grammar::from_toml(orphan).is_err());
        let unknown = "[[state]]\nname = \"a\"\nregion = \"G\"\nstart = true\nend = true\nnext = [\"zz\"]\n";
        assert!(Grammar::from_toml(unknown).is_err());
        let bad_region = "[[state]]\nname = \"a\"\nregion = \"Q\"\nstart = true\nend = true\n";
        assert!(Grammar::from_toml(bad_region).is_err());
        assert!(Grammar::from_toml("").is_err());
    }
}
