use std::fmt;

use thiserror::Error;

/// Raised when a strategy name is not present in a [`Registry`].
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

/// Name-indexed table of interchangeable strategy constructors.
///
/// Entries keep their registration order so listings are stable.
pub struct Registry<F> {
    kind: &'static str,
    entries: Vec<(&'static str, F)>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, name: &'static str, entry: F) -> Self {
        self.register(name, entry);
        self
    }

    /// Registers `entry` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, entry: F) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name, entry)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&F, UnknownStrategy> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<F> fmt::Debug for Registry<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_unknown() {
        let reg = Registry::new("greeter")
            .with("hello", 1)
            .with("bye", 2);
        assert_eq!(*reg.get("bye").unwrap(), 2);
        let err = reg.get("nope").unwrap_err();
        assert_eq!(err.available, "hello, bye");
        assert!(err.to_string().contains("unknown greeter `nope`"));
    }

    #[test]
    fn register_replaces_in_place() {
        let mut reg = Registry::new("x").with("a", 1).with("b", 2);
        reg.register("a", 10);
        assert_eq!(reg.names(), vec!["a", "b"]);
        assert_eq!(*reg.get("a").unwrap(), 10);
    }
}
