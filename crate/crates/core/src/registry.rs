//! Name-keyed constructor tables for runtime-selected variants.

use crate::error::{Error, Result};

struct Entry<T> {
    name: &'static str,
    summary: &'static str,
    make: Box<dyn Fn() -> T + Send + Sync>,
}

/// Ordered map from names to constructors. `T` is typically a boxed trait
/// object or a configuration value.
pub struct Registry<T> {
    kind: &'static str,
    entries: Vec<Entry<T>>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds `name`; a later registration under the same name replaces it.
    pub fn register(
        &mut self,
        name: &'static str,
        summary: &'static str,
        make: impl Fn() -> T + Send + Sync + 'static,
    ) {
        let entry = Entry {
            name,
            summary,
            make: Box::new(make),
        };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn create(&self, name: &str) -> Result<T> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.make)())
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    /// `(name, summary)` pairs in registration order.
    pub fn summaries(&self) -> Vec<(&'static str, &'static str)> {
        self.entries.iter().map(|e| (e.name, e.summary)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_replace_and_unknown() {
        let mut r: Registry<u32> = Registry::new("thing");
        r.register("a", "first", || 1);
        r.register("b", "second", || 2);
        r.register("a", "first again", || 3);
        assert_eq!(r.create("a").unwrap(), 3);
        assert_eq!(r.names(), vec!["a", "b"]);
        assert!(r.contains("b") && !r.contains("c"));
        match r.create("c") {
            Err(Error::UnknownName {
                kind, available, ..
            }) => {
                assert_eq!(kind, "thing");
                assert_eq!(available, "a, b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
