//! Name-keyed factories for interchangeable strategies.
//!
//! A spec string is `name` or `name:args`; the part after the colon is
//! handed to the factory untouched. [`parse_args`] splits `k=2,rho=0.5`
//! style argument lists.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} `{name}` (known: {known})")]
    Unknown { kind: &'static str, name: String, known: String },
    #[error("{kind} `{name}`: {detail}")]
    Invalid { kind: &'static str, name: String, detail: String },
}

type Factory<C, T> = Box<dyn Fn(&str, &C) -> Result<Box<T>, String> + Send + Sync>;

/// Factories producing `Box<T>` from an argument string and a context `C`.
pub struct Registry<C, T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<&'static str, Factory<C, T>>,
}

impl<C, T: ?Sized> fmt::Debug for Registry<C, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("kind", &self.kind).field("names", &self.names()).finish()
    }
}

impl<C, T: ?Sized> Registry<C, T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, factories: BTreeMap::new() }
    }

    pub fn register(
        &mut self,
        name: &'static str,
        factory: impl Fn(&str, &C) -> Result<Box<T>, String> + Send + Sync + 'static,
    ) -> &mut Self {
        self.factories.insert(name, Box::new(factory));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(split_spec(name).0)
    }

    pub fn create(&self, spec: &str, ctx: &C) -> Result<Box<T>, RegistryError> {
        let (name, args) = split_spec(spec);
        let factory = self.factories.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        factory(args, ctx).map_err(|detail| RegistryError::Invalid {
            kind: self.kind,
            name: name.to_string(),
            detail,
        })
    }
}

fn split_spec(spec: &str) -> (&str, &str) {
    let spec = spec.trim();
    match spec.split_once(':') {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (spec, ""),
    }
}

/// Parses `a=1,b=2` into pairs. A bare value is keyed by `positional`.
pub fn parse_args(args: &str, positional: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').unwrap_or((positional, part));
        let v: f64 = value.trim().parse().map_err(|_| format!("`{part}` is not a number"))?;
        out.insert(key.trim().to_string(), v);
    }
    Ok(out)
}

/// Fails on keys outside `allowed`.
pub fn check_keys(args: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<(), String> {
    match args.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(format!("unexpected argument `{k}` (allowed: {})", allowed.join(", "))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape {
        fn area(&self) -> f64;
    }
    struct Square(f64);
    impl Shape for Square {
        fn area(&self) -> f64 {
            self.0 * self.0
        }
    }

    fn shapes() -> Registry<(), dyn Shape> {
        let mut r: Registry<(), dyn Shape> = Registry::new("shape");
        r.register("square", |args, _| {
            let a = parse_args(args, "side")?;
            Ok(Box::new(Square(a.get("side").copied().unwrap_or(1.0))))
        });
        r
    }

    #[test]
    fn lookup_with_args() {
        let r = shapes();
        assert_eq!(r.create("square", &()).unwrap().area(), 1.0);
        assert_eq!(r.create("square:3", &()).unwrap().area(), 9.0);
        assert_eq!(r.create("square:side=2", &()).unwrap().area(), 4.0);
    }

    #[test]
    fn unknown_lists_known_names() {
        match shapes().create("circle", &()) {
            Err(RegistryError::Unknown { known, .. }) => assert_eq!(known, "square"),
            _ => panic!("expected unknown"),
        }
        assert!(matches!(shapes().create("square:x", &()), Err(RegistryError::Invalid { .. })));
    }
}
