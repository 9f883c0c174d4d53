//! Name-keyed registries of interchangeable strategies.
//!
//! Activation kernels and intervention target selectors are each selected at
//! runtime by name. A registry maps that name to a constructor taking the
//! strategy's parameter struct.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Ctor<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    ctors: BTreeMap<String, Ctor<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            ctors: BTreeMap::new(),
        }
    }

    /// Register a constructor, replacing any previous entry of the same name.
    pub fn register<F>(&mut self, name: &str, ctor: F) -> &mut Self
    where
        F: Fn(&P) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.ctors.insert(name.to_string(), Box::new(ctor));
        self
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.ctors.get(name) {
            Some(ctor) => ctor(params),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.ctors.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.ctors.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Hello(String);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn lookup_by_name() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("hello", |who: &String| Ok(Box::new(Hello(who.clone())) as Box<dyn Greeter>));
        let g = reg.create("hello", &"there".to_string()).unwrap();
        assert_eq!(g.greet(), "hello there");
        assert!(reg.contains("hello"));
        let err = reg.create("bye", &String::new()).err().unwrap();
        assert!(err.to_string().contains("available: hello"));
    }
}
