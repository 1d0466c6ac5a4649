use std::collections::BTreeMap;

use thiserror::Error;

use super::Scope;
use crate::value::Value;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("case attribute `{attribute}` of case `{case_id}` is frozen after case creation")]
    FrozenCaseAttribute { case_id: String, attribute: String },
    #[error("attribute `{0}` is not declared")]
    Undeclared(String),
    #[error("case `{0}` does not exist")]
    UnknownCase(String),
    #[error("case `{0}` already exists")]
    DuplicateCase(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CaseData {
    case_attrs: BTreeMap<String, Value>,
    event_attrs: BTreeMap<String, Value>,
}

/// Layered global / case / event attribute store for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct DataState {
    scopes: BTreeMap<String, Scope>,
    globals: BTreeMap<String, Value>,
    cases: BTreeMap<String, CaseData>,
}

impl DataState {
    /// `globals` holds the initial global values; `scopes` maps every
    /// declared attribute to its scope.
    pub fn new(scopes: BTreeMap<String, Scope>, globals: BTreeMap<String, Value>) -> Self {
        DataState { scopes, globals, cases: BTreeMap::new() }
    }

    pub fn scope(&self, attribute: &str) -> Option<Scope> {
        self.scopes.get(attribute).copied()
    }

    /// Registers a case with its complete, final case attributes and initial
    /// event attributes.
    pub fn create_case(
        &mut self,
        case_id: &str,
        case_attrs: BTreeMap<String, Value>,
        event_attrs: BTreeMap<String, Value>,
    ) -> Result<(), StateError> {
        if self.cases.contains_key(case_id) {
            return Err(StateError::DuplicateCase(case_id.into()));
        }
        self.cases.insert(case_id.into(), CaseData { case_attrs, event_attrs });
        Ok(())
    }

    pub fn remove_case(&mut self, case_id: &str) {
        self.cases.remove(case_id);
    }

    pub fn get(&self, case_id: &str, attribute: &str) -> Option<&Value> {
        match self.scopes.get(attribute)? {
            Scope::Global => self.globals.get(attribute),
            Scope::Case => self.cases.get(case_id)?.case_attrs.get(attribute),
            Scope::Event => self.cases.get(case_id)?.event_attrs.get(attribute),
        }
    }

    /// Writes a global or event attribute. Case attributes are read-only here.
    pub fn set(&mut self, case_id: &str, attribute: &str, value: Value) -> Result<(), StateError> {
        match self.scopes.get(attribute) {
            None => Err(StateError::Undeclared(attribute.into())),
            Some(Scope::Global) => {
                self.globals.insert(attribute.into(), value);
                Ok(())
            }
            Some(Scope::Case) => {
                Err(StateError::FrozenCaseAttribute { case_id: case_id.into(), attribute: attribute.into() })
            }
            Some(Scope::Event) => {
                let case = self.cases.get_mut(case_id).ok_or_else(|| StateError::UnknownCase(case_id.into()))?;
                case.event_attrs.insert(attribute.into(), value);
                Ok(())
            }
        }
    }

    pub fn globals(&self) -> &BTreeMap<String, Value> {
        &self.globals
    }

    /// Every declared attribute visible to `case_id`, in name order.
    pub fn snapshot(&self, case_id: &str) -> BTreeMap<String, Value> {
        self.scopes.keys().filter_map(|name| Some((name.clone(), self.get(case_id, name)?.clone()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> DataState {
        let scopes = [("g", Scope::Global), ("c", Scope::Case), ("e", Scope::Event)]
            .into_iter()
            .map(|(k, s)| (k.to_string(), s))
            .collect();
        let globals = [("g".to_string(), Value::Num(0.0))].into_iter().collect();
        let mut s = DataState::new(scopes, globals);
        for id in ["a", "b"] {
            s.create_case(
                id,
                [("c".to_string(), Value::cat(id))].into_iter().collect(),
                [("e".to_string(), Value::Num(0.0))].into_iter().collect(),
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn layers_are_separate() {
        let mut s = state();
        s.set("a", "e", Value::Num(5.0)).unwrap();
        s.set("a", "g", Value::Num(9.0)).unwrap();
        assert_eq!(s.get("a", "e"), Some(&Value::Num(5.0)));
        assert_eq!(s.get("b", "e"), Some(&Value::Num(0.0)));
        assert_eq!(s.get("b", "g"), Some(&Value::Num(9.0)));
        assert_eq!(s.get("b", "c"), Some(&Value::cat("b")));
        assert_eq!(s.snapshot("a").len(), 3);
    }

    #[test]
    fn case_attributes_are_frozen() {
        let mut s = state();
        let err = s.set("a", "c", Value::cat("z")).unwrap_err();
        assert!(matches!(err, StateError::FrozenCaseAttribute { .. }));
        assert_eq!(s.get("a", "c"), Some(&Value::cat("a")));
    }

    #[test]
    fn errors() {
        let mut s = state();
        assert!(s.set("a", "nope", Value::Num(1.0)).is_err());
        assert!(s.set("zz", "e", Value::Num(1.0)).is_err());
        assert!(s.create_case("a", BTreeMap::new(), BTreeMap::new()).is_err());
    }
}
