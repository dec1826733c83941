//! Tasks, fusion groups and fusion setups.
//!
//! A fusion setup is a partition of an application's tasks into groups, one
//! deployed function per group. Setups are always kept in canonical form:
//! tasks sorted inside each group, groups sorted by their smallest member.
//! The textual notation is `(A,B)-(C)`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of a developer-written task. Non-empty, `[A-Za-z0-9_]` only.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskId(String);

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TaskIdError {
    #[error("task name is empty")]
    Empty,
    #[error("task name {0:?} contains characters outside [A-Za-z0-9_]")]
    InvalidChar(String),
}

impl TaskId {
    pub fn new(name: impl Into<String>) -> Result<Self, TaskIdError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TaskIdError::Empty);
        }
        if !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(TaskIdError::InvalidChar(name));
        }
        Ok(TaskId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TaskId {
    type Error = TaskIdError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        TaskId::new(s)
    }
}

impl From<TaskId> for String {
    fn from(t: TaskId) -> String {
        t.0
    }
}

impl FromStr for TaskId {
    type Err = TaskIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::new(s)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for TaskId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for TaskId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// How a task calls another task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallMode {
    Sync,
    Async,
}

impl fmt::Display for CallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallMode::Sync => "sync",
            CallMode::Async => "async",
        })
    }
}

/// A non-empty set of tasks deployed together as one function.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FusionGroup(BTreeSet<TaskId>);

impl FusionGroup {
    pub fn new(tasks: impl IntoIterator<Item = TaskId>) -> Result<Self, SetupError> {
        let mut set = BTreeSet::new();
        for t in tasks {
            if !set.insert(t.clone()) {
                return Err(SetupError::DuplicateTask(t));
            }
        }
        if set.is_empty() {
            return Err(SetupError::EmptyGroup);
        }
        Ok(FusionGroup(set))
    }

    pub fn singleton(task: TaskId) -> Self {
        let mut set = BTreeSet::new();
        set.insert(task);
        FusionGroup(set)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.0.iter()
    }

    pub fn contains(&self, task: &TaskId) -> bool {
        self.0.contains(task)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest member; the group's sort key inside a setup.
    pub fn first(&self) -> &TaskId {
        self.0.iter().next().expect("fusion groups are non-empty")
    }

    /// Canonical label, e.g. `(A,B)`. Also used as the function id.
    pub fn label(&self) -> String {
        let mut s = String::from("(");
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(t.as_str());
        }
        s.push(')');
        s
    }
}

impl fmt::Display for FusionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SetupError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: &'static str },
    #[error("empty fusion group")]
    EmptyGroup,
    #[error("empty task name at byte {0}")]
    EmptyName(usize),
    #[error("invalid task name: {0}")]
    InvalidName(#[from] TaskIdError),
    #[error("task {0} appears more than once")]
    DuplicateTask(TaskId),
    #[error("setup has no groups")]
    Empty,
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} is not assigned to any group")]
    MissingTask(TaskId),
    #[error("task {0} is already alone in its group")]
    AlreadyAlone(TaskId),
    #[error("tasks {0} and {1} are already in the same group")]
    SameGroup(TaskId, TaskId),
}

/// A single-step change to a setup, as proposed by the optimizer.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetupMutation {
    /// Merge the group containing `a` with the group containing `b`.
    Merge { a: TaskId, b: TaskId },
    /// Move `task` out of its multi-task group into its own group.
    SplitOut { task: TaskId },
}

/// A partition of an application's tasks into fusion groups.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FusionSetup {
    groups: Vec<FusionGroup>,
}

impl FusionSetup {
    /// Builds a setup from groups, checking pairwise disjointness.
    pub fn from_groups(groups: impl IntoIterator<Item = FusionGroup>) -> Result<Self, SetupError> {
        let groups: Vec<FusionGroup> = groups.into_iter().collect();
        if groups.is_empty() {
            return Err(SetupError::Empty);
        }
        let mut seen = BTreeSet::new();
        for g in &groups {
            for t in g.tasks() {
                if !seen.insert(t) {
                    return Err(SetupError::DuplicateTask(t.clone()));
                }
            }
        }
        Ok(Self::canonical(groups))
    }

    fn canonical(mut groups: Vec<FusionGroup>) -> Self {
        groups.sort_by(|a, b| a.first().cmp(b.first()));
        FusionSetup { groups }
    }

    /// One group per task.
    pub fn singleton(tasks: impl IntoIterator<Item = TaskId>) -> Result<Self, SetupError> {
        Self::from_groups(tasks.into_iter().map(FusionGroup::singleton))
    }

    /// Everything in one group.
    pub fn all_in_one(tasks: impl IntoIterator<Item = TaskId>) -> Result<Self, SetupError> {
        Self::from_groups(core::iter::once(FusionGroup::new(tasks)?))
    }

    pub fn groups(&self) -> &[FusionGroup] {
        &self.groups
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskId> {
        self.groups.iter().flat_map(|g| g.tasks())
    }

    pub fn task_count(&self) -> usize {
        self.groups.iter().map(FusionGroup::len).sum()
    }

    pub fn group_of(&self, task: &TaskId) -> Option<&FusionGroup> {
        self.groups.iter().find(|g| g.contains(task))
    }

    pub fn group_index_of(&self, task: &TaskId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(task))
    }

    pub fn same_group(&self, a: &TaskId, b: &TaskId) -> bool {
        match (self.group_index_of(a), self.group_index_of(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Checks that the setup covers exactly `tasks`.
    pub fn check_covers<'a>(&self, tasks: impl IntoIterator<Item = &'a TaskId>) -> Result<(), SetupError> {
        let expected: BTreeSet<&TaskId> = tasks.into_iter().collect();
        for t in self.tasks() {
            if !expected.contains(t) {
                return Err(SetupError::UnknownTask(t.clone()));
            }
        }
        for t in &expected {
            if self.group_of(t).is_none() {
                return Err(SetupError::MissingTask((*t).clone()));
            }
        }
        Ok(())
    }

    /// Returns the mutated setup in canonical form.
    pub fn apply(&self, mutation: &SetupMutation) -> Result<FusionSetup, SetupError> {
        match mutation {
            SetupMutation::Merge { a, b } => {
                let ia = self.group_index_of(a).ok_or_else(|| SetupError::UnknownTask(a.clone()))?;
                let ib = self.group_index_of(b).ok_or_else(|| SetupError::UnknownTask(b.clone()))?;
                if ia == ib {
                    return Err(SetupError::SameGroup(a.clone(), b.clone()));
                }
                let mut merged = self.groups[ia].0.clone();
                merged.extend(self.groups[ib].0.iter().cloned());
                let mut groups: Vec<FusionGroup> = self
                    .groups
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != ia && *i != ib)
                    .map(|(_, g)| g.clone())
                    .collect();
                groups.push(FusionGroup(merged));
                Ok(Self::canonical(groups))
            }
            SetupMutation::SplitOut { task } => {
                let i = self.group_index_of(task).ok_or_else(|| SetupError::UnknownTask(task.clone()))?;
                if self.groups[i].len() == 1 {
                    return Err(SetupError::AlreadyAlone(task.clone()));
                }
                let mut groups = self.groups.clone();
                groups[i].0.remove(task);
                groups.push(FusionGroup::singleton(task.clone()));
                Ok(Self::canonical(groups))
            }
        }
    }
}

/// Free-function form of [`FusionSetup::apply`].
pub fn apply_mutation(setup: &FusionSetup, mutation: &SetupMutation) -> Result<FusionSetup, SetupError> {
    setup.apply(mutation)
}

pub fn singleton_setup<'a>(tasks: impl IntoIterator<Item = &'a TaskId>) -> Result<FusionSetup, SetupError> {
    FusionSetup::singleton(tasks.into_iter().cloned())
}

pub fn parse_setup(text: &str) -> Result<FusionSetup, SetupError> {
    text.parse()
}

pub fn format_setup(setup: &FusionSetup) -> String {
    setup.to_string()
}

impl fmt::Display for FusionSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            f.write_str(&g.label())?;
        }
        Ok(())
    }
}

impl FromStr for FusionSetup {
    type Err = SetupError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bytes = text.trim().as_bytes();
        if bytes.is_empty() {
            return Err(SetupError::Empty);
        }
        let mut groups = Vec::new();
        let mut pos = 0;
        loop {
            if bytes.get(pos) != Some(&b'(') {
                return Err(SetupError::Syntax { pos, msg: "expected '('" });
            }
            pos += 1;
            let mut tasks = Vec::new();
            loop {
                let start = pos;
                while pos < bytes.len() && !matches!(bytes[pos], b',' | b')' | b'(' | b'-') {
                    pos += 1;
                }
                if pos == bytes.len() {
                    return Err(SetupError::Syntax { pos, msg: "unbalanced parentheses" });
                }
                if bytes[pos] == b'(' {
                    return Err(SetupError::Syntax { pos, msg: "nested '('" });
                }
                if bytes[pos] == b'-' {
                    return Err(SetupError::Syntax { pos, msg: "unbalanced parentheses" });
                }
                if start == pos {
                    if bytes[pos] == b')' && tasks.is_empty() {
                        return Err(SetupError::EmptyGroup);
                    }
                    return Err(SetupError::EmptyName(start));
                }
                // the scanned range only splits on ASCII delimiters, so it is valid UTF-8
                let name = core::str::from_utf8(&bytes[start..pos]).expect("utf-8 slice");
                tasks.push(TaskId::new(name)?);
                let delim = bytes[pos];
                pos += 1;
                if delim == b')' {
                    break;
                }
            }
            groups.push(FusionGroup::new(tasks)?);
            match bytes.get(pos) {
                None => break,
                Some(b'-') => pos += 1,
                Some(_) => return Err(SetupError::Syntax { pos, msg: "expected '-' between groups" }),
            }
        }
        FusionSetup::from_groups(groups)
    }
}

impl Serialize for FusionSetup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FusionSetup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for FusionGroup {
    type Err = SetupError;

    /// Parses a single group such as `(A,B)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let setup: FusionSetup = s.parse()?;
        match <[FusionGroup; 1]>::try_from(setup.groups) {
            Ok([group]) => Ok(group),
            Err(_) => Err(SetupError::Syntax { pos: 0, msg: "expected exactly one group" }),
        }
    }
}

impl Serialize for FusionGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FusionGroup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<&FusionSetup> for String {
    fn from(s: &FusionSetup) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> TaskId {
        TaskId::new(s).unwrap()
    }

    fn setup(s: &str) -> FusionSetup {
        s.parse().unwrap()
    }

    #[test]
    fn parses_group_notation() {
        let s = setup("(A,B)-(C)");
        assert_eq!(s.groups().len(), 2);
        assert!(s.same_group(&t("A"), &t("B")));
        assert!(!s.same_group(&t("A"), &t("C")));
    }

    #[test]
    fn parse_canonicalizes() {
        assert_eq!(setup("(C)-(B,A)").to_string(), "(A,B)-(C)");
    }

    #[test]
    fn duplicate_tasks_rejected() {
        assert_eq!("(A)-(A,B)".parse::<FusionSetup>(), Err(SetupError::DuplicateTask(t("A"))));
        assert_eq!("(A,A)".parse::<FusionSetup>(), Err(SetupError::DuplicateTask(t("A"))));
    }

    #[test]
    fn syntax_errors() {
        for bad in ["", "(A", "A,B", "(A,B", "(A))", "(A)(B)", "(A)-", "((A))", "(A,)", "(,A)", "(A)-(B"] {
            assert!(bad.parse::<FusionSetup>().is_err(), "{bad:?} should fail");
        }
        assert_eq!("()".parse::<FusionSetup>(), Err(SetupError::EmptyGroup));
        assert!(matches!("(A,)".parse::<FusionSetup>(), Err(SetupError::EmptyName(_))));
        assert!(matches!("(A-B)".parse::<FusionSetup>(), Err(SetupError::Syntax { .. })));
        assert!(matches!("(A B)".parse::<FusionSetup>(), Err(SetupError::InvalidName(_))));
    }

    #[test]
    fn formats_canonically() {
        let s = FusionSetup::from_groups([FusionGroup::new([t("B"), t("A")]).unwrap(), FusionGroup::singleton(t("C"))])
            .unwrap();
        assert_eq!(s.to_string(), "(A,B)-(C)");

        let s = FusionSetup::from_groups([
            FusionGroup::singleton(t("G")),
            FusionGroup::new([t("E"), t("D"), t("B"), t("A")]).unwrap(),
            FusionGroup::singleton(t("F")),
            FusionGroup::singleton(t("C")),
        ])
        .unwrap();
        assert_eq!(s.to_string(), "(A,B,D,E)-(C)-(F)-(G)");

        let iot = "(AS)-(CA,DJ)-(CS,CSA,CSL)-(CT)-(CW,I,SE)";
        assert_eq!(setup("(SE,I,CW)-(CT)-(CSL,CSA,CS)-(DJ,CA)-(AS)").to_string(), iot);
    }

    #[test]
    fn singleton_setups() {
        let s = singleton_setup(&[t("C"), t("A"), t("B")]).unwrap();
        assert_eq!(s.to_string(), "(A)-(B)-(C)");
        assert_eq!(singleton_setup(&[t("A")]).unwrap().to_string(), "(A)");
        assert_eq!(singleton_setup(&[]), Err(SetupError::Empty));
    }

    #[test]
    fn mutations() {
        let s = setup("(A)-(B)");
        let merged = s.apply(&SetupMutation::Merge { a: t("A"), b: t("B") }).unwrap();
        assert_eq!(merged.to_string(), "(A,B)");
        let split = merged.apply(&SetupMutation::SplitOut { task: t("B") }).unwrap();
        assert_eq!(split, s);

        assert_eq!(s.apply(&SetupMutation::SplitOut { task: t("A") }), Err(SetupError::AlreadyAlone(t("A"))));
        assert_eq!(
            merged.apply(&SetupMutation::Merge { a: t("A"), b: t("B") }),
            Err(SetupError::SameGroup(t("A"), t("B")))
        );
        assert_eq!(
            setup("(A,B,D)-(C)").apply(&SetupMutation::Merge { a: t("A"), b: t("E") }),
            Err(SetupError::UnknownTask(t("E")))
        );
    }

    #[test]
    fn coverage_check() {
        let s = setup("(A,B)-(C)");
        assert!(s.check_covers(&[t("A"), t("B"), t("C")]).is_ok());
        assert_eq!(s.check_covers(&[t("A"), t("B")]), Err(SetupError::UnknownTask(t("C"))));
        assert_eq!(s.check_covers(&[t("A"), t("B"), t("C"), t("D")]), Err(SetupError::MissingTask(t("D"))));
    }

    #[test]
    fn task_names_are_case_sensitive() {
        let s = setup("(a)-(A)");
        assert_eq!(s.to_string(), "(A)-(a)");
        assert!(TaskId::new("").is_err());
        assert!(TaskId::new("a-b").is_err());
        assert!(TaskId::new("task_1").is_ok());
    }
}
