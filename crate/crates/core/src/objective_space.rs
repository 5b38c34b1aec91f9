//! The combinatorial space of auxiliary objectives.
//!
//! An objective is one point `(d, t, r, o)` in the product of four stage sets:
//! input data, input transformation, model representation and output loss.
//! Spaces are generated by taking the cartesian product of the registered
//! primitives and removing the points matched by validity rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! stage_tag {
    ($(#[$meta:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $(stringify!($variant) => Ok($name::$variant),)+
                    other => Err(Error::UnknownTag(other.to_string())),
                }
            }
        }
    };
}

stage_tag!(
    /// Input data source.
    DataTag { EndTaskData, InDomainData }
);
stage_tag!(
    /// Input transformation.
    TransformTag { BertOp, Mask, Replace, Delete, NoOp }
);
stage_tag!(
    /// Attention pattern used to compute representations.
    ReprTag { Bidirectional, LeftToRight, RightToLeft, RandomFactorized }
);
stage_tag!(
    /// Output loss.
    OutputTag { DenoiseToken, EndTaskLabel, NextToken, TfIdf }
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Data,
    Transform,
    Representation,
    Output,
}

/// One registered primitive of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StagePrimitive {
    Data(DataTag),
    Transform(TransformTag),
    Representation(ReprTag),
    Output(OutputTag),
}

impl StagePrimitive {
    pub fn stage(self) -> Stage {
        match self {
            StagePrimitive::Data(_) => Stage::Data,
            StagePrimitive::Transform(_) => Stage::Transform,
            StagePrimitive::Representation(_) => Stage::Representation,
            StagePrimitive::Output(_) => Stage::Output,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StagePrimitive::Data(t) => t.name(),
            StagePrimitive::Transform(t) => t.name(),
            StagePrimitive::Representation(t) => t.name(),
            StagePrimitive::Output(t) => t.name(),
        }
    }
}

impl fmt::Display for StagePrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One auxiliary objective: a point in the product space plus its dense id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectiveDescriptor {
    pub id: usize,
    pub d: DataTag,
    pub t: TransformTag,
    pub r: ReprTag,
    pub o: OutputTag,
}

impl ObjectiveDescriptor {
    pub fn new(d: DataTag, t: TransformTag, r: ReprTag, o: OutputTag) -> Self {
        ObjectiveDescriptor { id: 0, d, t, r, o }
    }

    pub fn stages(&self) -> (DataTag, TransformTag, ReprTag, OutputTag) {
        (self.d, self.t, self.r, self.o)
    }

    pub fn primitives(&self) -> [StagePrimitive; 4] {
        [
            StagePrimitive::Data(self.d),
            StagePrimitive::Transform(self.t),
            StagePrimitive::Representation(self.r),
            StagePrimitive::Output(self.o),
        ]
    }

    pub fn same_point(&self, other: &ObjectiveDescriptor) -> bool {
        self.stages() == other.stages()
    }
}

impl fmt::Display for ObjectiveDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.d, self.t, self.r, self.o)
    }
}

/// Ordered primitive sets, one per stage. Order is registration order and
/// fixes descriptor ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageSets {
    pub data: Vec<DataTag>,
    pub transform: Vec<TransformTag>,
    pub representation: Vec<ReprTag>,
    pub output: Vec<OutputTag>,
}

impl StageSets {
    /// Task-data space: end-task data only, the full transform and
    /// representation menus, denoising or end-task outputs.
    pub fn task_data() -> Self {
        StageSets {
            data: vec![DataTag::EndTaskData],
            transform: vec![
                TransformTag::BertOp,
                TransformTag::Mask,
                TransformTag::Replace,
                TransformTag::NoOp,
            ],
            representation: ReprTag::ALL.to_vec(),
            output: vec![OutputTag::DenoiseToken, OutputTag::EndTaskLabel],
        }
    }

    /// Task data plus in-domain external data.
    pub fn task_and_domain_data() -> Self {
        StageSets {
            data: vec![DataTag::EndTaskData, DataTag::InDomainData],
            ..Self::task_data()
        }
    }

    pub fn product_size(&self) -> usize {
        self.data.len() * self.transform.len() * self.representation.len() * self.output.len()
    }

    pub fn contains(&self, p: StagePrimitive) -> bool {
        match p {
            StagePrimitive::Data(t) => self.data.contains(&t),
            StagePrimitive::Transform(t) => self.transform.contains(&t),
            StagePrimitive::Representation(t) => self.representation.contains(&t),
            StagePrimitive::Output(t) => self.output.contains(&t),
        }
    }

    /// All registered primitives in stage order, then registration order.
    pub fn primitives(&self) -> Vec<StagePrimitive> {
        let mut out = Vec::new();
        out.extend(self.data.iter().map(|&t| StagePrimitive::Data(t)));
        out.extend(self.transform.iter().map(|&t| StagePrimitive::Transform(t)));
        out.extend(self.representation.iter().map(|&t| StagePrimitive::Representation(t)));
        out.extend(self.output.iter().map(|&t| StagePrimitive::Output(t)));
        out
    }
}

/// A partial assignment of stages; each fixed stage accepts a set of tags.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StagePattern {
    pub data: Option<Vec<DataTag>>,
    pub transform: Option<Vec<TransformTag>>,
    pub representation: Option<Vec<ReprTag>>,
    pub output: Option<Vec<OutputTag>>,
}

impl StagePattern {
    pub fn matches(&self, desc: &ObjectiveDescriptor) -> bool {
        fn ok<T: PartialEq>(set: &Option<Vec<T>>, v: &T) -> bool {
            set.as_ref().is_none_or(|s| s.contains(v))
        }
        ok(&self.data, &desc.d)
            && ok(&self.transform, &desc.t)
            && ok(&self.representation, &desc.r)
            && ok(&self.output, &desc.o)
    }

    pub fn primitives(&self) -> Vec<StagePrimitive> {
        let mut out = Vec::new();
        for t in self.data.iter().flatten() {
            out.push(StagePrimitive::Data(*t));
        }
        for t in self.transform.iter().flatten() {
            out.push(StagePrimitive::Transform(*t));
        }
        for t in self.representation.iter().flatten() {
            out.push(StagePrimitive::Representation(*t));
        }
        for t in self.output.iter().flatten() {
            out.push(StagePrimitive::Output(*t));
        }
        out
    }

    /// Conjunction of two patterns (intersection of accepted sets per stage).
    pub fn and(&self, other: &StagePattern) -> StagePattern {
        fn meet<T: PartialEq + Copy>(a: &Option<Vec<T>>, b: &Option<Vec<T>>) -> Option<Vec<T>> {
            match (a, b) {
                (None, None) => None,
                (Some(x), None) | (None, Some(x)) => Some(x.clone()),
                (Some(x), Some(y)) => Some(x.iter().copied().filter(|v| y.contains(v)).collect()),
            }
        }
        StagePattern {
            data: meet(&self.data, &other.data),
            transform: meet(&self.transform, &other.transform),
            representation: meet(&self.representation, &other.representation),
            output: meet(&self.output, &other.output),
        }
    }

    /// Parses `"t=NoOp & r=Bidirectional|RightToLeft & o=DenoiseToken"`.
    pub fn parse(s: &str) -> Result<StagePattern> {
        let mut pat = StagePattern::default();
        for clause in s.split('&').map(str::trim).filter(|c| !c.is_empty()) {
            let (stage, tags) = clause
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("rule clause `{clause}` is not `stage=Tag`")))?;
            let tags: Vec<&str> = tags.split('|').map(str::trim).collect();
            match stage.trim() {
                "d" | "data" => {
                    pat.data = Some(tags.iter().map(|t| t.parse()).collect::<Result<_>>()?)
                }
                "t" | "transform" => {
                    pat.transform = Some(tags.iter().map(|t| t.parse()).collect::<Result<_>>()?)
                }
                "r" | "representation" => {
                    pat.representation =
                        Some(tags.iter().map(|t| t.parse()).collect::<Result<_>>()?)
                }
                "o" | "output" => {
                    pat.output = Some(tags.iter().map(|t| t.parse()).collect::<Result<_>>()?)
                }
                other => return Err(Error::Config(format!("unknown stage `{other}` in rule"))),
            }
        }
        Ok(pat)
    }
}

impl fmt::Display for StagePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn clause<T: fmt::Display>(key: &str, set: &Option<Vec<T>>) -> Option<String> {
            set.as_ref().map(|s| {
                let tags: Vec<String> = s.iter().map(|t| t.to_string()).collect();
                format!("{key}={}", tags.join("|"))
            })
        }
        let parts: Vec<String> = [
            clause("d", &self.data),
            clause("t", &self.transform),
            clause("r", &self.representation),
            clause("o", &self.output),
        ]
        .into_iter()
        .flatten()
        .collect();
        f.write_str(&parts.join(" & "))
    }
}

/// Exclusion predicate: a descriptor matching `pattern` is removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityRule {
    pub name: String,
    pub pattern: StagePattern,
}

impl ValidityRule {
    pub fn new(name: impl Into<String>, pattern: StagePattern) -> Self {
        ValidityRule {
            name: name.into(),
            pattern,
        }
    }

    pub fn parse(name: impl Into<String>, pattern: &str) -> Result<Self> {
        Ok(ValidityRule::new(name, StagePattern::parse(pattern)?))
    }

    /// Uncorrupted input, fully visible attention and token reconstruction:
    /// the target is readable at its own position.
    pub fn visible_copy() -> Self {
        ValidityRule::new(
            "visible-copy",
            StagePattern {
                transform: Some(vec![TransformTag::NoOp]),
                representation: Some(vec![ReprTag::Bidirectional]),
                output: Some(vec![OutputTag::DenoiseToken]),
                ..Default::default()
            },
        )
    }

    /// Next-token prediction under a representation that can see the next
    /// position.
    pub fn lookahead_next_token() -> Self {
        ValidityRule::new(
            "lookahead-next-token",
            StagePattern {
                representation: Some(vec![ReprTag::Bidirectional, ReprTag::RightToLeft]),
                output: Some(vec![OutputTag::NextToken]),
                ..Default::default()
            },
        )
    }

    /// Deletion paired with a non-token output has no aligned target.
    pub fn delete_needs_token_output() -> Self {
        ValidityRule::new(
            "delete-token-output-only",
            StagePattern {
                transform: Some(vec![TransformTag::Delete]),
                output: Some(vec![OutputTag::EndTaskLabel, OutputTag::TfIdf]),
                ..Default::default()
            },
        )
    }

    pub fn defaults() -> Vec<ValidityRule> {
        vec![ValidityRule::visible_copy()]
    }

    /// Every documented rule, default first.
    pub fn documented() -> Vec<ValidityRule> {
        vec![
            ValidityRule::visible_copy(),
            ValidityRule::lookahead_next_token(),
            ValidityRule::delete_needs_token_output(),
        ]
    }

    pub fn by_name(name: &str) -> Option<ValidityRule> {
        ValidityRule::documented().into_iter().find(|r| r.name == name)
    }
}

/// Provenance of a filtered sub-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentLink {
    pub constraints: StagePattern,
    /// `parent_ids[i]` is the parent-space id of descriptor `i`.
    pub parent_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpace {
    pub stage_sets: StageSets,
    pub descriptors: Vec<ObjectiveDescriptor>,
    pub validity_rules: Vec<ValidityRule>,
    pub parent: Option<ParentLink>,
}

impl ObjectiveSpace {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&ObjectiveDescriptor> {
        self.descriptors.get(id)
    }

    pub fn find(&self, d: DataTag, t: TransformTag, r: ReprTag, o: OutputTag) -> Option<usize> {
        self.descriptors
            .iter()
            .position(|x| x.stages() == (d, t, r, o))
    }

    pub fn contains_point(&self, desc: &ObjectiveDescriptor) -> bool {
        self.descriptors.iter().any(|x| x.same_point(desc))
    }

    /// Task-data preset with the default validity rules.
    pub fn task_data() -> ObjectiveSpace {
        enumerate_space(StageSets::task_data(), ValidityRule::defaults())
            .expect("preset rules reference preset tags")
    }

    pub fn task_and_domain_data() -> ObjectiveSpace {
        enumerate_space(StageSets::task_and_domain_data(), ValidityRule::defaults())
            .expect("preset rules reference preset tags")
    }

    /// Space holding exactly the given points, in order.
    pub fn from_points(points: &[ObjectiveDescriptor]) -> ObjectiveSpace {
        fn push<T: PartialEq + Copy>(v: &mut Vec<T>, x: T) {
            if !v.contains(&x) {
                v.push(x);
            }
        }
        let mut sets = StageSets::default();
        let mut descriptors = Vec::new();
        for p in points {
            push(&mut sets.data, p.d);
            push(&mut sets.transform, p.t);
            push(&mut sets.representation, p.r);
            push(&mut sets.output, p.o);
            if !descriptors.iter().any(|x: &ObjectiveDescriptor| x.same_point(p)) {
                descriptors.push(ObjectiveDescriptor {
                    id: descriptors.len(),
                    ..*p
                });
            }
        }
        ObjectiveSpace {
            stage_sets: sets,
            descriptors,
            validity_rules: Vec::new(),
            parent: None,
        }
    }

    /// One descriptor per line: `id\td\tt\tr\to`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("id\td\tt\tr\to\n");
        for d in &self.descriptors {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", d.id, d.d, d.t, d.r, d.o));
        }
        out
    }
}

/// Cartesian product of the stage sets minus rule matches, in lexicographic
/// stage order with dense ids.
pub fn enumerate_space(stage_sets: StageSets, validity_rules: Vec<ValidityRule>) -> Result<ObjectiveSpace> {
    for rule in &validity_rules {
        if let Some(p) = rule
            .pattern
            .primitives()
            .into_iter()
            .find(|p| !stage_sets.contains(*p))
        {
            return Err(Error::Config(format!(
                "validity rule `{}` references unregistered tag `{}`",
                rule.name, p
            )));
        }
    }
    let mut descriptors = Vec::with_capacity(stage_sets.product_size());
    for &d in &stage_sets.data {
        for &t in &stage_sets.transform {
            for &r in &stage_sets.representation {
                for &o in &stage_sets.output {
                    let desc = ObjectiveDescriptor {
                        id: descriptors.len(),
                        d,
                        t,
                        r,
                        o,
                    };
                    if !validity_rules.iter().any(|rule| rule.pattern.matches(&desc)) {
                        descriptors.push(desc);
                    }
                }
            }
        }
    }
    Ok(ObjectiveSpace {
        stage_sets,
        descriptors,
        validity_rules,
        parent: None,
    })
}

pub const NAMED_OBJECTIVES: &[&str] = &["GPT-style", "XLNet-style", "BERT-style", "TAPT"];

/// Published objectives expressed as taxonomy points.
pub fn named_objective(name: &str) -> Result<ObjectiveDescriptor> {
    use DataTag::EndTaskData;
    use OutputTag::DenoiseToken;
    let desc = match name {
        "GPT-style" => ObjectiveDescriptor::new(
            EndTaskData,
            TransformTag::NoOp,
            ReprTag::LeftToRight,
            DenoiseToken,
        ),
        "XLNet-style" => ObjectiveDescriptor::new(
            EndTaskData,
            TransformTag::NoOp,
            ReprTag::RandomFactorized,
            DenoiseToken,
        ),
        "BERT-style" | "TAPT" => ObjectiveDescriptor::new(
            EndTaskData,
            TransformTag::BertOp,
            ReprTag::Bidirectional,
            DenoiseToken,
        ),
        other => {
            return Err(Error::UnknownObjective {
                name: other.to_string(),
                supported: NAMED_OBJECTIVES.join(", "),
            })
        }
    };
    Ok(desc)
}

/// Sub-space of descriptors matching every fixed stage, re-indexed densely.
pub fn filter_family(space: &ObjectiveSpace, constraints: &StagePattern) -> ObjectiveSpace {
    let mut descriptors = Vec::new();
    let mut parent_ids = Vec::new();
    for d in space.descriptors.iter().filter(|d| constraints.matches(d)) {
        parent_ids.push(d.id);
        descriptors.push(ObjectiveDescriptor {
            id: descriptors.len(),
            ..*d
        });
    }
    // Compose provenance so ids always map back to the root space.
    let (constraints, parent_ids) = match &space.parent {
        Some(link) => (
            link.constraints.and(constraints),
            parent_ids.iter().map(|&i| link.parent_ids[i]).collect(),
        ),
        None => (constraints.clone(), parent_ids),
    };
    ObjectiveSpace {
        stage_sets: space.stage_sets.clone(),
        descriptors,
        validity_rules: space.validity_rules.clone(),
        parent: Some(ParentLink {
            constraints,
            parent_ids,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_count(sets: &StageSets, rules: &[ValidityRule]) -> usize {
        let mut n = 0;
        for &d in DataTag::ALL {
            for &t in TransformTag::ALL {
                for &r in ReprTag::ALL {
                    for &o in OutputTag::ALL {
                        let in_sets = sets.data.contains(&d)
                            && sets.transform.contains(&t)
                            && sets.representation.contains(&r)
                            && sets.output.contains(&o);
                        let desc = ObjectiveDescriptor::new(d, t, r, o);
                        if in_sets && !rules.iter().any(|x| x.pattern.matches(&desc)) {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn task_data_counts() {
        let full = enumerate_space(StageSets::task_data(), vec![]).unwrap();
        assert_eq!(full.len(), 32);
        let ruled = enumerate_space(StageSets::task_data(), ValidityRule::defaults()).unwrap();
        assert_eq!(ruled.len(), 31);
        assert_eq!(
            brute_force_count(&StageSets::task_data(), &ValidityRule::defaults()),
            31
        );
        let both = enumerate_space(StageSets::task_and_domain_data(), vec![]).unwrap();
        assert_eq!(both.len(), 64);
    }

    #[test]
    fn empty_stage_gives_empty_space() {
        let mut sets = StageSets::task_data();
        sets.representation.clear();
        assert!(enumerate_space(sets, vec![]).unwrap().is_empty());
    }

    #[test]
    fn ids_are_dense_and_lexicographic() {
        let space = ObjectiveSpace::task_data();
        for (i, d) in space.descriptors.iter().enumerate() {
            assert_eq!(d.id, i);
        }
        let first = space.descriptors[0];
        assert_eq!(
            first.stages(),
            (
                DataTag::EndTaskData,
                TransformTag::BertOp,
                ReprTag::Bidirectional,
                OutputTag::DenoiseToken
            )
        );
        assert_eq!(space.descriptors[1].o, OutputTag::EndTaskLabel);
    }

    #[test]
    fn unregistered_rule_tag_is_a_config_error() {
        let mut sets = StageSets::task_data();
        sets.transform = vec![TransformTag::Mask];
        let err = enumerate_space(sets, ValidityRule::defaults()).unwrap_err();
        assert!(err.to_string().contains("NoOp"), "{err}");
        let err = StagePattern::parse("t=Shuffle").unwrap_err();
        assert!(err.to_string().contains("Shuffle"));
    }

    #[test]
    fn named_objectives() {
        let gpt = named_objective("GPT-style").unwrap();
        assert_eq!(
            gpt.stages(),
            (
                DataTag::EndTaskData,
                TransformTag::NoOp,
                ReprTag::LeftToRight,
                OutputTag::DenoiseToken
            )
        );
        let xl = named_objective("XLNet-style").unwrap();
        assert_eq!(xl.r, ReprTag::RandomFactorized);
        let bert = named_objective("BERT-style").unwrap();
        assert_eq!(bert.stages(), named_objective("TAPT").unwrap().stages());
        assert_eq!(bert.t, TransformTag::BertOp);
        assert_eq!(bert.r, ReprTag::Bidirectional);
        let err = named_objective("ELMo").unwrap_err().to_string();
        assert!(err.contains("GPT-style") && err.contains("TAPT"), "{err}");
    }

    #[test]
    fn named_objectives_live_in_presets() {
        let space = ObjectiveSpace::task_and_domain_data();
        for name in NAMED_OBJECTIVES {
            assert!(space.contains_point(&named_objective(name).unwrap()));
        }
    }

    #[test]
    fn families_nest() {
        let space = ObjectiveSpace::task_and_domain_data();
        let task_aug = filter_family(
            &space,
            &StagePattern {
                data: Some(vec![DataTag::EndTaskData]),
                ..Default::default()
            },
        );
        assert_eq!(task_aug.len(), 31);
        let label_family = filter_family(
            &space,
            &StagePattern {
                data: Some(vec![DataTag::EndTaskData]),
                output: Some(vec![OutputTag::EndTaskLabel]),
                ..Default::default()
            },
        );
        assert!(label_family.len() < task_aug.len());
        assert!(label_family
            .descriptors
            .iter()
            .all(|d| task_aug.contains_point(d)));
        let point = filter_family(&space, &StagePattern::parse("d=EndTaskData & t=Mask & r=LeftToRight & o=EndTaskLabel").unwrap());
        assert_eq!(point.len(), 1);
        let parent = &point.parent.as_ref().unwrap().parent_ids;
        assert!(space.descriptors[parent[0]].same_point(&point.descriptors[0]));
    }

    #[test]
    fn pattern_roundtrips_through_display() {
        let p = StagePattern::parse("t=NoOp & r=Bidirectional|RightToLeft & o=DenoiseToken").unwrap();
        assert_eq!(StagePattern::parse(&p.to_string()).unwrap(), p);
    }
}
