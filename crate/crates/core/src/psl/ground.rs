//! Rule templates, grounding, and Łukasiewicz relaxation into hinge potentials.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::Modality;
use crate::trajectory::PreferenceLabel;

/// Predicate of the inferred atoms.
pub const TARGET_PREDICATE: &str = "FinalLabel";

const MODALITIES: [Modality; 2] = [Modality::Vlm, Modality::Llm];

/// A concrete argument of a ground atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Label(PreferenceLabel),
    Modality(Modality),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Label(l) => write!(f, "{l}"),
            Term::Modality(m) => write!(f, "{m}"),
        }
    }
}

/// An argument slot in a template atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgPattern {
    /// Ranges over the three preference labels.
    LabelVar,
    /// Ranges over the two modalities.
    ModalityVar,
    Fixed(Term),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomKind {
    Observed,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
    /// Truth value in `[0, 1]`; unused for target atoms.
    pub value: f64,
    pub kind: AtomKind,
}

impl Atom {
    pub fn observed(predicate: &str, args: Vec<Term>, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "{predicate}{args:?} has value {value} outside [0, 1]"
            )));
        }
        Ok(Self {
            predicate: predicate.to_string(),
            args,
            value,
            kind: AtomKind::Observed,
        })
    }

    pub fn target(label: PreferenceLabel) -> Self {
        Self {
            predicate: TARGET_PREDICATE.to_string(),
            args: vec![Term::Label(label)],
            value: 0.0,
            kind: AtomKind::Target,
        }
    }

    pub fn target_label(&self) -> Option<PreferenceLabel> {
        match (self.kind, self.args.as_slice()) {
            (AtomKind::Target, [Term::Label(l)]) => Some(*l),
            _ => None,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(Term::to_string).collect();
        write!(f, "{}({})", self.predicate, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomPattern {
    pub predicate: String,
    pub args: Vec<ArgPattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Literal {
    pub atom: AtomPattern,
    pub negated: bool,
}

impl Literal {
    pub fn pos(predicate: &str, args: &[ArgPattern]) -> Self {
        Self {
            atom: AtomPattern {
                predicate: predicate.to_string(),
                args: args.to_vec(),
            },
            negated: false,
        }
    }

    pub fn neg(predicate: &str, args: &[ArgPattern]) -> Self {
        Self {
            negated: true,
            ..Self::pos(predicate, args)
        }
    }
}

/// Weighted implication `body₁ ∧ … ∧ bodyₙ → head` with free label and
/// modality variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTemplate {
    pub name: String,
    pub body: Vec<Literal>,
    pub head: Literal,
    pub weight: f64,
    pub exponent: u8,
}

impl RuleTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rule {}: weight {} must be finite and non-negative",
                self.name, self.weight
            )));
        }
        if !matches!(self.exponent, 1 | 2) {
            return Err(Error::InvalidArgument(format!(
                "rule {}: exponent must be 1 or 2, got {}",
                self.name, self.exponent
            )));
        }
        if self.body.is_empty() {
            return Err(Error::InvalidArgument(format!("rule {} has an empty body", self.name)));
        }
        Ok(())
    }

    fn literals(&self) -> impl Iterator<Item = &Literal> {
        self.body.iter().chain(std::iter::once(&self.head))
    }

    fn uses(&self, var: ArgPattern) -> bool {
        self.literals().any(|l| l.atom.args.contains(&var))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundLiteral {
    pub atom: Atom,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRule {
    pub template: String,
    pub body: Vec<GroundLiteral>,
    pub head: GroundLiteral,
    pub weight: f64,
    pub exponent: u8,
}

impl fmt::Display for GroundRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = |l: &GroundLiteral| format!("{}{}", if l.negated { "¬" } else { "" }, l.atom);
        let body: Vec<String> = self.body.iter().map(lit).collect();
        write!(f, "{}: {} → {}", self.weight, body.join(" ∧ "), lit(&self.head))
    }
}

fn bind(pattern: &AtomPattern, label: Option<PreferenceLabel>, modality: Option<Modality>) -> Vec<Term> {
    pattern
        .args
        .iter()
        .map(|a| match a {
            ArgPattern::LabelVar => Term::Label(label.expect("label variable bound")),
            ArgPattern::ModalityVar => Term::Modality(modality.expect("modality variable bound")),
            ArgPattern::Fixed(t) => *t,
        })
        .collect()
}

fn resolve(lit: &Literal, args: Vec<Term>, observations: &[Atom]) -> Result<GroundLiteral> {
    let name = &lit.atom.predicate;
    let atom = if name == TARGET_PREDICATE {
        match args.as_slice() {
            [Term::Label(l)] => Atom::target(*l),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{TARGET_PREDICATE} takes exactly one label argument"
                )))
            }
        }
    } else {
        if !observations.iter().any(|o| &o.predicate == name) {
            return Err(Error::UnmatchedPredicate(name.clone()));
        }
        observations
            .iter()
            .find(|o| &o.predicate == name && o.args == args)
            .cloned()
            .ok_or_else(|| {
                let shown: Vec<String> = args.iter().map(Term::to_string).collect();
                Error::UnmatchedPredicate(format!("{name}({})", shown.join(", ")))
            })?
    };
    Ok(GroundLiteral {
        atom,
        negated: lit.negated,
    })
}

/// Enumerates every substitution of the label and modality variables of
/// each template and binds the resulting atoms to observations or targets.
pub fn ground_rules(templates: &[RuleTemplate], observations: &[Atom]) -> Result<Vec<GroundRule>> {
    let mut out = Vec::new();
    for tpl in templates {
        tpl.validate()?;
        let labels: Vec<Option<PreferenceLabel>> = if tpl.uses(ArgPattern::LabelVar) {
            PreferenceLabel::ALL.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let modalities: Vec<Option<Modality>> = if tpl.uses(ArgPattern::ModalityVar) {
            MODALITIES.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for &label in &labels {
            for &modality in &modalities {
                let body = tpl
                    .body
                    .iter()
                    .map(|l| resolve(l, bind(&l.atom, label, modality), observations))
                    .collect::<Result<Vec<_>>>()?;
                let head = resolve(&tpl.head, bind(&tpl.head.atom, label, modality), observations)?;
                out.push(GroundRule {
                    template: tpl.name.clone(),
                    body,
                    head,
                    weight: tpl.weight,
                    exponent: tpl.exponent,
                });
            }
        }
    }
    Ok(out)
}

/// `w · max(0, offset + coeffs · y)^p` over the target vector `y`, indexed
/// by [`PreferenceLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingePotential {
    pub coeffs: [f64; 3],
    pub offset: f64,
    pub weight: f64,
    pub exponent: u8,
}

impl HingePotential {
    /// Signed distance to satisfaction before the hinge.
    pub fn distance(&self, y: &[f64; 3]) -> f64 {
        self.offset + self.coeffs.iter().zip(y).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn value(&self, y: &[f64; 3]) -> f64 {
        let d = self.distance(y).max(0.0);
        self.weight * if self.exponent == 2 { d * d } else { d }
    }

    /// A subgradient (the gradient where differentiable).
    pub fn subgradient(&self, y: &[f64; 3]) -> [f64; 3] {
        let d = self.distance(y);
        if d <= 0.0 {
            return [0.0; 3];
        }
        let scale = self.weight * if self.exponent == 2 { 2.0 * d } else { 1.0 };
        self.coeffs.map(|c| scale * c)
    }
}

/// Łukasiewicz implication distance `Σ bodyᵢ − (n − 1) − head`, with
/// negated literals contributing `1 − value`.
pub fn lukasiewicz_potential(rule: &GroundRule) -> HingePotential {
    let mut coeffs = [0.0; 3];
    let n = rule.body.len() as f64;
    let mut offset = -(n - 1.0);
    let mut add = |lit: &GroundLiteral, sign: f64| match lit.atom.target_label() {
        Some(l) if lit.negated => {
            offset += sign;
            coeffs[l.index()] -= sign;
        }
        Some(l) => coeffs[l.index()] += sign,
        None if lit.negated => offset += sign * (1.0 - lit.atom.value),
        None => offset += sign * lit.atom.value,
    };
    for lit in &rule.body {
        add(lit, 1.0);
    }
    add(&rule.head, -1.0);
    HingePotential {
        coeffs,
        offset,
        weight: rule.weight,
        exponent: rule.exponent,
    }
}
