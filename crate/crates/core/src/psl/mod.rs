//! Inter-modality fusion as a hinge-loss Markov random field.
//!
//! Four weighted rule templates (agreement, vision-trusted conflict,
//! language-trusted conflict, indecision) are grounded against the two
//! modal results and the trajectory-context atoms, relaxed with
//! Łukasiewicz logic, and solved for the soft truth values of the three
//! `FinalLabel` atoms on the probability simplex.

pub mod ground;
pub mod solver;

use serde::{Deserialize, Serialize};

pub use ground::{
    ground_rules, lukasiewicz_potential, ArgPattern, Atom, AtomKind, AtomPattern, GroundLiteral,
    GroundRule, HingePotential, Literal, RuleTemplate, Term, TARGET_PREDICATE,
};
pub use solver::{map_inference, project_simplex, FusionProblem, Solution, SolverConfig};

use crate::discriminability::DiscriminabilityScores;
use crate::error::{Error, Result};
use crate::evaluators::Modality;
use crate::intra_fusion::ModalResult;
use crate::trajectory::PreferenceLabel;

/// Two soft scores closer than this count as tied when picking the hard label.
pub const LABEL_TIE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PslConfig {
    pub agreement_weight: f64,
    pub vlm_conflict_weight: f64,
    pub llm_conflict_weight: f64,
    pub indecision_weight: f64,
    /// 1 for linear hinges, 2 for squared hinges.
    pub exponent: u8,
    /// When set, confidences are binarized at this threshold instead of
    /// entering the rules as continuous truth values.
    pub confidence_threshold: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for PslConfig {
    fn default() -> Self {
        Self {
            agreement_weight: 1.0,
            vlm_conflict_weight: 0.8,
            llm_conflict_weight: 0.8,
            indecision_weight: 0.6,
            exponent: 1,
            confidence_threshold: None,
            solver: SolverConfig::default(),
        }
    }
}

fn label_pred(m: Modality) -> &'static str {
    match m {
        Modality::Vlm => "VLMLabel",
        Modality::Llm => "LLMLabel",
    }
}

fn context_pred(m: Modality) -> &'static str {
    match m {
        Modality::Vlm => "VDHigh",
        Modality::Llm => "TDHigh",
    }
}

/// The four rule templates with weights and exponent from `cfg`.
pub fn fusion_templates(cfg: &PslConfig) -> Vec<RuleTemplate> {
    use ArgPattern::*;
    let final_var = Literal::pos(TARGET_PREDICATE, &[LabelVar]);
    let conf = |m: Modality| Fixed(Term::Modality(m));
    let conflict = |m: Modality, weight: f64| RuleTemplate {
        name: format!("{m}-conflict"),
        body: vec![
            Literal::neg("IsAgree", &[LabelVar]),
            Literal::pos(label_pred(m), &[LabelVar]),
            Literal::pos("ConfHigh", &[conf(m)]),
            Literal::pos(context_pred(m), &[]),
        ],
        head: final_var.clone(),
        weight,
        exponent: cfg.exponent,
    };
    vec![
        RuleTemplate {
            name: "agreement".into(),
            body: vec![
                Literal::pos("IsAgree", &[LabelVar]),
                Literal::pos("ConfHigh", &[ModalityVar]),
            ],
            head: final_var.clone(),
            weight: cfg.agreement_weight,
            exponent: cfg.exponent,
        },
        conflict(Modality::Vlm, cfg.vlm_conflict_weight),
        conflict(Modality::Llm, cfg.llm_conflict_weight),
        RuleTemplate {
            name: "indecision".into(),
            body: vec![
                Literal::neg("ConfHigh", &[conf(Modality::Vlm)]),
                Literal::neg("ConfHigh", &[conf(Modality::Llm)]),
            ],
            head: Literal::pos(TARGET_PREDICATE, &[Fixed(Term::Label(PreferenceLabel::Indecision))]),
            weight: cfg.indecision_weight,
            exponent: cfg.exponent,
        },
    ]
}

/// Observed atoms for one pair.
pub fn observations(
    vlm: &ModalResult,
    llm: &ModalResult,
    ctx: DiscriminabilityScores,
    confidence_threshold: Option<f64>,
) -> Result<Vec<Atom>> {
    if vlm.modality != Modality::Vlm || llm.modality != Modality::Llm {
        return Err(Error::InvalidArgument(format!(
            "expected (VLM, LLM) results, got ({}, {})",
            vlm.modality, llm.modality
        )));
    }
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    let conf = |c: f64| match confidence_threshold {
        Some(t) => indicator(c >= t),
        None => c,
    };
    let mut atoms = Vec::with_capacity(13);
    for l in PreferenceLabel::ALL {
        let agree = vlm.label == l && llm.label == l;
        atoms.push(Atom::observed("IsAgree", vec![Term::Label(l)], indicator(agree))?);
        for r in [vlm, llm] {
            atoms.push(Atom::observed(
                label_pred(r.modality),
                vec![Term::Label(l)],
                indicator(r.label == l),
            )?);
        }
    }
    for r in [vlm, llm] {
        atoms.push(Atom::observed(
            "ConfHigh",
            vec![Term::Modality(r.modality)],
            conf(r.confidence),
        )?);
    }
    atoms.push(Atom::observed("VDHigh", vec![], ctx.vd)?);
    atoms.push(Atom::observed("TDHigh", vec![], ctx.td)?);
    Ok(atoms)
}

/// Builds the grounded, relaxed problem for one pair.
pub fn build_problem(
    vlm: &ModalResult,
    llm: &ModalResult,
    ctx: DiscriminabilityScores,
    cfg: &PslConfig,
) -> Result<(Vec<GroundRule>, FusionProblem)> {
    let obs = observations(vlm, llm, ctx, cfg.confidence_threshold)?;
    let rules = ground_rules(&fusion_templates(cfg), &obs)?;
    let potentials = rules.iter().map(lukasiewicz_potential).collect();
    Ok((rules, FusionProblem { potentials }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPreference {
    pub label: PreferenceLabel,
    /// Soft truth of `FinalLabel(−1)`, `FinalLabel(0)`, `FinalLabel(1)`.
    pub soft_scores: [f64; 3],
    pub objective: f64,
}

/// Argmax of the soft scores; ties go to indecision.
pub fn hard_label(y: &[f64; 3]) -> PreferenceLabel {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<usize> = (0..3).filter(|&i| y[i] >= max - LABEL_TIE_EPS).collect();
    match leaders.as_slice() {
        [i] => PreferenceLabel::ALL[*i],
        _ => PreferenceLabel::Indecision,
    }
}

pub fn fuse_inter(
    vlm: &ModalResult,
    llm: &ModalResult,
    ctx: DiscriminabilityScores,
    cfg: &PslConfig,
) -> Result<FusedPreference> {
    let (_, problem) = build_problem(vlm, llm, ctx, cfg)?;
    let s = map_inference(&problem, &cfg.solver)?;
    Ok(FusedPreference {
        label: hard_label(&s.y),
        soft_scores: s.y,
        objective: s.objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modal(modality: Modality, label: PreferenceLabel, confidence: f64) -> ModalResult {
        ModalResult { label, confidence, modality, raw: vec![] }
    }

    #[test]
    fn grounding_counts() {
        let cfg = PslConfig::default();
        let obs = observations(
            &modal(Modality::Vlm, PreferenceLabel::APreferred, 0.9),
            &modal(Modality::Llm, PreferenceLabel::BPreferred, 0.4),
            DiscriminabilityScores { vd: 0.5, td: 0.5 },
            None,
        )
        .unwrap();
        let tpls = fusion_templates(&cfg);
        let counts: Vec<usize> = tpls
            .iter()
            .map(|t| ground_rules(std::slice::from_ref(t), &obs).unwrap().len())
            .collect();
        assert_eq!(counts, vec![6, 3, 3, 1]);
        assert_eq!(ground_rules(&tpls, &obs).unwrap().len(), 13);
    }

    #[test]
    fn hard_label_ties_go_to_indecision() {
        assert_eq!(hard_label(&[0.0, 0.5, 0.5]), PreferenceLabel::Indecision);
        assert_eq!(hard_label(&[0.2, 0.3, 0.5]), PreferenceLabel::APreferred);
        assert_eq!(hard_label(&[0.2, 0.7, 0.1]), PreferenceLabel::BPreferred);
    }

    #[test]
    fn swapped_roles_are_rejected() {
        let v = modal(Modality::Vlm, PreferenceLabel::APreferred, 0.9);
        assert!(fuse_inter(&v, &v, DiscriminabilityScores::default(), &PslConfig::default()).is_err());
    }
}
