//! Prompt assembly and the prompting strategies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bounds::BoundsKey;
use crate::model::ModelSpec;
use crate::rules::RuleId;

pub const DOMINANT_LANGUAGE: &str = "en";
pub const TEMPLATE_ID: &str = "text2mip";

const BUILTIN_TRANSLATIONS: &str = include_str!("../data/translations.json");
const BUILTIN_FEW_SHOT: &str = include_str!("../data/few_shot.json");

pub const REQUIRED_FORMAT: &str = "{'set': [[lb1, ub1], [lb2,ub2]...], 'hyper-parameter': [[lb1, ub1], [lb2,ub2]...], 'parameter': [[lb1, ub1],[lb2, ub2]...], 'parameter_types':[integer, integer, float, ...]}";

const PREAMBLE: &str = "You are required to return a feasible solution distribution under the given constraints.\n\nPlease read the following mixed integer programming (MIP) model and return a JSON object containing the lower and upper bounds for each set, hyper-parameter, and parameter.\n\nSince the model does not include any data, your task is to provide the lower and upper bounds for every set, parameter, and hyper-parameter to construct instances for this model.";

pub const COT_TRIGGER: &str = "Let's think it step by step.";

pub const FORMAT_REMINDER: &str =
    "Your previous answer did not contain a valid JSON object. Return exactly one JSON object in the required format above.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no translation for {rule} in language `{language}`")]
    MissingTranslation { rule: String, language: String },
    #[error("language policy exhausted for {0}")]
    PolicyExhausted(RuleId),
    #[error("strategy {strategy} does not support {operation}")]
    WrongStrategy { strategy: Strategy, operation: &'static str },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("translation file: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShot,
    Cot,
    Tot,
    Sc,
    RepeatRule,
    MlReplace,
    MlAppend,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::ZeroShot,
        Strategy::FewShot,
        Strategy::Cot,
        Strategy::Tot,
        Strategy::Sc,
        Strategy::RepeatRule,
        Strategy::MlReplace,
        Strategy::MlAppend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShot => "few_shot",
            Strategy::Cot => "cot",
            Strategy::Tot => "tot",
            Strategy::Sc => "sc",
            Strategy::RepeatRule => "repeat_rule",
            Strategy::MlReplace => "ml_replace",
            Strategy::MlAppend => "ml_append",
        }
    }

    pub fn is_multilingual(self) -> bool {
        matches!(self, Strategy::MlReplace | Strategy::MlAppend)
    }

    /// Strategies that go back to the model after a failed validation.
    pub fn is_iterative(self) -> bool {
        matches!(self, Strategy::MlReplace | Strategy::MlAppend | Strategy::RepeatRule)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.as_str()).collect();
                format!("unknown strategy `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Rule texts per (rule key, language). Keys are `R4`, `S2` and so on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranslationTable {
    entries: BTreeMap<(String, String), String>,
}

/// Supplies a rule text in a language the table lacks.
pub trait Translator {
    fn translate(&self, text: &str, language: &str) -> Result<String, String>;
}

impl TranslationTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        let t = Self::from_json(BUILTIN_TRANSLATIONS).expect("shipped translation table parses");
        debug_assert!(t.missing_dominant().is_empty());
        t
    }

    /// Parses a `{"R4.zh": "...", ...}` map. Keys starting with `_` are notes.
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let v: Value = serde_json::from_str(text).map_err(|e| PromptError::Table(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| PromptError::Table("top level must be an object".into()))?;
        let mut t = TranslationTable::default();
        for (k, val) in obj {
            if k.starts_with('_') {
                continue;
            }
            let (rule, lang) = k
                .split_once('.')
                .filter(|(r, l)| !r.is_empty() && !l.is_empty())
                .ok_or_else(|| PromptError::Table(format!("key `{k}` is not RULE.LANG")))?;
            let text = val
                .as_str()
                .ok_or_else(|| PromptError::Table(format!("value of `{k}` is not a string")))?;
            t.insert(rule, lang, text);
        }
        Ok(t)
    }

    /// Builtin table overlaid with entries from `text`.
    pub fn builtin_with_overrides(text: &str) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        t.merge(Self::from_json(text)?);
        Ok(t)
    }

    pub fn merge(&mut self, other: TranslationTable) {
        self.entries.extend(other.entries);
    }

    pub fn insert(&mut self, rule: &str, language: &str, text: &str) {
        self.entries
            .insert((rule.to_string(), language.to_string()), text.to_string());
    }

    pub fn get(&self, rule: &str, language: &str) -> Result<&str, PromptError> {
        self.entries
            .get(&(rule.to_string(), language.to_string()))
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingTranslation {
                rule: rule.to_string(),
                language: language.to_string(),
            })
    }

    pub fn contains(&self, rule: &str, language: &str) -> bool {
        self.entries.contains_key(&(rule.to_string(), language.to_string()))
    }

    pub fn languages(&self, rule: &str) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|(r, _)| r == rule)
            .map(|(_, l)| l.as_str())
            .collect()
    }

    /// Rules R1..R9 without a dominant-language entry.
    pub fn missing_dominant(&self) -> Vec<RuleId> {
        RuleId::ALL
            .into_iter()
            .filter(|r| !self.contains(r.as_str(), DOMINANT_LANGUAGE))
            .collect()
    }

    /// Fills a missing entry through `translator`, starting from the dominant text.
    pub fn fill_with(&mut self, translator: &dyn Translator, rule: &str, language: &str) -> Result<(), PromptError> {
        if self.contains(rule, language) {
            return Ok(());
        }
        let source = self.get(rule, DOMINANT_LANGUAGE)?.to_string();
        let text = translator
            .translate(&source, language)
            .map_err(PromptError::Table)?;
        self.insert(rule, language, &text);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, Value> = self
            .entries
            .iter()
            .map(|((r, l), t)| (format!("{r}.{l}"), Value::String(t.clone())))
            .collect();
        serde_json::to_string_pretty(&Value::Object(map)).expect("string map serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSlot {
    pub rule: RuleId,
    pub language: String,
    pub rendered_text: String,
    pub repeat_count: u32,
    /// Languages this slot held before, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub previous_languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub model_json: String,
    pub bounds_json: String,
}

impl FewShotExample {
    pub fn builtin() -> Self {
        let v: Value = serde_json::from_str(BUILTIN_FEW_SHOT).expect("shipped few-shot fixture parses");
        FewShotExample {
            model_json: serde_json::to_string_pretty(&v["model"]).expect("value serializes"),
            bounds_json: serde_json::to_string(&v["bounds"]).expect("value serializes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub strategy: Strategy,
    pub slots: Vec<RuleSlot>,
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot_examples: Option<Vec<FewShotExample>>,
    /// Set after an unparseable answer; adds a format reminder.
    #[serde(default)]
    pub reassert_format: bool,
}

impl PromptPlan {
    pub fn slots_for(&self, rule: RuleId) -> impl Iterator<Item = &RuleSlot> {
        self.slots.iter().filter(move |s| s.rule == rule)
    }

    /// Rules with at least one slot outside the dominant language.
    pub fn translated_rules(&self) -> BTreeSet<RuleId> {
        self.slots
            .iter()
            .filter(|s| s.language != DOMINANT_LANGUAGE)
            .map(|s| s.rule)
            .collect()
    }

    /// Rules whose slots differ between two plans.
    pub fn diff(&self, other: &PromptPlan) -> BTreeSet<RuleId> {
        let group = |p: &PromptPlan| {
            let mut m: BTreeMap<RuleId, Vec<(String, u32)>> = BTreeMap::new();
            for s in &p.slots {
                m.entry(s.rule).or_default().push((s.language.clone(), s.repeat_count));
            }
            m
        };
        let (a, b) = (group(self), group(other));
        a.keys()
            .chain(b.keys())
            .filter(|r| a.get(r) != b.get(r))
            .copied()
            .collect()
    }
}

/// Which language a violated rule moves to next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguagePolicy {
    /// Always the same language; never runs out.
    Fixed(String),
    /// Each language once per rule, in order.
    Rotation(Vec<String>),
}

impl Default for LanguagePolicy {
    fn default() -> Self {
        LanguagePolicy::Fixed("zh".into())
    }
}

impl LanguagePolicy {
    pub fn default_rotation() -> Self {
        LanguagePolicy::Rotation(vec!["zh".into(), "th".into(), "ko".into()])
    }

    /// `tried` lists languages the rule has already been shown in.
    pub fn next(&self, tried: &[String]) -> Option<String> {
        match self {
            LanguagePolicy::Fixed(l) => Some(l.clone()),
            LanguagePolicy::Rotation(list) => list.iter().find(|l| !tried.contains(l)).cloned(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            LanguagePolicy::Fixed(l) => l.clone(),
            LanguagePolicy::Rotation(list) => list.join(">"),
        }
    }
}

/// Whether one iteration rewrites every violated rule or only the first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    #[default]
    Batch,
    Single,
}

/// Holds the translation table and builds plans from it.
#[derive(Debug, Clone)]
pub struct PromptForge {
    pub table: TranslationTable,
    pub rewrite_mode: RewriteMode,
    pub few_shot: FewShotExample,
}

impl Default for PromptForge {
    fn default() -> Self {
        PromptForge::new(TranslationTable::builtin())
    }
}

impl PromptForge {
    pub fn new(table: TranslationTable) -> Self {
        PromptForge {
            table,
            rewrite_mode: RewriteMode::Batch,
            few_shot: FewShotExample::builtin(),
        }
    }

    pub fn slot(&self, rule: RuleId, language: &str) -> Result<RuleSlot, PromptError> {
        Ok(RuleSlot {
            rule,
            language: language.to_string(),
            rendered_text: self.table.get(rule.as_str(), language)?.to_string(),
            repeat_count: 1,
            previous_languages: Vec::new(),
        })
    }

    /// All nine rules in the dominant language.
    pub fn initial_plan(&self, strategy: Strategy) -> Result<PromptPlan, PromptError> {
        let slots = RuleId::ALL
            .into_iter()
            .map(|r| self.slot(r, DOMINANT_LANGUAGE))
            .collect::<Result<_, _>>()?;
        Ok(PromptPlan {
            strategy,
            slots,
            template_id: TEMPLATE_ID.into(),
            few_shot_examples: (strategy == Strategy::FewShot).then(|| vec![self.few_shot.clone()]),
            reassert_format: false,
        })
    }

    /// Moves every slot of `rule` to `language` (a static translated plan).
    pub fn with_language(&self, plan: &PromptPlan, rule: RuleId, language: &str) -> Result<PromptPlan, PromptError> {
        let mut next = plan.clone();
        for slot in next.slots.iter_mut().filter(|s| s.rule == rule) {
            if slot.language != language {
                let fresh = self.slot(rule, language)?;
                slot.previous_languages.push(std::mem::replace(&mut slot.language, fresh.language));
                slot.rendered_text = fresh.rendered_text;
            }
        }
        Ok(next)
    }

    fn targets(&self, plan: &PromptPlan, violated: &BTreeSet<RuleId>) -> Vec<RuleId> {
        let present: Vec<RuleId> = violated
            .iter()
            .copied()
            .filter(|r| plan.slots.iter().any(|s| s.rule == *r))
            .collect();
        match self.rewrite_mode {
            RewriteMode::Batch => present,
            RewriteMode::Single => present.into_iter().take(1).collect(),
        }
    }

    /// Rewrites the slots of violated rules into the policy's next language.
    pub fn apply_mlprompt(
        &self,
        plan: &PromptPlan,
        violated: &BTreeSet<RuleId>,
        policy: &LanguagePolicy,
    ) -> Result<PromptPlan, PromptError> {
        if !plan.strategy.is_multilingual() {
            return Err(PromptError::WrongStrategy {
                strategy: plan.strategy,
                operation: "multilingual rewriting",
            });
        }
        let mut next = plan.clone();
        for rule in self.targets(plan, violated) {
            match plan.strategy {
                Strategy::MlReplace => {
                    let slot = next
                        .slots
                        .iter_mut()
                        .find(|s| s.rule == rule)
                        .expect("target has a slot");
                    let mut tried = slot.previous_languages.clone();
                    tried.push(slot.language.clone());
                    let lang = policy.next(&tried).ok_or(PromptError::PolicyExhausted(rule))?;
                    if lang != slot.language {
                        let text = self.table.get(rule.as_str(), &lang)?.to_string();
                        slot.previous_languages.push(std::mem::replace(&mut slot.language, lang));
                        slot.rendered_text = text;
                    }
                }
                _ => {
                    let tried: Vec<String> = next
                        .slots
                        .iter()
                        .filter(|s| s.rule == rule && s.language != DOMINANT_LANGUAGE)
                        .map(|s| s.language.clone())
                        .collect();
                    let lang = policy.next(&tried).ok_or(PromptError::PolicyExhausted(rule))?;
                    let slot = self.slot(rule, &lang)?;
                    // right after the last slot already holding this rule
                    let at = next
                        .slots
                        .iter()
                        .rposition(|s| s.rule == rule)
                        .expect("target has a slot");
                    next.slots.insert(at + 1, slot);
                }
            }
        }
        Ok(next)
    }

    /// Repeats the text of each violated rule once more.
    pub fn apply_repeat(&self, plan: &PromptPlan, violated: &BTreeSet<RuleId>) -> Result<PromptPlan, PromptError> {
        if plan.strategy != Strategy::RepeatRule {
            return Err(PromptError::WrongStrategy {
                strategy: plan.strategy,
                operation: "rule repetition",
            });
        }
        let mut next = plan.clone();
        for rule in self.targets(plan, violated) {
            if let Some(slot) = next.slots.iter_mut().find(|s| s.rule == rule) {
                slot.repeat_count += 1;
            }
        }
        Ok(next)
    }
}

fn base_prompt(model: &ModelSpec, plan: &PromptPlan, with_examples: bool) -> Result<String, PromptError> {
    if plan.template_id != TEMPLATE_ID {
        return Err(PromptError::UnknownTemplate(plan.template_id.clone()));
    }
    let mut out = String::with_capacity(4096);
    out.push_str(PREAMBLE);
    out.push_str("\n\nThe required JSON format is as follows: \n\n");
    out.push_str(REQUIRED_FORMAT);
    out.push('.');
    if !plan.slots.is_empty() {
        out.push_str("\n\nYou must follow the following rules:\n\n");
        for slot in &plan.slots {
            for _ in 0..slot.repeat_count.max(1) {
                out.push_str(&format!("{}: {}\n", slot.rule.number(), slot.rendered_text));
            }
        }
    }
    if with_examples {
        for (i, ex) in plan.few_shot_examples.iter().flatten().enumerate() {
            out.push_str(&format!(
                "\nExample {}:\nModeling information:\n{}\nAnswer:\n{}\n",
                i + 1,
                ex.model_json,
                ex.bounds_json
            ));
        }
    }
    out.push_str("\nModeling information:\n");
    out.push_str(&model.to_json_pretty());
    Ok(out)
}

/// The full single-call prompt for `plan`. Equal inputs give equal bytes.
pub fn build_prompt(model: &ModelSpec, plan: &PromptPlan) -> Result<String, PromptError> {
    let mut out = base_prompt(model, plan, true)?;
    if plan.reassert_format {
        out.push_str("\n\n");
        out.push_str(FORMAT_REMINDER);
    }
    if plan.strategy == Strategy::Cot {
        out = cot_wrap(&out);
    }
    Ok(out)
}

pub fn cot_wrap(prompt: &str) -> String {
    if prompt.is_empty() {
        COT_TRIGGER.to_string()
    } else {
        format!("{prompt}\n\n{COT_TRIGGER}")
    }
}

/// One tree-of-thought step: produce the value of a single key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TotStep {
    pub key: BoundsKey,
    base: String,
}

impl TotStep {
    /// `parts` holds what earlier steps produced, in order.
    pub fn prompt(&self, parts: &[(BoundsKey, String)]) -> String {
        let mut out = self.base.clone();
        if !parts.is_empty() {
            out.push_str("\n\nParts of the JSON object produced so far:\n");
            for (k, text) in parts {
                out.push_str(&format!("'{}': {}\n", k.as_str(), text));
            }
        }
        out.push_str(&format!(
            "\nNow return only the value of the '{}' key, as a JSON list.",
            self.key.as_str()
        ));
        out
    }
}

pub fn tot_step_prompts(model: &ModelSpec, plan: &PromptPlan) -> Result<Vec<TotStep>, PromptError> {
    let base = base_prompt(model, plan, false)?;
    Ok(BoundsKey::ALL
        .into_iter()
        .map(|key| TotStep {
            key,
            base: base.clone(),
        })
        .collect())
}

/// Folds labelled candidate answers into a request for one final answer.
pub fn sc_aggregate_prompt(
    model: &ModelSpec,
    plan: &PromptPlan,
    labeled_samples: &[(String, bool)],
) -> Result<String, PromptError> {
    let mut out = base_prompt(model, plan, false)?;
    if !labeled_samples.is_empty() {
        out.push_str(&format!(
            "\n\nBelow are {} candidate answers, each marked CORRECT or INCORRECT.\n",
            labeled_samples.len()
        ));
        for (i, (text, ok)) in labeled_samples.iter().enumerate() {
            let label = if *ok { "CORRECT" } else { "INCORRECT" };
            out.push_str(&format!("\nCandidate {} [{label}]:\n{}\n", i + 1, text.trim()));
        }
    }
    out.push_str("\n\nUsing the information above, return one final JSON object that is consistent and follows every rule.");
    Ok(out)
}
