//! Browser bindings: generate a problem, let the symbolic speaker describe
//! it, and let the symbolic listener answer whatever message the page sends.
//!
//! Build with `wasm-pack build crates/demo --target web --out-dir www/pkg`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasoning_game::agents::{extract_rules, Fallback, OracleCodebook, OracleListener, OracleSpeaker};
use reasoning_game::forge::{audit_problem, derive_seed, Forge, ForgeConfig, Problem};
use reasoning_game::game::{ChannelConfig, Decode, Listener, ListenerView, Message, Speaker, SpeakerView};
use reasoning_game::rules::{AttributeDomain, RuleSet, RuleVector, Value};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const ATTRIBUTES: usize = 4;

#[derive(Serialize)]
struct ProblemView<'a> {
    rules: Vec<String>,
    contexts: &'a [reasoning_game::rules::Panel],
    questions: &'a [reasoning_game::rules::Panel],
    candidates: &'a [reasoning_game::rules::Panel],
    target_index: usize,
}

#[derive(Serialize)]
struct Answer {
    decoded: Option<Vec<String>>,
    prediction: usize,
    correct: bool,
}

#[wasm_bindgen]
pub struct Demo {
    forge: Forge,
    speaker: OracleSpeaker,
    listener: OracleListener,
    seed: u64,
    counter: u64,
    problem: Option<Problem>,
}

fn names(rules: &RuleVector) -> Vec<String> {
    rules.0.iter().map(|r| r.name()).collect()
}

#[wasm_bindgen]
impl Demo {
    /// Four attributes over `0..values`, the eight joint rules and the
    /// default channel.
    #[wasm_bindgen(constructor)]
    pub fn new(values: Value, seed: u64) -> Result<Demo, String> {
        let domain = AttributeDomain::new(values).map_err(|e| e.to_string())?;
        let rule_set = RuleSet::joint();
        let forge = Forge::new(ForgeConfig::new(rule_set.clone(), domain, ATTRIBUTES)).map_err(|e| e.to_string())?;
        let codebook = OracleCodebook::new(rule_set, ATTRIBUTES, ChannelConfig::standard()).map_err(|e| e.to_string())?;
        Ok(Demo {
            forge,
            speaker: OracleSpeaker {
                codebook: codebook.clone(),
            },
            listener: OracleListener {
                codebook,
                domain,
                fallback: Fallback::UniformRandom,
            },
            seed,
            counter: 0,
            problem: None,
        })
    }

    /// JSON array of rule names, in token order.
    pub fn rule_names(&self) -> String {
        let names: Vec<String> = self.forge.rule_set().rules.iter().map(|r| r.name()).collect();
        serde_json::to_string(&names).expect("names serialize")
    }

    /// New problem for comma-separated rule names, or random rules when
    /// `rules` is empty. Returns the problem as JSON.
    pub fn generate(&mut self, rules: &str) -> Result<String, String> {
        self.counter += 1;
        let seed = derive_seed(&[self.seed, self.counter]);
        let set = self.forge.rule_set();
        let rules = if rules.trim().is_empty() {
            let all = set.all_combinations(ATTRIBUTES);
            all[(seed % all.len() as u64) as usize].clone()
        } else {
            let parsed = rules
                .split(',')
                .map(|n| set.by_name(n.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            RuleVector(parsed)
        };
        let p = self.forge.generate_problem(&rules, seed).map_err(|e| e.to_string())?;
        let view = ProblemView {
            rules: names(&p.rules),
            contexts: &p.contexts,
            questions: &p.questions,
            candidates: &p.candidates,
            target_index: p.target_index,
        };
        let json = serde_json::to_string(&view).expect("problem serializes");
        self.problem = Some(p);
        Ok(json)
    }

    /// Tokens the symbolic speaker sends for the current problem; it only
    /// sees the six context panels.
    pub fn speak(&self) -> Result<Vec<u32>, String> {
        let p = self.current()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = self
            .speaker
            .speak(&[SpeakerView::of(p)], Decode::Greedy, &mut rng)
            .map_err(|e| e.to_string())?;
        Ok(m[0].0.clone())
    }

    /// The rules a reader of the contexts alone would infer, as JSON.
    pub fn read_rules(&self) -> Result<String, String> {
        let p = self.current()?;
        let rules = extract_rules(&p.contexts, self.forge.rule_set()).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&names(&rules)).expect("names serialize"))
    }

    /// The symbolic listener's pick for `tokens` (edited freely by the page).
    /// Undecodable messages get a random pick.
    pub fn answer(&self, tokens: Vec<u32>) -> Result<String, String> {
        let p = self.current()?;
        let m = Message(tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.counter, 0xA5]));
        let out = self
            .listener
            .listen(std::slice::from_ref(&m), &[ListenerView::of(p)], Decode::Greedy, &mut rng)
            .map_err(|e| e.to_string())?;
        let prediction = out[0].prediction;
        let answer = Answer {
            decoded: self.listener.codebook.decode(&m).map(|r| names(&r)),
            prediction,
            correct: prediction == p.target_index,
        };
        Ok(serde_json::to_string(&answer).expect("answer serializes"))
    }

    /// Audit violations of the current problem as a JSON array.
    pub fn audit(&self) -> Result<String, String> {
        let p = self.current()?;
        let report = audit_problem(p, self.forge.rule_set(), self.forge.domain());
        let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        Ok(serde_json::to_string(&lines).expect("violations serialize"))
    }
}

impl Demo {
    fn current(&self) -> Result<&Problem, String> {
        self.problem.as_ref().ok_or_else(|| "generate a problem first".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demo {
        let mut d = Demo::new(40, 3).unwrap();
        d.generate("").unwrap();
        d
    }

    #[test]
    fn speaker_message_solves_the_problem() {
        let mut d = demo();
        for _ in 0..20 {
            d.generate("").unwrap();
            let tokens = d.speak().unwrap();
            let a: serde_json::Value = serde_json::from_str(&d.answer(tokens).unwrap()).unwrap();
            assert_eq!(a["correct"], true);
            assert_eq!(d.audit().unwrap(), "[]");
        }
    }

    #[test]
    fn named_rules_round_trip() {
        let mut d = demo();
        let json = d.generate("add, min, constant, progression_2").unwrap();
        let p: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(p["rules"], serde_json::json!(["add", "min", "constant", "progression_2"]));
        assert_eq!(d.read_rules().unwrap(), r#"["add","min","constant","progression_2"]"#);
        let a: serde_json::Value = serde_json::from_str(&d.answer(d.speak().unwrap()).unwrap()).unwrap();
        assert_eq!(a["decoded"], p["rules"]);
    }

    #[test]
    fn bad_input_is_an_error_not_a_panic() {
        assert!(Demo::new(0, 1).is_err());
        let mut d = Demo::new(10, 1).unwrap();
        assert!(d.speak().is_err());
        assert!(d.generate("add,nope,min,max").is_err());
        assert!(d.generate("add").is_err());
        d.generate("").unwrap();
        let a: serde_json::Value = serde_json::from_str(&d.answer(vec![99, 3]).unwrap()).unwrap();
        assert!(a["decoded"].is_null());
        assert!(a["prediction"].as_u64().unwrap() < 8);
    }

    #[test]
    fn rule_names_are_the_joint_rules() {
        let names: Vec<String> = serde_json::from_str(&demo().rule_names()).unwrap();
        assert_eq!(names.len(), 8);
        assert_eq!(names[0], "add");
    }
}
