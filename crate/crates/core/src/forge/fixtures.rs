//! Perturbation-generated candidates in the style of attribute-tree RPM
//! generators. Used as an audit fixture: their distractors carry no
//! distract rule, so the target is the only candidate that fits any rule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Problem};
use crate::rules::{AttributeDomain, Panel, Value};

fn other_value(v: Value, domain: AttributeDomain, rng: &mut impl Rng) -> Value {
    let n = domain.cardinality();
    let x = rng.gen_range(1..n);
    if x >= v {
        x + 1
    } else {
        x
    }
}

/// Replaces the distractors of `problem` with perturbations of its target.
///
/// With at least three attributes the candidates form a three-level tree:
/// each level picks one attribute and one alternative value, and the eight
/// candidates are all on/off combinations. With fewer attributes each
/// distractor perturbs a random non-empty attribute subset.
pub fn perturbation_variant(problem: &Problem, domain: AttributeDomain) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[problem.seed, 0x1_2A7E]));
    let target = problem.candidates[problem.target_index].clone();
    let k = target.0.len();
    let count = problem.candidates.len();
    let mut panels = vec![target.clone()];

    if k >= 3 && count == 8 {
        let mut attrs: Vec<usize> = (0..k).collect();
        attrs.shuffle(&mut rng);
        let levels: Vec<(usize, Value)> = attrs[..3]
            .iter()
            .map(|&a| (a, other_value(target.0[a], domain, &mut rng)))
            .collect();
        for bits in 1..8usize {
            let mut p = target.clone();
            for (l, &(a, v)) in levels.iter().enumerate() {
                if bits & (1 << l) != 0 {
                    p.0[a] = v;
                }
            }
            panels.push(p);
        }
    } else {
        while panels.len() < count {
            let mut p = target.clone();
            let mask = rng.gen_range(1..(1u32 << k.min(31)));
            for a in 0..k {
                if mask & (1 << a) != 0 {
                    p.0[a] = other_value(target.0[a], domain, &mut rng);
                }
            }
            if !panels.contains(&p) {
                panels.push(p);
            }
        }
    }

    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let candidates: Vec<Panel> = order.iter().map(|&i| panels[i].clone()).collect();
    let target_index = order.iter().position(|&i| i == 0).expect("target placed");
    Problem {
        candidates,
        target_index,
        distract_combos: Vec::new(),
        ..problem.clone()
    }
}
