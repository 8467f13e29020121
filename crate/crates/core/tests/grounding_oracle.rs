//! `ground_rule` against a naive matcher that reads the rule in walk order
//! and scans every window fact for every body atom.

use std::collections::BTreeMap;

use ctlogic_core::graph::{EntityId, Fact, GraphBuilder, TemporalGraph, Timestamp, WindowView};
use ctlogic_core::retriever::ground_rule;
use ctlogic_core::rules::{Mode, Rule, RuleCategories};
use proptest::prelude::*;

/// Candidate -> latest τ over all body groundings.
fn naive(rule: &Rule, subject: EntityId, facts: &[Fact]) -> BTreeMap<EntityId, Timestamp> {
    let b = rule.body_relations.len();
    let mut out = BTreeMap::new();
    let mut bind: Vec<Option<EntityId>> = vec![None; rule.num_vars()];
    bind[rule.subject_pattern[0] as usize] = Some(subject);

    // Atoms are matched from the earliest (k = b) to the latest (k = 1).
    fn rec(
        rule: &Rule,
        facts: &[Fact],
        k: usize,
        floor: Option<Timestamp>,
        tau: Option<Timestamp>,
        bind: &mut Vec<Option<EntityId>>,
        out: &mut BTreeMap<EntityId, Timestamp>,
    ) {
        if k == 0 {
            let candidate =
                bind[rule.object_pattern[0] as usize].expect("head object is bound by the body");
            let tau = tau.expect("non-empty body");
            let e = out.entry(candidate).or_insert(tau);
            *e = (*e).max(tau);
            return;
        }
        for f in facts {
            if f.relation != rule.body_relations[k - 1] {
                continue;
            }
            if floor.is_some_and(|t| f.timestamp < t) {
                continue;
            }
            if let Some(c) = &rule.categories {
                if (f.subject_category, f.object_category) != c.body[k - 1] {
                    continue;
                }
            }
            let saved = bind.clone();
            let ok = [
                (rule.subject_pattern[k], f.subject),
                (rule.object_pattern[k], f.object),
            ]
            .into_iter()
            .all(|(v, e)| match bind[v as usize] {
                Some(x) => x == e,
                None => {
                    bind[v as usize] = Some(e);
                    true
                }
            });
            if ok {
                let tau = tau.or(Some(f.timestamp));
                rec(rule, facts, k - 1, Some(f.timestamp), tau, bind, out);
            }
            *bind = saved;
        }
    }
    rec(rule, facts, b, None, None, &mut bind, &mut out);
    out
}

/// A cyclic rule from an entity sequence `e0 e1 .. eb` (the walk closes on e0),
/// with placeholders numbered by first occurrence.
fn rule_from(seq: &[u8], relations: &[u32], cats: Option<&[(u32, u32)]>) -> Rule {
    let b = relations.len() - 1;
    let mut order: Vec<u8> = Vec::new();
    let mut var = |e: u8| -> u8 {
        match order.iter().position(|&x| x == e) {
            Some(p) => p as u8,
            None => {
                order.push(e);
                (order.len() - 1) as u8
            }
        }
    };
    let mut subject_pattern = Vec::new();
    let mut object_pattern = Vec::new();
    // Head (e0, e1), then body atom k = (e_k, e_{k+1}) with e_{b+1} = e0.
    for k in 0..=b {
        let s = seq[k];
        let o = if k == 0 {
            seq[1]
        } else {
            seq[(k + 1) % (b + 1)]
        };
        subject_pattern.push(var(s));
        object_pattern.push(var(o));
    }
    Rule {
        mode: if cats.is_some() {
            Mode::CTLogic
        } else {
            Mode::TLogic
        },
        head_relation: relations[0],
        body_relations: relations[1..].to_vec(),
        subject_pattern,
        object_pattern,
        categories: cats.map(|c| RuleCategories {
            head: c[0],
            body: c[1..].to_vec(),
        }),
        confidence: 0.5,
        body_support: 2,
    }
}

fn graph(rows: &[(u8, u8, u8, u32)]) -> TemporalGraph {
    let mut b = GraphBuilder::new();
    for e in 0..6u8 {
        b.entity(&format!("e{e}"), if e % 2 == 0 { "even" } else { "odd" });
    }
    for r in 0..3u8 {
        b.relation(&format!("r{r}"));
    }
    for &(s, r, o, t) in rows {
        b.add(&format!("e{s}"), &format!("r{r}"), &format!("e{o}"), t);
    }
    b.build().unwrap()
}

fn check(
    rows: &[(u8, u8, u8, u32)],
    seq: &[u8],
    relations: &[u32],
    use_cats: bool,
    subject: u8,
    t_q: u32,
    w: u32,
) -> Result<(), TestCaseError> {
    let g = graph(rows);
    let cat = |e: u8| u32::from(!e.is_multiple_of(2));
    let b = relations.len() - 1;
    let cats: Vec<(u32, u32)> = (0..=b)
        .map(|k| {
            let o = if k == 0 {
                seq[1]
            } else {
                seq[(k + 1) % (b + 1)]
            };
            (cat(seq[k]), cat(o))
        })
        .collect();
    let rule = rule_from(seq, relations, use_cats.then_some(cats.as_slice()));
    prop_assume!(rule.validate().is_ok());
    let view = WindowView::new(&g, t_q, w).unwrap();
    prop_assert!(view.len() <= 100);
    let window: Vec<Fact> = view.facts().copied().collect();
    let expected = naive(&rule, u32::from(subject), &window);
    let got: BTreeMap<EntityId, Timestamp> = ground_rule(&rule, u32::from(subject), view)
        .into_iter()
        .map(|(c, g)| (c, g.tau))
        .collect();
    prop_assert_eq!(got, expected);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ground_rule_matches_naive_matcher(
        rows in prop::collection::vec((0u8..4, 0u8..3, 0u8..4, 0u32..10), 20..50),
        b in 1usize..=3,
        seq in prop::collection::vec(0u8..4, 4),
        relations in prop::collection::vec(0u32..6, 4),
        use_cats in any::<bool>(),
        subject in 0u8..4,
        t_q in 0u32..12,
        w in 1u32..12,
    ) {
        check(&rows, &seq[..=b], &relations[..=b], use_cats, subject, t_q, w)?;
    }
}

#[test]
fn witness_grounding_realises_tau() {
    let rows = [
        (0, 0, 1, 2),
        (1, 1, 2, 3),
        (0, 0, 1, 5),
        (1, 1, 2, 6),
        (1, 1, 3, 4),
    ];
    let g = graph(&rows);
    // r2(e0, e2) <= r0(e0, e1) & r1(e1, e2), as the walk e0 -> e2 -> e1 -> e0.
    let inv0 = g.vocab().relation_id("_r0").unwrap();
    let inv1 = g.vocab().relation_id("_r1").unwrap();
    let r2 = g.vocab().relation_id("r2").unwrap();
    let rule = rule_from(&[0, 2, 1], &[r2, inv1, inv0], None);
    let view = WindowView::new(&g, 10, 10).unwrap();
    let found = ground_rule(&rule, 0, view);
    let e2 = g.vocab().entities.id("e2").unwrap();
    let e3 = g.vocab().entities.id("e3").unwrap();
    assert_eq!(found.keys().copied().collect::<Vec<_>>(), vec![e2, e3]);
    assert_eq!(found[&e2].tau, 5);
    assert_eq!(found[&e3].tau, 2);
    let first = g.facts()[found[&e2].facts[0]];
    assert_eq!(first.timestamp, 5);
    let naive_map = naive(&rule, 0, &view.facts().copied().collect::<Vec<_>>());
    assert_eq!(naive_map[&e2], 5);
}
