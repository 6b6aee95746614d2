mod common;

use std::collections::BTreeMap;

use common::oracle::econ::{chain, params, register, upheld};
use common::oracle::{fee_oracle, node};
use proptest::prelude::*;
use trustreg_core::fixed::TrustWeight;
use trustreg_core::graph::{TrustEdge, TrustGraph};
use trustreg_core::identity::Did;
use trustreg_core::ledger::Ledger;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fee_split_matches_the_formulas(len in 1usize..=6, fee in prop_oneof![Just(1u64), Just(999), Just(1000), Just(1_000_000), 1u64..10_000_000]) {
        let nodes: Vec<Did> = (0..=len).map(node).collect();
        let mut ledger = Ledger::new(params(1, fee), u64::MAX / 2);
        let mut graph = TrustGraph::new();
        for d in &nodes {
            register(&mut ledger, &mut graph, d, 1);
        }
        let payer = Did::new("payer").unwrap();
        ledger.faucet(&payer, fee).unwrap();
        let receipt = ledger.escrow_fee(&payer).unwrap();
        let path = chain(&nodes, TrustWeight::FULL);
        let cred = nodes.last().unwrap();
        let dist = ledger.distribute_fee(receipt, &payer, &path, cred).unwrap();

        let dests: Vec<Did> = nodes[1..].to_vec();
        let (want, remainder) = fee_oracle(&dests, cred, fee);
        let got: BTreeMap<Did, u64> = dist.credits.iter().cloned().collect();
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(dist.remainder, remainder);
        prop_assert_eq!(got[cred], fee / 2);
        prop_assert_eq!(dist.total(), fee);
        prop_assert!(ledger.is_conserved());
    }

    #[test]
    fn slashes_are_proportional(weights in prop::collection::vec(1u32..=10_000, 0..=8), t in 1u64..1_000, extra in prop::collection::vec(0u64..500, 8)) {
        let mut ledger = Ledger::new(params(t, 10), u64::MAX / 2);
        let mut graph = TrustGraph::new();
        let accused = Did::new("accused").unwrap();
        register(&mut ledger, &mut graph, &accused, t);
        let mut expected = BTreeMap::new();
        for (i, &w) in weights.iter().enumerate() {
            let v = node(i);
            let stake = t + extra[i];
            register(&mut ledger, &mut graph, &v, stake);
            graph.upsert_edge(TrustEdge::new(v.clone(), accused.clone(), TrustWeight::from_raw(w).unwrap())).unwrap();
            expected.insert(v, (stake, t * u64::from(w) / 10_000));
        }
        let challenger = Did::new("verifier").unwrap();
        let report = ledger.apply_challenge_outcome(&mut graph, &upheld(0, &challenger, &accused)).unwrap();

        prop_assert_eq!(report.accused.slashed, t);
        let mut total = t;
        for s in &report.vouchers {
            let (stake, owed) = expected[&s.issuer];
            prop_assert_eq!(s.owed, owed);
            prop_assert_eq!(s.slashed, owed);
            let acct = ledger.account(&s.issuer).unwrap();
            prop_assert_eq!(acct.staked, stake - owed);
            prop_assert_eq!(acct.active, stake - owed >= t);
            prop_assert_eq!(graph.contains(&s.issuer), acct.active);
            total += owed;
        }
        prop_assert_eq!(report.vouchers.len(), weights.len());
        prop_assert_eq!(report.compensation, total);
        prop_assert_eq!(ledger.wallet(&challenger), total);
        prop_assert!(!graph.contains(&accused));
        prop_assert!(ledger.is_conserved());

        // removed issuers earn nothing from later distributions
        let payer = Did::new("payer").unwrap();
        ledger.faucet(&payer, 10).unwrap();
        let receipt = ledger.escrow_fee(&payer).unwrap();
        let mut nodes: Vec<Did> = expected.keys().cloned().collect();
        nodes.push(accused.clone());
        let dist = ledger.distribute_fee(receipt, &payer, &chain(&nodes, TrustWeight::FULL), &accused).unwrap();
        for (d, _) in &dist.credits {
            prop_assert!(ledger.account(d).unwrap().active);
        }
        prop_assert_eq!(ledger.account(&accused).unwrap().rewards, 0);
    }

    #[test]
    fn tokens_are_conserved(ops in prop::collection::vec((0u8..7, 0usize..6, 1u64..400), 1..120)) {
        let supply = 1_000_000;
        let mut ledger = Ledger::new(params(100, 50), supply);
        let mut graph = TrustGraph::new();
        let names: Vec<Did> = (0..6).map(node).collect();
        for d in &names {
            register(&mut ledger, &mut graph, d, 150);
        }
        let payer = Did::new("payer").unwrap();
        let mut receipts = Vec::new();
        let mut next_challenge = 0;
        for (op, who, amount) in ops {
            let d = &names[who];
            let _ = match op {
                0 => ledger.faucet(&payer, amount).map(|_| ()),
                1 => ledger.escrow_fee(&payer).map(|r| receipts.push(r)),
                2 => match receipts.pop() {
                    Some(r) => ledger.refund(r, &payer).map(|_| ()),
                    None => Ok(()),
                },
                3 => match receipts.pop() {
                    Some(r) => {
                        let path = chain(&names[..=who.max(1)], TrustWeight::FULL);
                        ledger.distribute_fee(r, &payer, &path, &names[who.max(1)]).map(|_| ())
                    }
                    None => Ok(()),
                },
                4 => ledger.withdraw_rewards(d, amount.min(ledger.account(d).unwrap().rewards)).map(|_| ()),
                5 => {
                    let _ = ledger.faucet(d, amount);
                    ledger.top_up(&mut graph, d, amount).map(|_| ())
                }
                _ => {
                    let voucher = &names[(who + 1) % names.len()];
                    if graph.contains(voucher) && graph.contains(d) {
                        let _ = graph.upsert_edge(TrustEdge::new(voucher.clone(), d.clone(), TrustWeight::from_raw(amount as u32 * 25).unwrap()));
                    }
                    next_challenge += 1;
                    ledger.apply_challenge_outcome(&mut graph, &upheld(next_challenge, &payer, d)).map(|_| ())
                }
            };
            prop_assert_eq!(ledger.total_tokens(), supply);
            for a in ledger.accounts() {
                prop_assert!(!a.active || a.staked >= 100);
                prop_assert_eq!(graph.contains(&a.issuer.did), a.active);
            }
        }
    }
}
