//! Binary Merkle tree over sorted ASCII leaf encodings.
//!
//! Leaf hash `H(0x00 ‖ leaf)`, node hash `H(0x01 ‖ left ‖ right)`. An odd
//! node at any level is paired with itself, a lone leaf included, so every
//! non-empty tree has at least one internal level. The empty tree's root is
//! `H(0x00)`.

use serde::{Deserialize, Serialize};

use crate::hash::{Digest, HashAlgorithm};

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

pub fn leaf_hash(alg: HashAlgorithm, leaf: &[u8]) -> Digest {
    alg.digest_parts(&[&[LEAF_TAG], leaf])
}

pub fn node_hash(alg: HashAlgorithm, left: &Digest, right: &Digest) -> Digest {
    alg.digest_parts(&[&[NODE_TAG], left.as_bytes(), right.as_bytes()])
}

pub fn empty_root(alg: HashAlgorithm) -> Digest {
    alg.digest(&[LEAF_TAG])
}

/// Which side of the running hash a sibling sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sibling {
    pub hash: Digest,
    pub side: Side,
}

/// Membership proof: the leaf itself plus siblings from the bottom up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf: String,
    pub siblings: Vec<Sibling>,
}

impl MerkleProof {
    pub fn computed_root(&self, alg: HashAlgorithm) -> Digest {
        self.siblings
            .iter()
            .fold(leaf_hash(alg, self.leaf.as_bytes()), |acc, s| match s.side {
                Side::Left => node_hash(alg, &s.hash, &acc),
                Side::Right => node_hash(alg, &acc, &s.hash),
            })
    }

    /// True iff replaying the siblings from the leaf reaches `root`.
    pub fn verify(&self, alg: HashAlgorithm, root: &Digest) -> bool {
        !self.siblings.is_empty() && self.computed_root(alg) == *root
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    algorithm: HashAlgorithm,
    leaves: Vec<String>,
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    /// Builds the tree; leaves are sorted and deduplicated first, so the
    /// root depends only on the set of leaves.
    pub fn from_leaves(algorithm: HashAlgorithm, leaves: impl IntoIterator<Item = String>) -> Self {
        let mut leaves: Vec<String> = leaves.into_iter().collect();
        leaves.sort();
        leaves.dedup();

        let mut levels = Vec::new();
        if !leaves.is_empty() {
            levels.push(leaves.iter().map(|l| leaf_hash(algorithm, l.as_bytes())).collect::<Vec<_>>());
            loop {
                let cur = levels.last().unwrap();
                if cur.len() == 1 && levels.len() > 1 {
                    break;
                }
                let next: Vec<Digest> = cur
                    .chunks(2)
                    .map(|pair| node_hash(algorithm, &pair[0], pair.get(1).unwrap_or(&pair[0])))
                    .collect();
                levels.push(next);
            }
        }
        MerkleTree { algorithm, leaves, levels }
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn root(&self) -> Digest {
        match self.levels.last() {
            Some(top) => top[0],
            None => empty_root(self.algorithm),
        }
    }

    pub fn leaves(&self) -> &[String] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn contains(&self, leaf: &str) -> bool {
        self.position(leaf).is_some()
    }

    fn position(&self, leaf: &str) -> Option<usize> {
        self.leaves.binary_search_by(|l| l.as_str().cmp(leaf)).ok()
    }

    pub fn prove(&self, leaf: &str) -> Option<MerkleProof> {
        let mut idx = self.position(leaf)?;
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        for level in &self.levels[..self.levels.len() - 1] {
            let (sib, side) = if idx % 2 == 0 {
                (*level.get(idx + 1).unwrap_or(&level[idx]), Side::Right)
            } else {
                (level[idx - 1], Side::Left)
            };
            siblings.push(Sibling { hash: sib, side });
            idx /= 2;
        }
        Some(MerkleProof { leaf: leaf.to_string(), siblings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALG: HashAlgorithm = HashAlgorithm::Sha256;

    fn tree(leaves: &[&str]) -> MerkleTree {
        MerkleTree::from_leaves(ALG, leaves.iter().map(|s| s.to_string()))
    }

    #[test]
    fn empty_tree_root_constant() {
        let t = tree(&[]);
        assert_eq!(t.root(), ALG.digest(&[0u8]));
        assert!(t.prove("x").is_none());
    }

    #[test]
    fn single_leaf_pairs_with_itself() {
        let t = tree(&["A-B:0.9000"]);
        let h = ALG.digest(b"\x00A-B:0.9000");
        let mut node = vec![1u8];
        node.extend_from_slice(h.as_bytes());
        node.extend_from_slice(h.as_bytes());
        assert_eq!(t.root(), ALG.digest(&node));
        let p = t.prove("A-B:0.9000").unwrap();
        assert_eq!(p.siblings, vec![Sibling { hash: h, side: Side::Right }]);
        assert!(p.verify(ALG, &t.root()));
    }

    #[test]
    fn three_leaves_duplicate_last() {
        let t = tree(&["c", "a", "b"]);
        let (a, b, c) = (leaf_hash(ALG, b"a"), leaf_hash(ALG, b"b"), leaf_hash(ALG, b"c"));
        let expected = node_hash(ALG, &node_hash(ALG, &a, &b), &node_hash(ALG, &c, &c));
        assert_eq!(t.root(), expected);
        for l in ["a", "b", "c"] {
            let p = t.prove(l).unwrap();
            assert_eq!(p.siblings.len(), 2);
            assert!(p.verify(ALG, &t.root()));
        }
    }

    #[test]
    fn order_independent() {
        assert_eq!(tree(&["x", "y", "z"]).root(), tree(&["z", "x", "y"]).root());
        assert_eq!(tree(&["x", "x", "y"]).root(), tree(&["y", "x"]).root());
    }

    #[test]
    fn proof_against_other_root_fails() {
        let t1 = tree(&["A-B:0.9000"]);
        let t2 = tree(&["A-B:0.8000"]);
        let p = t1.prove("A-B:0.9000").unwrap();
        assert!(!p.verify(ALG, &t2.root()));
        let mut forged = p.clone();
        forged.siblings.clear();
        assert!(!forged.verify(ALG, &leaf_hash(ALG, b"A-B:0.9000")));
    }

    #[test]
    fn algorithm_changes_root() {
        let a = MerkleTree::from_leaves(HashAlgorithm::Sha256, ["k".to_string()]);
        let b = MerkleTree::from_leaves(HashAlgorithm::Sha512_256, ["k".to_string()]);
        assert_ne!(a.root(), b.root());
    }
}
