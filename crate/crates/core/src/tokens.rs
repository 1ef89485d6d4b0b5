//! Location tokens (`<a_12><b_3>...`) and the prefix trie of valid token
//! sequences used to constrain decoding.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LEVELS: usize = 26;

/// Name of code `index` at quantization level `level` (0-based).
pub fn level_token(level: usize, index: usize) -> String {
    assert!(level < MAX_LEVELS, "at most {MAX_LEVELS} levels");
    format!("<{}_{index}>", (b'a' + level as u8) as char)
}

pub fn dup_token(j: usize) -> String {
    format!("<dup_{j}>")
}

/// True for strings shaped like a location token.
pub fn is_location_token(s: &str) -> bool {
    let Some(inner) = s.strip_prefix('<').and_then(|s| s.strip_suffix('>')) else {
        return false;
    };
    let Some((head, num)) = inner.split_once('_') else {
        return false;
    };
    let head_ok = head == "dup" || (head.len() == 1 && head.as_bytes()[0].is_ascii_lowercase());
    head_ok && !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit())
}

/// Extracts every location token embedded in `text`, in order.
pub fn scan_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let after = &rest[start..];
        match after.find('>') {
            Some(end) => {
                let cand = &after[..=end];
                if is_location_token(cand) {
                    out.push(cand);
                    rest = &after[end + 1..];
                } else {
                    rest = &after[1..];
                }
            }
            None => break,
        }
    }
    out
}

/// Location id → token sequence. Injective by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenMap {
    entries: BTreeMap<String, Vec<String>>,
}

/// Names raw code sequences and disambiguates identical ones. Locations that
/// share a full sequence are ordered by id and get `<dup_0>`, `<dup_1>`, ...
/// appended.
pub fn assign_tokens(raw: &BTreeMap<String, Vec<usize>>) -> Result<TokenMap> {
    let levels = raw.values().next().map_or(0, Vec::len);
    if levels > MAX_LEVELS {
        return Err(Error::config("levels", format!("{levels} > {MAX_LEVELS}")));
    }
    if let Some((id, _)) = raw.iter().find(|(_, v)| v.len() != levels) {
        return Err(Error::config(
            "raw",
            format!("sequence of `{id}` differs in length from the first ({levels})"),
        ));
    }
    let mut groups: BTreeMap<&[usize], Vec<&str>> = BTreeMap::new();
    // BTreeMap iteration keeps ids sorted inside each group
    for (id, codes) in raw {
        groups.entry(codes.as_slice()).or_default().push(id);
    }
    let mut entries = BTreeMap::new();
    for (codes, ids) in groups {
        let base: Vec<String> = codes.iter().enumerate().map(|(l, &c)| level_token(l, c)).collect();
        if ids.len() == 1 {
            entries.insert(ids[0].to_string(), base);
        } else {
            for (j, id) in ids.into_iter().enumerate() {
                let mut seq = base.clone();
                seq.push(dup_token(j));
                entries.insert(id.to_string(), seq);
            }
        }
    }
    Ok(TokenMap { entries })
}

impl TokenMap {
    pub fn from_entries(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let map = Self { entries };
        map.validate()?;
        Ok(map)
    }

    /// Checks injectivity and token shape.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&[String], &str> = HashMap::new();
        for (id, seq) in &self.entries {
            if seq.is_empty() || seq.iter().any(|t| !is_location_token(t)) {
                return Err(Error::config("token_map", format!("bad token sequence for `{id}`")));
            }
            if let Some(other) = seen.insert(seq, id) {
                return Err(Error::config(
                    "token_map",
                    format!("`{id}` and `{other}` share a token sequence"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn tokens(&self, id: &str) -> Result<&[String]> {
        self.get(id).ok_or_else(|| Error::MissingLocation(id.to_string()))
    }

    /// Concatenated token string of a location, e.g. `<a_5><b_17>`.
    pub fn render(&self, id: &str) -> Result<String> {
        Ok(self.tokens(id)?.concat())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Every distinct token, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.values().flatten().cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.entries.values().any(|s| s.iter().any(|t| t == token))
    }

    /// Location whose full sequence is `tokens`.
    pub fn resolve<S: AsRef<str>>(&self, tokens: &[S]) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, seq)| seq.len() == tokens.len() && seq.iter().zip(tokens).all(|(a, b)| a == b.as_ref()))
            .map(|(id, _)| id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TrieNode {
    children: Vec<(String, usize)>,
    leaf: Option<String>,
}

/// Prefix tree over the sequences of a [`TokenMap`]; leaves carry ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTrie {
    nodes: Vec<TrieNode>,
    leaves: usize,
}

/// Continuations of a trie prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next<'a> {
    Tokens(Vec<&'a str>),
    Leaf(&'a str),
}

pub fn build_trie(map: &TokenMap) -> Result<TokenTrie> {
    let mut nodes = vec![TrieNode {
        children: Vec::new(),
        leaf: None,
    }];
    for (id, seq) in map.iter() {
        let mut cur = 0;
        for tok in seq {
            if nodes[cur].leaf.is_some() {
                return Err(Error::Internal(format!("sequence of `{id}` extends a leaf")));
            }
            cur = match nodes[cur].children.iter().find(|(t, _)| t == tok) {
                Some(&(_, child)) => child,
                None => {
                    nodes.push(TrieNode {
                        children: Vec::new(),
                        leaf: None,
                    });
                    let child = nodes.len() - 1;
                    nodes[cur].children.push((tok.clone(), child));
                    child
                }
            };
        }
        if nodes[cur].leaf.is_some() || !nodes[cur].children.is_empty() || cur == 0 {
            return Err(Error::Internal(format!("sequence of `{id}` is not prefix-free")));
        }
        nodes[cur].leaf = Some(id.to_string());
    }
    for n in &mut nodes {
        n.children.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(TokenTrie {
        nodes,
        leaves: map.len(),
    })
}

impl TokenTrie {
    pub const ROOT: usize = 0;

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn children(&self, node: usize) -> &[(String, usize)] {
        &self.nodes[node].children
    }

    pub fn leaf(&self, node: usize) -> Option<&str> {
        self.nodes[node].leaf.as_deref()
    }

    pub fn child(&self, node: usize, token: &str) -> Option<usize> {
        self.nodes[node]
            .children
            .binary_search_by(|(t, _)| t.as_str().cmp(token))
            .ok()
            .map(|i| self.nodes[node].children[i].1)
    }

    pub fn walk<S: AsRef<str>>(&self, prefix: &[S]) -> Result<usize> {
        let mut cur = Self::ROOT;
        for t in prefix {
            cur = self
                .child(cur, t.as_ref())
                .ok_or_else(|| Error::InvalidPrefix(prefix.iter().map(|s| s.as_ref().to_string()).collect()))?;
        }
        Ok(cur)
    }

    pub fn allowed_next<S: AsRef<str>>(&self, prefix: &[S]) -> Result<Next<'_>> {
        let node = self.walk(prefix)?;
        Ok(match self.leaf(node) {
            Some(id) => Next::Leaf(id),
            None => Next::Tokens(self.children(node).iter().map(|(t, _)| t.as_str()).collect()),
        })
    }

    /// Every root-to-leaf path with its id, in sorted token order.
    pub fn paths(&self) -> Vec<(Vec<String>, String)> {
        let mut out = Vec::new();
        let mut stack = vec![(Self::ROOT, Vec::<String>::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(id) = self.leaf(node) {
                out.push((path.clone(), id.to_string()));
            }
            for (t, c) in self.children(node).iter().rev() {
                let mut p = path.clone();
                p.push(t.clone());
                stack.push((*c, p));
            }
        }
        out
    }
}
