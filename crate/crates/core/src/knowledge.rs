//! Layered biological knowledge: per-level regulation graphs, inter-level
//! mappings, and pathway membership as a hypergraph incidence matrix.
//!
//! Orientation: `adjacency[i][j] = 1` means node `j` regulates node `i`, so
//! row `i` lists the in-neighbors of `i`. A file line `source<TAB>target`
//! sets `adjacency[target][source]`.
//!
//! Mappings: `mapping(l)` has shape `|level l+1| × |level l|`, with a 1 where
//! a level-`l` node feeds a level-`l+1` node.
//!
//! When the top level is declared through a membership file its nodes are
//! hyperedges over the level below. The incidence matrix `R` is then
//! `|level L-2| × |level L-1|` and the mapping into the top level is `Rᵀ`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub name: String,
    pub nodes: Vec<String>,
    /// Intra-level regulation, binary, zero diagonal.
    pub adjacency: Matrix,
    /// True when the nodes of this level are hyperedges over the level below.
    pub hyperedges: bool,
    index: HashMap<String, usize>,
}

impl Level {
    pub fn new(name: impl Into<String>, nodes: Vec<String>, adjacency: Matrix, hyperedges: bool) -> Result<Self> {
        let name = name.into();
        let n = nodes.len();
        if adjacency.shape() != (n, n) {
            return Err(Error::Knowledge(format!(
                "level {name}: adjacency is {:?} for {n} nodes",
                adjacency.shape()
            )));
        }
        if !adjacency.is_binary() {
            return Err(Error::Knowledge(format!("level {name}: adjacency is not binary")));
        }
        if (0..n).any(|i| adjacency.get(i, i) != 0.0) {
            return Err(Error::Knowledge(format!("level {name}: adjacency has a nonzero diagonal")));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.clone(), i).is_some() {
                return Err(Error::Knowledge(format!("level {name}: duplicate node {node}")));
            }
        }
        Ok(Self {
            name,
            nodes,
            adjacency,
            hyperedges,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, node: &str) -> Option<usize> {
        self.index.get(node).copied()
    }

    /// Edges as `(source, target)` name pairs, ordered by target then source index.
    pub fn edges(&self) -> Vec<(String, String)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((self.nodes[j].clone(), self.nodes[i].clone()));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.count_nonzero()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    levels: Vec<Level>,
    mappings: Vec<Matrix>,
    incidence: Option<Matrix>,
}

/// Manifest entry binding one level to its files. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    pub name: String,
    /// One node name per line. Optional; see [`load_knowledge`] for inference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<PathBuf>,
    /// `source<TAB>target` regulation edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    /// `lower_node<TAB>upper_node` lines from the previous level into this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<PathBuf>,
    /// `member<TAB>group` lines; declares this level's nodes as hyperedges
    /// over the previous level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub level: Vec<LevelEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })
    }
}

struct Pairs {
    file: PathBuf,
    rows: Vec<(usize, String, String)>,
}

fn read_pairs(path: &Path) -> Result<Pairs> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: k + 1,
                message: format!("expected two tab-separated names, got {line:?}"),
            });
        }
        rows.push((k + 1, fields[0].trim().to_string(), fields[1].trim().to_string()));
    }
    Ok(Pairs {
        file: path.to_path_buf(),
        rows,
    })
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (k, raw) in text.lines().enumerate() {
        let name = raw.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: k + 1,
                message: format!("duplicate node {name}"),
            });
        }
        out.push(name.to_string());
    }
    Ok(out)
}

fn push_unique(order: &mut Vec<String>, seen: &mut HashSet<String>, name: &str) {
    if seen.insert(name.to_string()) {
        order.push(name.to_string());
    }
}

fn resolve(index: &HashMap<&str, usize>, file: &Path, line: usize, symbol: &str) -> Result<usize> {
    index.get(symbol).copied().ok_or_else(|| Error::UnresolvedNode {
        file: file.to_path_buf(),
        line,
        symbol: symbol.to_string(),
    })
}

/// Loads a knowledge base from a TOML manifest listing levels bottom-up.
///
/// Node order is the order of first appearance. Without a `nodes` file a
/// level takes its nodes from the upper column of its own mapping or
/// membership file, then from the lower column of the next level's mapping or
/// membership file; only a level with neither falls back to its edge file.
/// Duplicate edges are dropped with a warning, as are self-loops.
pub fn load_knowledge(manifest_path: &Path) -> Result<KnowledgeBase> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = &manifest.level;
    if entries.is_empty() {
        return Err(Error::Knowledge("manifest declares no levels".into()));
    }
    for (l, e) in entries.iter().enumerate() {
        if l == 0 && (e.mapping.is_some() || e.membership.is_some()) {
            return Err(Error::Knowledge(format!(
                "bottom level {} cannot have a mapping or membership file",
                e.name
            )));
        }
        if l > 0 && e.mapping.is_some() == e.membership.is_some() {
            return Err(Error::Knowledge(format!(
                "level {} needs exactly one of `mapping` or `membership`",
                e.name
            )));
        }
        if e.membership.is_some() && l + 1 != entries.len() {
            return Err(Error::Knowledge(format!(
                "membership level {} must be the top level",
                e.name
            )));
        }
        if e.membership.is_some() && e.edges.is_some() {
            return Err(Error::Knowledge(format!(
                "membership level {} cannot carry regulation edges",
                e.name
            )));
        }
    }

    // Files linking level l-1 to level l, indexed by l.
    let mut links: Vec<Option<Pairs>> = Vec::with_capacity(entries.len());
    for e in entries {
        let link = match (&e.mapping, &e.membership) {
            (Some(p), _) | (_, Some(p)) => Some(read_pairs(&base.join(p))?),
            _ => None,
        };
        links.push(link);
    }
    let mut edge_files = Vec::with_capacity(entries.len());
    for e in entries {
        edge_files.push(match &e.edges {
            Some(p) => Some(read_pairs(&base.join(p))?),
            None => None,
        });
    }

    let mut node_lists = Vec::with_capacity(entries.len());
    for (l, e) in entries.iter().enumerate() {
        let nodes = if let Some(p) = &e.nodes {
            read_names(&base.join(p))?
        } else {
            let mut order = Vec::new();
            let mut seen = HashSet::new();
            if let Some(link) = &links[l] {
                for (_, _, upper) in &link.rows {
                    push_unique(&mut order, &mut seen, upper);
                }
            }
            if let Some(Some(next)) = links.get(l + 1) {
                for (_, lower, _) in &next.rows {
                    push_unique(&mut order, &mut seen, lower);
                }
            }
            if order.is_empty() {
                if let Some(edges) = &edge_files[l] {
                    for (_, s, t) in &edges.rows {
                        push_unique(&mut order, &mut seen, s);
                        push_unique(&mut order, &mut seen, t);
                    }
                }
            }
            order
        };
        node_lists.push(nodes);
    }

    let mut levels = Vec::with_capacity(entries.len());
    for (l, e) in entries.iter().enumerate() {
        let nodes = &node_lists[l];
        let n = nodes.len();
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut adj = Matrix::zeros(n, n);
        if let Some(edges) = &edge_files[l] {
            for (line, s, t) in &edges.rows {
                let j = resolve(&index, &edges.file, *line, s)?;
                let i = resolve(&index, &edges.file, *line, t)?;
                if i == j {
                    log::warn!("{}:{line}: self-loop on {s} dropped", edges.file.display());
                    continue;
                }
                if adj.get(i, j) != 0.0 {
                    log::warn!("{}:{line}: duplicate edge {s} -> {t} dropped", edges.file.display());
                }
                adj.set(i, j, 1.0);
            }
        }
        levels.push(Level::new(e.name.clone(), nodes.clone(), adj, e.membership.is_some())?);
    }

    let mut mappings = Vec::with_capacity(entries.len().saturating_sub(1));
    let mut incidence = None;
    for l in 1..entries.len() {
        let link = links[l].as_ref().expect("validated above");
        let lower = &node_lists[l - 1];
        let upper = &node_lists[l];
        let li: HashMap<&str, usize> = lower.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let ui: HashMap<&str, usize> = upper.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut m = Matrix::zeros(upper.len(), lower.len());
        for (line, lo, up) in &link.rows {
            let c = resolve(&li, &link.file, *line, lo)?;
            let r = resolve(&ui, &link.file, *line, up)?;
            if m.get(r, c) != 0.0 {
                log::warn!("{}:{line}: duplicate pair {lo} -> {up} dropped", link.file.display());
            }
            m.set(r, c, 1.0);
        }
        if entries[l].membership.is_some() {
            incidence = Some(m.transpose());
        }
        mappings.push(m);
    }

    KnowledgeBase::new(levels, mappings, incidence)
}

impl KnowledgeBase {
    /// Validates and assembles a knowledge base.
    pub fn new(levels: Vec<Level>, mappings: Vec<Matrix>, incidence: Option<Matrix>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Knowledge("no levels".into()));
        }
        if mappings.len() + 1 != levels.len() {
            return Err(Error::Knowledge(format!(
                "{} levels need {} mappings, got {}",
                levels.len(),
                levels.len() - 1,
                mappings.len()
            )));
        }
        let mut names = HashSet::new();
        for lv in &levels {
            if !names.insert(lv.name.as_str()) {
                return Err(Error::Knowledge(format!("duplicate level {}", lv.name)));
            }
        }
        for (l, m) in mappings.iter().enumerate() {
            let want = (levels[l + 1].len(), levels[l].len());
            if m.shape() != want || !m.is_binary() {
                return Err(Error::Knowledge(format!(
                    "mapping {} -> {} must be binary {want:?}, got {:?}",
                    levels[l].name,
                    levels[l + 1].name,
                    m.shape()
                )));
            }
        }
        for (l, lv) in levels.iter().enumerate() {
            if lv.hyperedges && (l == 0 || l + 1 != levels.len()) {
                return Err(Error::Knowledge(format!(
                    "hyperedge level {} must be the top level",
                    lv.name
                )));
            }
        }
        match (&incidence, levels.last().map(|l| l.hyperedges)) {
            (Some(r), Some(true)) => {
                let l = levels.len() - 1;
                if r.shape() != (levels[l - 1].len(), levels[l].len()) || !r.is_binary() {
                    return Err(Error::Knowledge("incidence shape or values invalid".into()));
                }
                if *r != mappings[l - 1].transpose() {
                    return Err(Error::Knowledge(
                        "incidence must equal the transpose of the top mapping".into(),
                    ));
                }
                for e in 0..r.cols() {
                    if (0..r.rows()).all(|i| r.get(i, e) == 0.0) {
                        return Err(Error::Knowledge(format!(
                            "hyperedge {} has no members",
                            levels[l].nodes[e]
                        )));
                    }
                }
            }
            (None, Some(false)) => {}
            _ => {
                return Err(Error::Knowledge(
                    "incidence must be present exactly when the top level holds hyperedges".into(),
                ))
            }
        }
        Ok(Self {
            levels,
            mappings,
            incidence,
        })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, idx: usize) -> &Level {
        &self.levels[idx]
    }

    pub fn level_index(&self, name: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLevel(name.to_string()))
    }

    pub fn genes(&self) -> &[String] {
        &self.levels[0].nodes
    }

    pub fn gene_count(&self) -> usize {
        self.levels[0].len()
    }

    /// Mapping from level `l` to level `l + 1`.
    pub fn mapping(&self, l: usize) -> &Matrix {
        &self.mappings[l]
    }

    pub fn mappings(&self) -> &[Matrix] {
        &self.mappings
    }

    /// Pathway incidence over the level below the top, if the top level holds hyperedges.
    pub fn incidence(&self) -> Option<&Matrix> {
        self.incidence.as_ref()
    }

    /// Level index whose nodes the hyperedges group (the level below the top).
    pub fn incidence_level(&self) -> Option<usize> {
        self.incidence.as_ref().map(|_| self.levels.len() - 2)
    }

    /// Keeps only measured genes, then every upper node still reachable
    /// through the mappings. Level order follows the knowledge base.
    pub fn restrict_to_genes(&self, measured: &[String]) -> Result<KnowledgeBase> {
        if measured.is_empty() {
            return Err(Error::invalid("measured gene list is empty"));
        }
        let wanted: HashSet<&str> = measured.iter().map(String::as_str).collect();
        let mut keep: Vec<Vec<usize>> = Vec::with_capacity(self.levels.len());
        keep.push(
            (0..self.gene_count())
                .filter(|i| wanted.contains(self.genes()[*i].as_str()))
                .collect(),
        );
        if keep[0].is_empty() {
            return Err(Error::Knowledge(
                "no measured gene appears in the knowledge base".into(),
            ));
        }
        for l in 0..self.mappings.len() {
            let m = &self.mappings[l];
            let below = &keep[l];
            let kept = (0..m.rows())
                .filter(|r| below.iter().any(|c| m.get(*r, *c) != 0.0))
                .collect();
            keep.push(kept);
        }

        let mut levels = Vec::with_capacity(self.levels.len());
        for (lv, idx) in self.levels.iter().zip(&keep) {
            let nodes = idx.iter().map(|i| lv.nodes[*i].clone()).collect();
            let adj = lv.adjacency.select_rows(idx).select_cols(idx);
            levels.push(Level::new(lv.name.clone(), nodes, adj, lv.hyperedges)?);
        }
        let mappings: Vec<Matrix> = self
            .mappings
            .iter()
            .enumerate()
            .map(|(l, m)| m.select_rows(&keep[l + 1]).select_cols(&keep[l]))
            .collect();
        let incidence = self.incidence.as_ref().map(|_| mappings.last().unwrap().transpose());
        KnowledgeBase::new(levels, mappings, incidence)
    }

    /// Zeroes the row and column of `node` in the adjacency of `level`.
    pub fn remove_node_edges(&self, level: &str, node: &str) -> Result<KnowledgeBase> {
        let l = self.level_index(level)?;
        let i = self.levels[l].index_of(node).ok_or_else(|| Error::UnknownNode {
            level: level.to_string(),
            node: node.to_string(),
        })?;
        let mut out = self.clone();
        let adj = &mut out.levels[l].adjacency;
        for k in 0..adj.rows() {
            adj.set(i, k, 0.0);
            adj.set(k, i, 0.0);
        }
        Ok(out)
    }

    /// Edges touching `node` at `level`, as `(source, target)` pairs.
    pub fn incident_edges(&self, level: usize, node: &str) -> Vec<(String, String)> {
        self.levels[level]
            .edges()
            .into_iter()
            .filter(|(s, t)| s == node || t == node)
            .collect()
    }

    /// Content hash over level names, node lists, and every matrix.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mat = |h: &mut Sha256, m: &Matrix| {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        };
        for lv in &self.levels {
            h.update(lv.name.as_bytes());
            h.update([0, u8::from(lv.hyperedges)]);
            for n in &lv.nodes {
                h.update(n.as_bytes());
                h.update([0]);
            }
            mat(&mut h, &lv.adjacency);
        }
        for m in &self.mappings {
            mat(&mut h, m);
        }
        hex::encode(h.finalize())
    }

    /// Writes a manifest plus node, edge, mapping and membership files into
    /// `dir`, returning the manifest path.
    pub fn write_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<PathBuf> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            Ok(PathBuf::from(name))
        };
        let mut entries = Vec::with_capacity(self.levels.len());
        for (l, lv) in self.levels.iter().enumerate() {
            let stem = sanitize(&lv.name);
            let mut entry = LevelEntry {
                name: lv.name.clone(),
                nodes: Some(write(&format!("{stem}.nodes.txt"), lv.nodes.join("\n") + "\n")?),
                ..LevelEntry::default()
            };
            if !lv.hyperedges {
                let mut body = String::from("# source\ttarget\n");
                for (s, t) in lv.edges() {
                    body.push_str(&format!("{s}\t{t}\n"));
                }
                entry.edges = Some(write(&format!("{stem}.edges.tsv"), body)?);
            }
            if l > 0 {
                let m = &self.mappings[l - 1];
                let lower = &self.levels[l - 1];
                let mut body = String::new();
                for c in 0..m.cols() {
                    for r in 0..m.rows() {
                        if m.get(r, c) != 0.0 {
                            body.push_str(&format!("{}\t{}\n", lower.nodes[c], lv.nodes[r]));
                        }
                    }
                }
                if lv.hyperedges {
                    entry.membership = Some(write(&format!("{stem}.membership.tsv"), body)?);
                } else {
                    entry.mapping = Some(write(&format!("{stem}.mapping.tsv"), body)?);
                }
            }
            entries.push(entry);
        }
        let manifest = Manifest { level: entries };
        let text = toml::to_string(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// One-line-per-level summary of node and edge counts.
    pub fn summary(&self) -> Vec<(String, usize, usize)> {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, lv)| {
                let edges = if lv.hyperedges {
                    self.mappings[l - 1].count_nonzero()
                } else {
                    lv.edge_count()
                };
                (lv.name.clone(), lv.len(), edges)
            })
            .collect()
    }

    /// Distinct names across all levels, for diagnostics.
    pub fn all_names(&self) -> BTreeSet<&str> {
        self.levels
            .iter()
            .flat_map(|l| l.nodes.iter().map(String::as_str))
            .collect()
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}
