//! Layered power-chain topology generator.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::topology::{DependencyGraph, DeviceId};

const POWER_CHAIN_47: &str = include_str!("../../data/power_chain_47.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: String,
    /// Kind of the parents; defaults to the previous layer's kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_kind: Option<String>,
    pub per_parent: usize,
}

/// Layers are created in order; every node of `parent_kind` gets
/// `per_parent` children. Ids are `kind` plus a per-kind counter from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub source_kind: String,
    pub sources: usize,
    pub layers: Vec<LayerSpec>,
    /// Fraction of non-source devices that get one extra (redundant) parent.
    #[serde(default)]
    pub dummy_parent_fraction: f64,
    /// Stop after this many devices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_nodes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TopologySpec {
    /// The bundled 47-device power chain (PSU, UPS, PDU, Rack, Router, Server).
    pub fn power_chain_47() -> Self {
        serde_json::from_str(POWER_CHAIN_47).expect("bundled preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "power_chain_47" => Some(Self::power_chain_47()),
            _ => None,
        }
    }

    /// PSU → UPS → PDU → Rack → Server chain with equal fan-out, truncated
    /// to exactly `n` devices.
    pub fn scaled(n: usize) -> Self {
        let mut f = 1usize;
        while (0..5u32).map(|d| f.pow(d)).sum::<usize>() < n {
            f += 1;
        }
        let layer = |kind: &str| LayerSpec {
            kind: kind.to_string(),
            parent_kind: None,
            per_parent: f,
        };
        TopologySpec {
            source_kind: "PSU".into(),
            sources: 1,
            layers: vec![layer("UPS"), layer("PDU"), layer("Rack"), layer("Server")],
            dummy_parent_fraction: 0.0,
            max_nodes: Some(n),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.sources == 0 {
            return bad("at least one source is required".into());
        }
        if !(0.0..=1.0).contains(&self.dummy_parent_fraction) {
            return bad(format!(
                "dummy_parent_fraction must lie in [0, 1], got {}",
                self.dummy_parent_fraction
            ));
        }
        if self.max_nodes == Some(0) {
            return bad("max_nodes must be positive".into());
        }
        let mut seen = vec![self.source_kind.as_str()];
        for l in &self.layers {
            if l.per_parent == 0 {
                return bad(format!("layer {} has zero fan-out", l.kind));
            }
            if let Some(p) = &l.parent_kind {
                if !seen.contains(&p.as_str()) {
                    return bad(format!("layer {} refers to unknown parent kind {p}", l.kind));
                }
            }
            if l.kind.is_empty() || l.kind.chars().any(char::is_whitespace) {
                return bad(format!("invalid kind {:?}", l.kind));
            }
            seen.push(&l.kind);
        }
        Ok(())
    }
}

/// Build the layered DAG described by `spec`.
pub fn generate_topology(spec: &TopologySpec) -> Result<DependencyGraph, SimError> {
    spec.validate()?;
    let cap = spec.max_nodes.unwrap_or(usize::MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut kind_names: Vec<&str> = vec![spec.source_kind.as_str()];
    fn kind_of<'a>(name: &'a str, kind_names: &mut Vec<&'a str>) -> usize {
        match kind_names.iter().position(|k| *k == name) {
            Some(i) => i,
            None => {
                kind_names.push(name);
                kind_names.len() - 1
            }
        }
    }
    let layer_kinds: Vec<usize> = spec
        .layers
        .iter()
        .map(|l| kind_of(&l.kind, &mut kind_names))
        .collect();
    let parent_kinds: Vec<usize> = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| match &l.parent_kind {
            Some(p) => kind_of(p, &mut kind_names),
            None if i == 0 => 0,
            None => layer_kinds[i - 1],
        })
        .collect();

    let mut counters = vec![0usize; kind_names.len()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); kind_names.len()];
    let mut nodes: Vec<(String, usize)> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut add = |kind: usize, nodes: &mut Vec<(String, usize)>, members: &mut Vec<Vec<usize>>| {
        counters[kind] += 1;
        nodes.push((format!("{}{}", kind_names[kind], counters[kind]), kind));
        members[kind].push(nodes.len() - 1);
        nodes.len() - 1
    };

    for _ in 0..spec.sources.min(cap) {
        add(0, &mut nodes, &mut members);
    }
    'layers: for (li, layer) in spec.layers.iter().enumerate() {
        let parents = members[parent_kinds[li]].clone();
        for &p in &parents {
            for _ in 0..layer.per_parent {
                if nodes.len() >= cap {
                    break 'layers;
                }
                let v = add(layer_kinds[li], &mut nodes, &mut members);
                edges.push((p, v));
                if spec.dummy_parent_fraction > 0.0
                    && parents.len() > 1
                    && rng.random::<f64>() < spec.dummy_parent_fraction
                {
                    let others: Vec<usize> = parents.iter().copied().filter(|&q| q != p).collect();
                    if let Some(&q) = others.choose(&mut rng) {
                        edges.push((q, v));
                    }
                }
            }
        }
    }

    let ids: Vec<DeviceId> = nodes
        .iter()
        .map(|(name, _)| DeviceId::new(name.clone()))
        .collect::<Result<_, _>>()
        .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let node_list = ids
        .iter()
        .zip(&nodes)
        .map(|(id, (_, k))| (id.clone(), Some(kind_names[*k].to_string())));
    let edge_ids = edges.iter().map(|&(a, b)| (ids[a].clone(), ids[b].clone()));
    DependencyGraph::new(node_list, edge_ids).map_err(SimError::from)
}
