//! Dependency ordering over the requirement graph.
//!
//! Edge `a -> b` means node `a` requires node `b`, so `b` is instantiated first.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::model::TemplateDocument;
use super::CycleError;

/// Adjacency over unique node names; edges to unknown targets are dropped.
fn graph(t: &TemplateDocument) -> BTreeMap<&str, BTreeSet<&str>> {
    let mut g: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for n in &t.node_templates {
        g.entry(n.name.as_str()).or_default();
    }
    for n in &t.node_templates {
        for r in &n.requirements {
            if g.contains_key(r.target.as_str()) {
                g.get_mut(n.name.as_str()).expect("inserted above").insert(r.target.as_str());
            }
        }
    }
    g
}

/// Topological order with dependencies first; among ready nodes the
/// lexicographically smallest goes next, which yields the lexicographically
/// smallest valid order.
pub fn resolve_order(t: &TemplateDocument) -> Result<Vec<String>, CycleError> {
    let g = graph(t);
    let mut pending: BTreeMap<&str, usize> = g.iter().map(|(n, deps)| (*n, deps.len())).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (n, deps) in &g {
        for d in deps {
            dependents.entry(*d).or_default().push(*n);
        }
    }
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, c)| **c == 0).map(|(n, _)| *n).collect();
    let mut out = Vec::with_capacity(g.len());
    while let Some(n) = ready.pop_first() {
        out.push(String::from(n));
        for d in dependents.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            let c = pending.get_mut(d).expect("known node");
            *c -= 1;
            if *c == 0 {
                ready.insert(d);
            }
        }
    }
    if out.len() != g.len() {
        let mut members: Vec<String> = cycles(t).into_iter().flatten().collect();
        members.sort();
        return Err(CycleError { nodes: members });
    }
    Ok(out)
}

/// Strongly connected components that contain a cycle (size > 1 or a
/// self-loop), each sorted, in order of their smallest member.
pub fn cycles(t: &TemplateDocument) -> Vec<Vec<String>> {
    let g = graph(t);
    let names: Vec<&str> = g.keys().copied().collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adj: Vec<Vec<usize>> = names.iter().map(|n| g[n].iter().map(|d| index[d]).collect()).collect();

    // Iterative Tarjan.
    let n = names.len();
    let mut idx = alloc::vec![usize::MAX; n];
    let mut low = alloc::vec![0usize; n];
    let mut on_stack = alloc::vec![false; n];
    let mut stack = Vec::new();
    let mut counter = 0;
    let mut out = Vec::new();
    for root in 0..n {
        if idx[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = alloc::vec![(root, 0)];
        idx[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                if idx[w] == usize::MAX {
                    idx[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(idx[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == idx[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    if comp.len() > 1 || adj[v].contains(&v) {
                        let mut members: Vec<String> = comp.iter().map(|i| String::from(names[*i])).collect();
                        members.sort();
                        out.push(members);
                    }
                }
            }
        }
    }
    out.sort();
    out
}
