//! Edge-list JSON graph files.
//!
//! A graph file is a single UTF-8 JSON document:
//!
//! ```json
//! {
//!   "num_nodes": 2,
//!   "num_classes": 2,
//!   "edges": [[0, 1]],
//!   "features": [[0.5], [1.5]],
//!   "labels": [0, 1],
//!   "train_mask": [0],
//!   "val_mask": [1],
//!   "test_mask": []
//! }
//! ```
//!
//! `edges` are 0-indexed pairs, stored undirected (a directed pair is
//! symmetrized, a duplicate is dropped). `labels` uses -1 for unlabeled
//! nodes and may be omitted entirely. The three masks are optional arrays of
//! node ids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeStats, Graph};
use crate::numerics::DenseMatrix;

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    num_nodes: usize,
    num_classes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_mask: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_mask: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_mask: Option<Vec<usize>>,
}

fn ids_to_mask(ids: Option<&[usize]>, num_nodes: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; num_nodes];
    if let Some(ids) = ids {
        for &id in ids {
            if id >= num_nodes {
                return Err(Error::Consistency(format!(
                    "mask node id {id} out of range for {num_nodes} nodes"
                )));
            }
            mask[id] = true;
        }
    }
    Ok(mask)
}

fn mask_to_ids(mask: &[bool]) -> Option<Vec<usize>> {
    let ids: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    (!ids.is_empty()).then_some(ids)
}

pub fn load_graph(path: &Path) -> Result<(Graph, EdgeStats)> {
    let text = fs::read_to_string(path)?;
    let file: GraphFile = serde_json::from_str(&text)?;

    if file.features.len() != file.num_nodes {
        return Err(Error::Consistency(format!(
            "feature rows ({}) differ from num_nodes ({})",
            file.features.len(),
            file.num_nodes
        )));
    }
    let features = DenseMatrix::from_rows(&file.features)?;

    let labels: Vec<Option<usize>> = match &file.labels {
        None => vec![None; file.num_nodes],
        Some(raw) => {
            if raw.len() != file.num_nodes {
                return Err(Error::Consistency(format!(
                    "label entries ({}) differ from num_nodes ({})",
                    raw.len(),
                    file.num_nodes
                )));
            }
            raw.iter()
                .map(|&y| {
                    if y < 0 {
                        Ok(None)
                    } else if (y as usize) < file.num_classes {
                        Ok(Some(y as usize))
                    } else {
                        Err(Error::Consistency(format!(
                            "label {y} out of range for {} classes",
                            file.num_classes
                        )))
                    }
                })
                .collect::<Result<_>>()?
        }
    };

    let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
    let train = ids_to_mask(file.train_mask.as_deref(), file.num_nodes)?;
    let val = ids_to_mask(file.val_mask.as_deref(), file.num_nodes)?;
    let test = ids_to_mask(file.test_mask.as_deref(), file.num_nodes)?;

    Graph::build(
        file.num_nodes,
        file.num_classes,
        &edges,
        features,
        labels,
        train,
        val,
        test,
    )
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    let features: Vec<Vec<f64>> = (0..graph.num_nodes())
        .map(|v| graph.features().row(v).to_vec())
        .collect();
    let labels: Vec<i64> = graph
        .labels()
        .iter()
        .map(|l| l.map_or(-1, |y| y as i64))
        .collect();
    let file = GraphFile {
        num_nodes: graph.num_nodes(),
        num_classes: graph.num_classes(),
        edges: graph.edges().map(|(a, b)| [a, b]).collect(),
        features,
        labels: Some(labels),
        train_mask: mask_to_ids(graph.train_mask()),
        val_mask: mask_to_ids(graph.val_mask()),
        test_mask: mask_to_ids(graph.test_mask()),
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_two_node_file() {
        let f = write_temp(
            r#"{"num_nodes":2,"num_classes":2,"edges":[[0,1]],
                "features":[[0.5],[1.5]],"labels":[0,1]}"#,
        );
        let (g, stats) = load_graph(f.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.label(0), Some(0));
        assert_eq!(g.label(1), Some(1));
        assert_eq!(stats.self_loops_dropped, 0);
    }

    #[test]
    fn self_loop_dropped_with_warning_count() {
        let f = write_temp(
            r#"{"num_nodes":1,"num_classes":1,"edges":[[0,0]],
                "features":[[0.0]],"labels":[0]}"#,
        );
        let (g, stats) = load_graph(f.path()).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(stats.self_loops_dropped, 1);
    }

    #[test]
    fn duplicate_edge_stored_once_per_direction() {
        let f = write_temp(
            r#"{"num_nodes":2,"num_classes":1,"edges":[[0,1],[0,1]],
                "features":[[0.0],[0.0]],"labels":[0,0]}"#,
        );
        let (g, stats) = load_graph(f.path()).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(stats.duplicates_dropped, 1);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let f = write_temp(
            r#"{"num_nodes":2,"num_classes":2,"edges":[[0,1]],
                "features":[[0.0],[0.0]],"labels":[0,2]}"#,
        );
        assert!(load_graph(f.path()).is_err());
    }

    #[test]
    fn feature_row_count_must_match() {
        let f = write_temp(
            r#"{"num_nodes":2,"num_classes":1,"edges":[],
                "features":[[0.0]],"labels":[0,0]}"#,
        );
        assert!(load_graph(f.path()).is_err());
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let f = write_temp("{not json");
        assert!(matches!(load_graph(f.path()), Err(Error::Parse(_))));
    }

    #[test]
    fn save_then_load_round_trips() {
        let f = write_temp(
            r#"{"num_nodes":3,"num_classes":2,"edges":[[0,1],[1,2]],
                "features":[[0.25,1.0],[0.5,-2.0],[0.125,3.5]],"labels":[0,1,-1],
                "train_mask":[0],"val_mask":[1]}"#,
        );
        let (g, _) = load_graph(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_graph(&g, out.path()).unwrap();
        let (g2, _) = load_graph(out.path()).unwrap();
        assert_eq!(g, g2);
    }
}
