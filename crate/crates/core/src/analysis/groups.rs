//! Group locks: resources that may nest are replaced by one lock per group.

use std::collections::BTreeMap;

use super::model::{AnalysisError, ResourceSpec, Result, Segment, TaskSet};

/// Merges every group into a single resource named after the group, served by
/// the synchronization core of the group's first declared member. Critical
/// sections whose nested sections all fall into the same lock collapse into
/// one section of their combined length.
pub fn expand_group_locks(ts: &TaskSet) -> Result<TaskSet> {
    let mut rename: BTreeMap<&str, &str> = BTreeMap::new();
    let mut resources: Vec<ResourceSpec> = Vec::new();
    for r in &ts.resources {
        match &r.group {
            Some(g) => {
                if g != &r.id && ts.resource(g).is_some() {
                    return Err(AnalysisError::GroupIdClash(g.clone()));
                }
                rename.insert(&r.id, g);
                if !resources.iter().any(|x| &x.id == g) {
                    resources.push(ResourceSpec {
                        id: g.clone(),
                        sync_core: r.sync_core,
                        group: None,
                    });
                }
            }
            None => resources.push(r.clone()),
        }
    }
    if rename.is_empty() {
        return Ok(ts.clone());
    }

    let mut out = ts.clone();
    out.resources = resources;
    for t in &mut out.tasks {
        t.segments = t.segments.iter().map(|s| relabel(s, &rename)).collect();
    }
    Ok(out)
}

fn relabel(seg: &Segment, rename: &BTreeMap<&str, &str>) -> Segment {
    match seg {
        Segment::Exec { .. } => seg.clone(),
        Segment::Cs {
            resource, segments, ..
        } => {
            let lock = rename.get(resource.as_str()).copied().unwrap_or(resource);
            let inner: Vec<Segment> = segments.iter().map(|s| relabel(s, rename)).collect();
            let flat = inner.iter().all(|s| match s {
                Segment::Exec { .. } => true,
                Segment::Cs {
                    resource, segments, ..
                } => resource == lock && segments.is_empty(),
            });
            if flat {
                Segment::Cs {
                    resource: lock.to_string(),
                    duration: seg.length(),
                    segments: Vec::new(),
                }
            } else {
                Segment::Cs {
                    resource: lock.to_string(),
                    duration: match seg {
                        Segment::Cs { duration, .. } => *duration,
                        _ => unreachable!(),
                    },
                    segments: inner,
                }
            }
        }
    }
}
