//! Topology-preserving 3D thinning to unit-width centerlines.
//!
//! Border voxels are peeled in six directional sub-passes. A voxel is deleted
//! only if it is simple (its removal changes neither the 26-connected
//! foreground topology nor the 6-connected background topology) and it is not
//! a curve end point. Candidates are re-checked one by one before deletion,
//! so each sub-pass is sequential and topology is preserved exactly.

use std::sync::OnceLock;

use crate::grid::Grid3;

const CENTER: usize = 13;

fn offset(p: usize) -> [i64; 3] {
    [(p / 9) as i64 - 1, ((p / 3) % 3) as i64 - 1, (p % 3) as i64 - 1]
}

struct Tables {
    adj26: Vec<Vec<usize>>,
    adj6_n18: Vec<Vec<usize>>,
    in_n18: [bool; 27],
    faces: [usize; 6],
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut in_n18 = [false; 27];
        for (p, slot) in in_n18.iter_mut().enumerate() {
            let o = offset(p);
            let nz = o.iter().filter(|&&c| c != 0).count();
            *slot = p != CENTER && nz <= 2;
        }
        let mut adj26 = vec![Vec::new(); 27];
        let mut adj6_n18 = vec![Vec::new(); 27];
        for a in 0..27 {
            for b in 0..27 {
                if a == b || a == CENTER || b == CENTER {
                    continue;
                }
                let (oa, ob) = (offset(a), offset(b));
                let d: Vec<i64> = (0..3).map(|i| (oa[i] - ob[i]).abs()).collect();
                if d.iter().all(|&c| c <= 1) {
                    adj26[a].push(b);
                }
                if in_n18[a] && in_n18[b] && d.iter().sum::<i64>() == 1 {
                    adj6_n18[a].push(b);
                }
            }
        }
        Tables {
            adj26,
            adj6_n18,
            in_n18,
            faces: [4, 22, 10, 16, 12, 14],
        }
    })
}

fn components(
    nb: &[bool; 27],
    want: bool,
    member: impl Fn(usize) -> bool,
    adj: &[Vec<usize>],
    seeds: &[usize],
) -> usize {
    let mut seen = [false; 27];
    let mut count = 0;
    let mut stack = Vec::with_capacity(27);
    for &s in seeds {
        if seen[s] || nb[s] != want || !member(s) {
            continue;
        }
        count += 1;
        seen[s] = true;
        stack.push(s);
        while let Some(p) = stack.pop() {
            for &q in &adj[p] {
                if !seen[q] && nb[q] == want && member(q) {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    count
}

/// Curve tip: one neighbour, or two neighbours adjacent to each other (the
/// end of a staircase line).
fn is_end_point(nb: &[bool; 27]) -> bool {
    let mut ns = (0..27).filter(|&p| p != CENTER && nb[p]);
    match (ns.next(), ns.next(), ns.next()) {
        (Some(_), None, _) => true,
        (Some(a), Some(b), None) => tables().adj26[a].contains(&b),
        _ => false,
    }
}

/// Simple-point test via the two topological numbers T26(fg) and T6(bg).
pub(crate) fn is_simple(nb: &[bool; 27]) -> bool {
    let t = tables();
    let all: Vec<usize> = (0..27).filter(|&p| p != CENTER).collect();
    if components(nb, true, |_| true, &t.adj26, &all) != 1 {
        return false;
    }
    components(nb, false, |p| t.in_n18[p], &t.adj6_n18, &t.faces) == 1
}

struct Padded {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Padded {
    fn idx(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    fn neighborhood(&self, i: usize) -> [bool; 27] {
        let sy = self.dims[2];
        let sz = self.dims[1] * self.dims[2];
        let mut nb = [false; 27];
        for (p, slot) in nb.iter_mut().enumerate() {
            let o = offset(p);
            let j = i as i64 + o[0] * sz as i64 + o[1] * sy as i64 + o[2];
            *slot = self.data[j as usize];
        }
        nb
    }
}

/// Curve skeleton of a binary mask. The output is a subset of the mask with
/// the same number of 26-connected components.
pub fn skeletonize(mask: &Grid3<u8>) -> Grid3<u8> {
    let d = mask.dims();
    let pd = [d[0] + 2, d[1] + 2, d[2] + 2];
    let mut img = Padded {
        dims: pd,
        data: vec![false; pd[0] * pd[1] * pd[2]],
    };
    let mut fg = Vec::new();
    for z in 0..d[0] {
        for y in 0..d[1] {
            for x in 0..d[2] {
                if *mask.get([z, y, x]) != 0 {
                    let i = img.idx(z + 1, y + 1, x + 1);
                    img.data[i] = true;
                    fg.push(i);
                }
            }
        }
    }
    let sy = pd[2] as i64;
    let sz = (pd[1] * pd[2]) as i64;
    let directions = [-sz, sz, -sy, sy, -1, 1];
    loop {
        let mut changed = false;
        for &step in &directions {
            let candidates: Vec<usize> = fg
                .iter()
                .copied()
                .filter(|&i| img.data[i] && !img.data[(i as i64 + step) as usize])
                .filter(|&i| {
                    let nb = img.neighborhood(i);
                    !is_end_point(&nb) && is_simple(&nb)
                })
                .collect();
            for i in candidates {
                let nb = img.neighborhood(i);
                if !is_end_point(&nb) && is_simple(&nb) {
                    img.data[i] = false;
                    changed = true;
                }
            }
            fg.retain(|&i| img.data[i]);
        }
        if !changed {
            break;
        }
    }
    // Staircase corners (two mutually adjacent neighbours) are protected as
    // end points above; one final pass turns them into 26-connected curve
    // voxels. Neighbours of a removed voxel are frozen so tips do not erode.
    let mut frozen = vec![false; img.data.len()];
    for &i in &fg {
        if frozen[i] {
            continue;
        }
        let nb = img.neighborhood(i);
        let ns: Vec<usize> = (0..27).filter(|&p| p != CENTER && nb[p]).collect();
        if ns.len() == 2 && tables().adj26[ns[0]].contains(&ns[1]) && is_simple(&nb) {
            img.data[i] = false;
            for p in ns {
                let o = offset(p);
                frozen[(i as i64 + o[0] * sz + o[1] * sy + o[2]) as usize] = true;
            }
        }
    }
    fg.retain(|&i| img.data[i]);
    let mut out = Grid3::filled(d, 0u8);
    for i in fg {
        let x = i % pd[2];
        let y = (i / pd[2]) % pd[1];
        let z = i / (pd[1] * pd[2]);
        out.set([z - 1, y - 1, x - 1], 1);
    }
    out
}
