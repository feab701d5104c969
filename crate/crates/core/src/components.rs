//! Classical two-pass connected-component labeling (8-connectivity) and the
//! disjoint-set forest it relies on.

use crate::raster::BinaryImage;

#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.rank.push(0);
        self.parent.len() - 1
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `false` if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Component labels: `0` is background, components are numbered `1..=count`
/// in raster order of their first pixel.
#[derive(Debug, Clone)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Pixels of each component in raster order; index `k` holds label `k + 1`.
    pub fn pixel_lists(&self) -> Vec<Vec<(usize, usize)>> {
        let mut lists = vec![Vec::new(); self.count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                lists[l as usize - 1].push((i % self.width, i / self.width));
            }
        }
        lists
    }
}

pub fn label_components(img: &BinaryImage) -> Components {
    let (w, h) = (img.width, img.height);
    let mut labels = vec![0u32; w * h];
    // provisional label 0 is unused so indices match label values
    let mut sets = DisjointSet::new(1);

    // first pass: provisional labels from the already-visited neighbours
    // (W, NW, N, NE) and record equivalences
    for y in 0..h {
        for x in 0..w {
            if !img.get(x, y) {
                continue;
            }
            let mut found = 0u32;
            let neighbours = [
                (x as isize - 1, y as isize),
                (x as isize - 1, y as isize - 1),
                (x as isize, y as isize - 1),
                (x as isize + 1, y as isize - 1),
            ];
            for (nx, ny) in neighbours {
                if nx < 0 || ny < 0 || nx as usize >= w {
                    continue;
                }
                let l = labels[ny as usize * w + nx as usize];
                if l == 0 {
                    continue;
                }
                if found == 0 {
                    found = l;
                } else {
                    sets.union(found as usize, l as usize);
                }
            }
            if found == 0 {
                found = sets.push() as u32;
            }
            labels[y * w + x] = found;
        }
    }

    // second pass: resolve to compact labels in raster order
    let mut compact = vec![0u32; sets.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l as usize);
        if compact[root] == 0 {
            count += 1;
            compact[root] = count;
        }
        *l = compact[root];
    }
    Components {
        width: w,
        height: h,
        labels,
        count: count as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flood_count(img: &BinaryImage) -> usize {
        let mut seen = vec![false; img.data.len()];
        let mut n = 0;
        for start in 0..img.data.len() {
            if !img.data[start] || seen[start] {
                continue;
            }
            n += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % img.width) as isize, (i / img.width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if img.get_signed(x + dx, y + dy) {
                            let j = (y + dy) as usize * img.width + (x + dx) as usize;
                            if !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn u_shape_merges() {
        // two arms joined at the bottom: the first pass sees two labels
        let img = BinaryImage::from_fn(5, 4, |x, y| x == 0 || x == 4 || y == 3);
        let c = label_components(&img);
        assert_eq!(c.count, 1);
    }

    #[test]
    fn diagonal_is_connected() {
        let img = BinaryImage::from_fn(4, 4, |x, y| x == y);
        assert_eq!(label_components(&img).count, 1);
        let img = BinaryImage::from_fn(4, 4, |x, y| x + y == 3);
        assert_eq!(label_components(&img).count, 1);
    }

    proptest! {
        #[test]
        fn matches_flood_fill(w in 1usize..16, h in 1usize..16, bits in proptest::collection::vec(any::<bool>(), 256)) {
            let img = BinaryImage::from_fn(w, h, |x, y| bits[y * 16 + x]);
            let c = label_components(&img);
            prop_assert_eq!(c.count, flood_count(&img));
            // labels agree across every 8-adjacent pair
            for y in 0..h {
                for x in 0..w {
                    if !img.get(x, y) { continue; }
                    let l = c.labels[y * w + x];
                    prop_assert!(l > 0);
                    for (dx, dy) in [(1isize, 0isize), (0, 1), (1, 1), (-1, 1)] {
                        if img.get_signed(x as isize + dx, y as isize + dy) {
                            let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                            prop_assert_eq!(c.labels[j], l);
                        }
                    }
                }
            }
        }
    }
}
