//! Binary masks and 8-connected component labelling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    /// (x, y) pixel coordinates in scan order.
    pub pixels: Vec<(usize, usize)>,
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// (min_x, min_y, max_x, max_y), inclusive.
    pub fn bounding_box(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold(
            (usize::MAX, usize::MAX, 0, 0),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        (sx / n, sy / n)
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Any non-zero byte counts as foreground.
    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = u8::from(f(x, y));
            }
        }
        m
    }

    pub fn from_region(width: usize, height: usize, region: &Region) -> Self {
        let mut m = Self::new(width, height);
        for &(x, y) in &region.pixels {
            m.set(x, y, true);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    /// 0/1 bytes, row-major.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn pixels(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
            .collect()
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data.iter().zip(&other.data).filter(|(a, b)| **a != 0 && **b != 0).count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        }
    }

    /// Sub-rectangle starting at (x0, y0).
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.get(x + x0, y + y0))
    }

    /// 8-connected components in order of their first pixel in scan order.
    pub fn components(&self) -> Vec<Region> {
        let (w, h) = (self.width, self.height);
        let mut seen = vec![false; w * h];
        let mut regions = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.data[start] == 0 || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut pixels = Vec::new();
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                pixels.push((x, y));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if self.data[j] != 0 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            pixels.sort_unstable_by_key(|&(x, y)| (y, x));
            regions.push(Region { pixels });
        }
        regions
    }

    /// Mask restricted to its largest 8-connected component (ties: first).
    pub fn largest_component(&self) -> BinaryMask {
        let comps = self.components();
        let mut best: Option<&Region> = None;
        for c in &comps {
            if best.is_none_or(|b| c.area() > b.area()) {
                best = Some(c);
            }
        }
        match best {
            Some(r) => BinaryMask::from_region(self.width, self.height, r),
            None => BinaryMask::new(self.width, self.height),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_neighbours_join() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(m.components().len(), 1);
    }

    #[test]
    fn separate_blobs_split() {
        let m = BinaryMask::from_fn(6, 3, |x, _| x == 0 || x == 5);
        let comps = m.components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].area(), 3);
        assert_eq!(m.largest_component().count(), 3);
    }

    #[test]
    fn bounding_box_and_centroid() {
        let m = BinaryMask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..8).contains(&y));
        let r = &m.components()[0];
        assert_eq!(r.bounding_box(), (2, 3, 4, 7));
        assert_eq!(r.centroid(), (3.0, 5.0));
    }
}
