//! Sobol low-discrepancy sequence with optional random digital shift.
//!
//! Direction numbers are the first entries of the Joe & Kuo `new-joe-kuo-6.21201` table.

const BITS: usize = 32;

// (degree s, coefficient a, initial direction numbers m_1..m_s) for dimensions 2..
const DIRECTIONS: &[(u32, u32, &[u32])] = &[
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

/// Largest supported dimension.
pub const MAX_DIM: usize = DIRECTIONS.len() + 1;

#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// Unscrambled sequence; the first point is the origin.
    pub fn new(dim: usize) -> Self {
        Self::with_shift(dim, vec![0; dim])
    }

    /// Sequence XOR-shifted by `shift` (one word per dimension). A uniformly random shift
    /// keeps the stratification of every dyadic prefix while randomizing the points.
    pub fn with_shift(dim: usize, shift: Vec<u32>) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "sobol supports 1..={MAX_DIM} dimensions, got {dim}");
        assert_eq!(shift.len(), dim);
        let directions = (0..dim).map(direction_numbers).collect();
        Self { directions, shift, state: vec![0; dim], index: 0 }
    }

    pub fn scrambled<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let shift = (0..dim).map(|_| rng.random::<u32>()).collect();
        Self::with_shift(dim, shift)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Skips `n` points.
    pub fn skip_points(&mut self, n: usize) {
        for _ in 0..n {
            self.advance();
        }
    }

    fn advance(&mut self) {
        // Gray-code update: flip the direction of the lowest zero bit of the index.
        let c = (!self.index).trailing_zeros() as usize;
        assert!(c < BITS, "sobol sequence exhausted");
        for (s, v) in self.state.iter_mut().zip(&self.directions) {
            *s ^= v[c];
        }
        self.index += 1;
    }

    /// Next point in `[0,1)^d`.
    pub fn next_point(&mut self) -> Vec<f64> {
        let p = self
            .state
            .iter()
            .zip(&self.shift)
            .map(|(&s, &h)| f64::from(s ^ h) / 4_294_967_296.0)
            .collect();
        self.advance();
        p
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = 1 << (BITS - 1 - i);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for i in 0..s {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (a >> (s - 1 - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn first_points_match_known_values() {
        let mut s = Sobol::new(3);
        let pts = s.take_points(4);
        assert_eq!(pts[0], vec![0.0, 0.0, 0.0]);
        assert_eq!(pts[1], vec![0.5, 0.5, 0.5]);
        assert_eq!(pts[2], vec![0.75, 0.25, 0.25]);
        assert_eq!(pts[3], vec![0.25, 0.75, 0.75]);
    }

    #[test]
    fn dyadic_prefixes_stratify_every_axis() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for seq in [Sobol::new(MAX_DIM), Sobol::scrambled(MAX_DIM, &mut rng)] {
            let mut seq = seq;
            let pts = seq.take_points(256);
            for k in 1..=8 {
                let n = 1usize << k;
                for d in 0..MAX_DIM {
                    let mut hit = vec![false; n];
                    for p in &pts[..n] {
                        hit[(p[d] * n as f64) as usize] = true;
                    }
                    assert!(hit.iter().all(|&h| h), "dim {d} prefix {n} not stratified");
                }
            }
        }
    }

    #[test]
    fn two_dimensional_projection_is_a_net() {
        // the first two coordinates form a (0, m, 2)-net in base 2
        let mut seq = Sobol::new(2);
        let pts = seq.take_points(64);
        for kx in 0..=6 {
            let ky = 6 - kx;
            let mut count = vec![0; 64];
            for p in &pts {
                let i = (p[0] * (1 << kx) as f64) as usize;
                let j = (p[1] * (1 << ky) as f64) as usize;
                count[(i << ky) | j] += 1;
            }
            assert!(count.iter().all(|&c| c == 1));
        }
    }
}
