//! Bloom-filter encoding of cluster membership: one filter per cluster.

/// Bits per member giving a 1% false-positive rate at the optimal hash count.
pub const BITS_PER_ITEM_1PCT: f64 = 9.585_058_377_367_439;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    n_bits: u64,
    n_hashes: u32,
    words: Vec<u64>,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    z = (z ^ (z >> 33)).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^ (z >> 33)
}

impl BloomFilter {
    /// Filter sized for `n_members` at false-positive rate `fp_rate`.
    pub fn with_rate(n_members: usize, fp_rate: f64) -> Self {
        let n = n_members.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let n_bits = (-(n * fp_rate.ln()) / (ln2 * ln2)).ceil().max(8.0) as u64;
        let n_hashes = ((n_bits as f64 / n) * ln2).round().max(1.0) as u32;
        Self::from_parts(n_bits, n_hashes, vec![0; n_bits.div_ceil(64) as usize])
    }

    pub(crate) fn from_parts(n_bits: u64, n_hashes: u32, words: Vec<u64>) -> Self {
        BloomFilter {
            n_bits,
            n_hashes,
            words,
        }
    }

    fn positions(&self, key: u32) -> impl Iterator<Item = u64> + '_ {
        let h1 = mix(u64::from(key) ^ 0x9e37_79b9_7f4a_7c15);
        let h2 = mix(h1 ^ u64::from(key)) | 1;
        (0..u64::from(self.n_hashes)).map(move |j| h1.wrapping_add(j.wrapping_mul(h2)) % self.n_bits)
    }

    pub fn insert(&mut self, key: u32) {
        let positions: Vec<u64> = self.positions(key).collect();
        for bit in positions {
            self.words[(bit / 64) as usize] |= 1 << (bit % 64);
        }
    }

    pub fn contains(&self, key: u32) -> bool {
        self.positions(key)
            .all(|bit| self.words[(bit / 64) as usize] & (1 << (bit % 64)) != 0)
    }

    pub fn n_bits(&self) -> u64 {
        self.n_bits
    }

    pub fn n_hashes(&self) -> u32 {
        self.n_hashes
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn size_bytes(&self) -> usize {
        self.n_bits.div_ceil(8) as usize
    }
}

/// Builds one filter per cluster from an item-to-cluster map.
pub fn encode_membership(membership: &[u32], n_clusters: usize, fp_rate: f64) -> Vec<BloomFilter> {
    let mut counts = vec![0usize; n_clusters];
    for &c in membership {
        counts[c as usize] += 1;
    }
    let mut filters: Vec<BloomFilter> = counts.iter().map(|&n| BloomFilter::with_rate(n, fp_rate)).collect();
    for (item, &c) in membership.iter().enumerate() {
        filters[c as usize].insert(item as u32);
    }
    filters
}

/// Lowest-id cluster whose filter claims `item`, with the number of
/// filters that matched.
pub fn lookup(filters: &[BloomFilter], item: u32) -> (Option<u32>, usize) {
    let mut first = None;
    let mut hits = 0;
    for (c, f) in filters.iter().enumerate() {
        if f.contains(item) {
            hits += 1;
            first.get_or_insert(c as u32);
        }
    }
    (first, hits)
}
