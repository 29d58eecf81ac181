//! Latent grids, mixed-resolution token sets and the upsampling covariance.
//!
//! A [`LatentGrid`] stores one resolution level of a latent image in
//! channel-major row-major order. 2x nearest-neighbor upsampling replicates
//! each low cell into a 2x2 sibling block; the covariance operator induced by
//! that replication (`Sigma`) has all-ones 4x4 blocks over sibling groups and
//! is applied per channel by [`BlockCovariance::apply`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution level of a grid or token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Low,
    High,
}

/// A 2-D latent field. `values[ch][row][col]` flattened with the channel
/// outermost: `idx = (ch * height + row) * width + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub level: Level,
    pub values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        level: Level,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {}x{}x{} = {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            level,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, level: Level) -> Self {
        Self {
            height,
            width,
            channels,
            level,
            values: vec![0.0; height * width * channels],
        }
    }

    /// Builds a grid by evaluating `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        level: Level,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for ch in 0..channels {
            for r in 0..height {
                for c in 0..width {
                    values.push(f(ch, r, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            level,
            values,
        }
    }

    #[inline]
    pub fn index(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(ch, row, col)]
    }

    /// Values of one cell across channels.
    pub fn cell(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.channels)
            .map(|ch| self.get(ch, row, col))
            .collect()
    }

    /// 2x nearest-neighbor upsampling: each low cell is replicated into its
    /// 2x2 high-resolution footprint.
    pub fn upsample_nn(&self) -> Result<LatentGrid> {
        if self.level != Level::Low {
            return Err(Error::Contract("upsample_nn requires a LOW grid".into()));
        }
        let (h, w) = (self.height, self.width);
        let mut out = LatentGrid::zeros(2 * h, 2 * w, self.channels, Level::High);
        for ch in 0..self.channels {
            for r in 0..h {
                for c in 0..w {
                    let v = self.get(ch, r, c);
                    for (dr, dc) in SIBLING_OFFSETS {
                        let idx = out.index(ch, 2 * r + dr, 2 * c + dc);
                        out.values[idx] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Block-average downsampling: each output cell is the mean of its 2x2
    /// footprint. Requires even height and width.
    pub fn downsample_avg(&self) -> Result<LatentGrid> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::Shape(format!(
                "downsample_avg requires even dimensions, got {}x{}",
                self.height, self.width
            )));
        }
        let (h, w) = (self.height / 2, self.width / 2);
        let mut out = LatentGrid::zeros(h, w, self.channels, Level::Low);
        for ch in 0..self.channels {
            for r in 0..h {
                for c in 0..w {
                    let mut sum = 0.0;
                    for (dr, dc) in SIBLING_OFFSETS {
                        sum += self.get(ch, 2 * r + dr, 2 * c + dc);
                    }
                    let idx = out.index(ch, r, c);
                    out.values[idx] = sum / 4.0;
                }
            }
        }
        Ok(out)
    }
}

/// Offsets of the four siblings within a 2x2 block, in canonical order.
pub const SIBLING_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// One token: a single latent cell at its level's native coordinates, with
/// one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub row: usize,
    pub col: usize,
    pub level: Level,
    pub values: Vec<f64>,
}

/// A mixed-resolution collection of tokens over a low-resolution base grid.
///
/// Every base patch is represented exactly once: either by one LOW token at
/// its own coordinates, or by four HIGH children covering its 2x2 footprint.
/// Entries are kept in canonical order (base patches row-major, children in
/// [`SIBLING_OFFSETS`] order), which makes token indices and RNG draw order
/// deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSet {
    pub base_height: usize,
    pub base_width: usize,
    pub channels: usize,
    pub entries: Vec<TokenEntry>,
}

impl TokenSet {
    /// All-LOW token set from a LOW grid.
    pub fn from_low_grid(grid: &LatentGrid) -> Result<Self> {
        if grid.level != Level::Low {
            return Err(Error::Contract("from_low_grid requires a LOW grid".into()));
        }
        let mut entries = Vec::with_capacity(grid.height * grid.width);
        for r in 0..grid.height {
            for c in 0..grid.width {
                entries.push(TokenEntry {
                    row: r,
                    col: c,
                    level: Level::Low,
                    values: grid.cell(r, c),
                });
            }
        }
        Ok(Self {
            base_height: grid.height,
            base_width: grid.width,
            channels: grid.channels,
            entries,
        })
    }

    /// All-HIGH token set from a HIGH grid with even dimensions.
    pub fn from_high_grid(grid: &LatentGrid) -> Result<Self> {
        if grid.level != Level::High {
            return Err(Error::Contract(
                "from_high_grid requires a HIGH grid".into(),
            ));
        }
        if grid.height % 2 != 0 || grid.width % 2 != 0 {
            return Err(Error::Shape("HIGH grid dimensions must be even".into()));
        }
        let (bh, bw) = (grid.height / 2, grid.width / 2);
        let mut entries = Vec::with_capacity(grid.height * grid.width);
        for r in 0..bh {
            for c in 0..bw {
                for (dr, dc) in SIBLING_OFFSETS {
                    let (hr, hc) = (2 * r + dr, 2 * c + dc);
                    entries.push(TokenEntry {
                        row: hr,
                        col: hc,
                        level: Level::High,
                        values: grid.cell(hr, hc),
                    });
                }
            }
        }
        Ok(Self {
            base_height: bh,
            base_width: bw,
            channels: grid.channels,
            entries,
        })
    }

    pub fn token_count(&self) -> usize {
        self.entries.len()
    }

    /// Checks the coverage invariant: every base patch is represented by
    /// exactly one LOW token or exactly four HIGH children, with no overlap.
    pub fn validate_coverage(&self) -> Result<()> {
        let patches = self.base_height * self.base_width;
        // 0 = unseen, 1 = low, 2.. = 1 + number of high children seen
        let mut state = vec![0u8; patches];
        for e in &self.entries {
            match e.level {
                Level::Low => {
                    if e.row >= self.base_height || e.col >= self.base_width {
                        return Err(Error::Shape(format!(
                            "LOW token ({},{}) out of range",
                            e.row, e.col
                        )));
                    }
                    let p = e.row * self.base_width + e.col;
                    if state[p] != 0 {
                        return Err(Error::Consistency(format!(
                            "patch ({},{}) written twice",
                            e.row, e.col
                        )));
                    }
                    state[p] = 1;
                }
                Level::High => {
                    if e.row >= 2 * self.base_height || e.col >= 2 * self.base_width {
                        return Err(Error::Shape(format!(
                            "HIGH token ({},{}) out of range",
                            e.row, e.col
                        )));
                    }
                    let p = (e.row / 2) * self.base_width + e.col / 2;
                    if state[p] == 1 || state[p] >= 6 {
                        return Err(Error::Consistency(format!(
                            "patch ({},{}) has conflicting writers",
                            e.row / 2,
                            e.col / 2
                        )));
                    }
                    state[p] = if state[p] == 0 { 2 } else { state[p] + 1 };
                }
            }
            if e.values.len() != self.channels {
                return Err(Error::Shape("token channel count mismatch".into()));
            }
        }
        for (p, s) in state.iter().enumerate() {
            if *s != 1 && *s != 5 {
                return Err(Error::Consistency(format!(
                    "patch ({},{}) covered by {} writer state",
                    p / self.base_width,
                    p % self.base_width,
                    s
                )));
            }
        }
        // HIGH children of one patch must be the four distinct siblings; the
        // count check above only guarantees their number, so re-scan.
        let mut seen = vec![[false; 4]; patches];
        for e in &self.entries {
            if e.level == Level::High {
                let p = (e.row / 2) * self.base_width + e.col / 2;
                let child = (e.row % 2) * 2 + e.col % 2;
                if seen[p][child] {
                    return Err(Error::Consistency(format!(
                        "duplicate HIGH child ({},{})",
                        e.row, e.col
                    )));
                }
                seen[p][child] = true;
            }
        }
        Ok(())
    }

    /// Replaces each selected LOW token by four HIGH children replicating the
    /// parent value. Selecting a patch that is already HIGH (or selecting it
    /// twice) is a contract violation.
    pub fn upsample_selected(&self, selection: &[(usize, usize)]) -> Result<TokenSet> {
        let mut selected = vec![false; self.base_height * self.base_width];
        for &(r, c) in selection {
            if r >= self.base_height || c >= self.base_width {
                return Err(Error::Shape(format!(
                    "selected patch ({r},{c}) out of range"
                )));
            }
            let p = r * self.base_width + c;
            if selected[p] {
                return Err(Error::Contract(format!("patch ({r},{c}) selected twice")));
            }
            selected[p] = true;
        }
        let mut entries = Vec::with_capacity(self.entries.len() + 3 * selection.len());
        for e in &self.entries {
            let is_selected = match e.level {
                Level::Low => selected[e.row * self.base_width + e.col],
                Level::High => {
                    let p = (e.row / 2) * self.base_width + e.col / 2;
                    if selected[p] {
                        return Err(Error::Contract(format!(
                            "patch ({},{}) is already HIGH",
                            e.row / 2,
                            e.col / 2
                        )));
                    }
                    false
                }
            };
            if is_selected {
                for (dr, dc) in SIBLING_OFFSETS {
                    entries.push(TokenEntry {
                        row: 2 * e.row + dr,
                        col: 2 * e.col + dc,
                        level: Level::High,
                        values: e.values.clone(),
                    });
                }
            } else {
                entries.push(e.clone());
            }
        }
        let out = TokenSet {
            base_height: self.base_height,
            base_width: self.base_width,
            channels: self.channels,
            entries,
        };
        out.validate_coverage()?;
        Ok(out)
    }

    /// Coordinates of the patches still held as LOW tokens, row-major.
    pub fn low_patches(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter(|e| e.level == Level::Low)
            .map(|e| (e.row, e.col))
            .collect()
    }

    /// Assembles the tokens into a HIGH grid, replicating LOW tokens into
    /// their 2x2 footprint. Fails if coverage is violated.
    pub fn assemble_high(&self) -> Result<LatentGrid> {
        self.validate_coverage()?;
        let mut out = LatentGrid::zeros(
            2 * self.base_height,
            2 * self.base_width,
            self.channels,
            Level::High,
        );
        for e in &self.entries {
            match e.level {
                Level::Low => {
                    for (dr, dc) in SIBLING_OFFSETS {
                        for ch in 0..self.channels {
                            let idx = out.index(ch, 2 * e.row + dr, 2 * e.col + dc);
                            out.values[idx] = e.values[ch];
                        }
                    }
                }
                Level::High => {
                    for ch in 0..self.channels {
                        let idx = out.index(ch, e.row, e.col);
                        out.values[idx] = e.values[ch];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Assembles an all-LOW token set back into a LOW grid.
    pub fn assemble_low(&self) -> Result<LatentGrid> {
        let mut out =
            LatentGrid::zeros(self.base_height, self.base_width, self.channels, Level::Low);
        let mut written = 0usize;
        for e in &self.entries {
            if e.level != Level::Low {
                return Err(Error::Contract(
                    "assemble_low requires an all-LOW token set".into(),
                ));
            }
            for ch in 0..self.channels {
                let idx = out.index(ch, e.row, e.col);
                out.values[idx] = e.values[ch];
            }
            written += 1;
        }
        if written != self.base_height * self.base_width {
            return Err(Error::Consistency("incomplete LOW coverage".into()));
        }
        Ok(out)
    }
}

/// Layout of the nearest-neighbor upsampling covariance `Sigma` for a HIGH
/// grid: all-ones 4x4 blocks over each spatial sibling group, applied
/// independently per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCovariance {
    pub high_height: usize,
    pub high_width: usize,
    pub channels: usize,
}

impl BlockCovariance {
    /// Sibling blocks contain exactly 4 elements for 2x upsampling.
    pub const BLOCK_SIZE: usize = 4;

    pub fn new(high_height: usize, high_width: usize, channels: usize) -> Result<Self> {
        if high_height % 2 != 0 || high_width % 2 != 0 {
            return Err(Error::Shape(format!(
                "block layout requires even dimensions, got {high_height}x{high_width}"
            )));
        }
        Ok(Self {
            high_height,
            high_width,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.high_height * self.high_width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies `Sigma`: the sum over each sibling block is broadcast back to
    /// the block members. `x` is in channel-major row-major HIGH layout.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} values for {}x{}x{} layout, got {}",
                self.len(),
                self.high_height,
                self.high_width,
                self.channels,
                x.len()
            )));
        }
        let (h, w) = (self.high_height, self.high_width);
        let mut out = vec![0.0; x.len()];
        for ch in 0..self.channels {
            let plane = ch * h * w;
            for br in 0..h / 2 {
                for bc in 0..w / 2 {
                    let mut sum = 0.0;
                    for (dr, dc) in SIBLING_OFFSETS {
                        sum += x[plane + (2 * br + dr) * w + 2 * bc + dc];
                    }
                    for (dr, dc) in SIBLING_OFFSETS {
                        out[plane + (2 * br + dr) * w + 2 * bc + dc] = sum;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, vals: &[f64]) -> LatentGrid {
        LatentGrid::new(h, w, 1, Level::Low, vals.to_vec()).unwrap()
    }

    #[test]
    fn upsample_replicates_single_cell() {
        let g = grid(1, 1, &[5.0]);
        let up = g.upsample_nn().unwrap();
        assert_eq!(up.level, Level::High);
        assert_eq!(up.values, vec![5.0; 4]);
    }

    #[test]
    fn upsample_2x1_layout() {
        let g = grid(2, 1, &[1.0, 2.0]);
        let up = g.upsample_nn().unwrap();
        assert_eq!((up.height, up.width), (4, 2));
        assert_eq!(up.values, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn downsample_means_blocks() {
        let g = LatentGrid::new(2, 2, 1, Level::High, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let down = g.downsample_avg().unwrap();
        assert_eq!(down.values, vec![2.5]);
        assert_eq!(down.level, Level::Low);
    }

    #[test]
    fn downsample_rejects_odd_dims() {
        let g = LatentGrid::new(3, 2, 1, Level::High, vec![0.0; 6]).unwrap();
        assert!(matches!(g.downsample_avg(), Err(Error::Shape(_))));
    }

    #[test]
    fn up_then_down_is_identity() {
        let g = LatentGrid::from_fn(3, 5, 2, Level::Low, |ch, r, c| {
            (ch * 100 + r * 10 + c) as f64
        });
        let round = g.upsample_nn().unwrap().downsample_avg().unwrap();
        assert_eq!(round, g);
    }

    #[test]
    fn sigma_examples() {
        let cov = BlockCovariance::new(2, 2, 1).unwrap();
        assert_eq!(cov.apply(&[1.0, 1.0, 1.0, 1.0]).unwrap(), vec![4.0; 4]);
        assert_eq!(cov.apply(&[1.0, -1.0, 0.0, 0.0]).unwrap(), vec![0.0; 4]);
        assert!(cov.apply(&[1.0; 3]).is_err());
    }

    #[test]
    fn selected_upsample_token_counts() {
        let g = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let tokens = TokenSet::from_low_grid(&g).unwrap();
        assert_eq!(tokens.token_count(), 4);

        let same = tokens.upsample_selected(&[]).unwrap();
        assert_eq!(same, tokens);

        let mixed = tokens.upsample_selected(&[(0, 1)]).unwrap();
        assert_eq!(mixed.token_count(), 7);
        mixed.validate_coverage().unwrap();
        // re-selecting the promoted patch is a contract violation
        assert!(matches!(
            mixed.upsample_selected(&[(0, 1)]),
            Err(Error::Contract(_))
        ));

        let all = tokens.upsample_selected(&tokens.low_patches()).unwrap();
        assert_eq!(all.token_count(), 16);
        assert_eq!(all.assemble_high().unwrap(), g.upsample_nn().unwrap());
    }

    #[test]
    fn paper_stage2_token_count() {
        let g = LatentGrid::zeros(32, 32, 1, Level::Low);
        let tokens = TokenSet::from_low_grid(&g).unwrap();
        let selection: Vec<(usize, usize)> = (0..308).map(|i| (i / 32, i % 32)).collect();
        let mixed = tokens.upsample_selected(&selection).unwrap();
        assert_eq!(mixed.token_count(), 1948);
    }

    #[test]
    fn assemble_low_roundtrip() {
        let g = grid(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tokens = TokenSet::from_low_grid(&g).unwrap();
        assert_eq!(tokens.assemble_low().unwrap(), g);
        let mixed = tokens.upsample_selected(&[(1, 2)]).unwrap();
        assert!(mixed.assemble_low().is_err());
    }
}
