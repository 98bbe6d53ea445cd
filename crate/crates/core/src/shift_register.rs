//! Three-phase clocked QFP shift register.
//!
//! Stage `i` of a line belongs to clock group `(i % 3) + 1`. Applying the
//! clock phase of group `p` latches every unlatched group-`p` stage whose
//! upstream neighbour holds data, then unlatches those upstream sources.
//! Stages are updated synchronously from the pre-phase state. Beyond the
//! active end of the line sits the detector, which takes a bit from the
//! last stage whenever the phase matches the group the next stage would
//! have.

use rayon::prelude::*;
use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StageState {
    Unlatched,
    LatchedPlus,
    LatchedMinus,
}

impl StageState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            StageState::LatchedPlus
        } else {
            StageState::LatchedMinus
        }
    }

    pub fn bit(self) -> Option<bool> {
        match self {
            StageState::Unlatched => None,
            StageState::LatchedPlus => Some(true),
            StageState::LatchedMinus => Some(false),
        }
    }

    pub fn is_latched(self) -> bool {
        self != StageState::Unlatched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QfpStage {
    pub state: StageState,
    pub phase_group: u8,
    pub operable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    /// Data moves towards increasing stage index.
    Forward,
    Backward,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }

    /// Clock phases making up one full cycle in this direction.
    pub fn cycle(self) -> [u8; 3] {
        match self {
            Direction::Forward => [1, 2, 3],
            Direction::Backward => [2, 1, 3],
        }
    }
}

fn group_of(index: isize) -> u8 {
    (index.rem_euclid(3) + 1) as u8
}

/// One bit taken off the line by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StreamedBit {
    /// Zero-based clock cycle in which the bit arrived.
    pub cycle: usize,
    pub bit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShiftLine {
    pub stages: Vec<QfpStage>,
    /// Stage index of the copy stage for each qubit.
    pub copy_stages: Vec<usize>,
    pub direction: Direction,
}

impl ShiftLine {
    /// A line of `n_stages` unlatched, operable stages. Copy stages sit on
    /// every group-3 stage, so the capacity is `n_stages / 3` bits.
    pub fn new(n_stages: usize, direction: Direction) -> Self {
        let stages = (0..n_stages)
            .map(|i| QfpStage {
                state: StageState::Unlatched,
                phase_group: group_of(i as isize),
                operable: true,
            })
            .collect();
        let copy_stages = (0..n_stages).filter(|i| i % 3 == 2).collect();
        Self {
            stages,
            copy_stages,
            direction,
        }
    }

    pub fn with_breaks(mut self, breaks: &[usize]) -> Result<Self> {
        for &b in breaks {
            let stage = self
                .stages
                .get_mut(b)
                .ok_or_else(|| Error::invalid(format!("break at stage {b} beyond line length")))?;
            stage.operable = false;
            stage.state = StageState::Unlatched;
        }
        Ok(self)
    }

    pub fn capacity(&self) -> usize {
        self.copy_stages.len()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Indices of latched stages, ascending.
    pub fn data_stages(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.stages[i].state.is_latched()).collect()
    }

    /// Bits on the line in ascending stage order.
    pub fn bits(&self) -> Vec<bool> {
        self.stages.iter().filter_map(|s| s.state.bit()).collect()
    }

    /// Latch copy stage `k` to `qubit_states[k]` (true for +).
    pub fn latch_copy(&self, qubit_states: &[bool]) -> Result<ShiftLine> {
        if qubit_states.len() > self.capacity() {
            return Err(Error::invalid(format!(
                "{} qubits exceed line capacity {}",
                qubit_states.len(),
                self.capacity()
            )));
        }
        let mut next = self.clone();
        for (k, &q) in qubit_states.iter().enumerate() {
            let idx = self.copy_stages[k];
            let stage = &mut next.stages[idx];
            if !stage.operable {
                return Err(Error::StageInoperable { stage: idx });
            }
            if stage.state.is_latched() {
                return Err(Error::invalid(format!("copy stage {idx} is already latched")));
            }
            stage.state = StageState::from_bit(q);
        }
        Ok(next)
    }

    /// Load `pattern` into the copy stages nearest the active end, with
    /// `pattern[0]` the first bit to reach the detector.
    pub fn load(&self, pattern: &[bool]) -> Result<ShiftLine> {
        let cap = self.capacity();
        if pattern.len() > cap {
            return Err(Error::invalid(format!(
                "{} bits exceed line capacity {cap}",
                pattern.len()
            )));
        }
        let mut next = self.clone();
        for (k, &bit) in pattern.iter().enumerate() {
            let slot = match self.direction {
                Direction::Forward => cap - 1 - k,
                Direction::Backward => k,
            };
            let idx = self.copy_stages[slot];
            let stage = &mut next.stages[idx];
            if !stage.operable {
                return Err(Error::StageInoperable { stage: idx });
            }
            if stage.state.is_latched() {
                return Err(Error::invalid(format!("copy stage {idx} is already latched")));
            }
            stage.state = StageState::from_bit(bit);
        }
        Ok(next)
    }

    /// Apply one clock phase in place. Returns the bit taken by the
    /// detector, if any.
    pub fn apply_phase(&mut self, phase: u8) -> Result<Option<bool>> {
        if !(1..=3).contains(&phase) {
            return Err(Error::invalid(format!("clock phase must be 1, 2 or 3, got {phase}")));
        }
        let n = self.len();
        if n == 0 {
            return Ok(None);
        }
        let pre: Vec<StageState> = self.stages.iter().map(|s| s.state).collect();
        let mut handed = vec![false; n];
        let upstream = |i: usize| -> Option<usize> {
            match self.direction {
                Direction::Forward => i.checked_sub(1),
                Direction::Backward => (i + 1 < n).then_some(i + 1),
            }
        };
        for i in 0..n {
            let s = &self.stages[i];
            if s.phase_group != phase || !s.operable || pre[i].is_latched() {
                continue;
            }
            if let Some(u) = upstream(i) {
                if pre[u].is_latched() {
                    self.stages[i].state = pre[u];
                    handed[u] = true;
                }
            }
        }
        let (last, sink_group) = match self.direction {
            Direction::Forward => (n - 1, group_of(n as isize)),
            Direction::Backward => (0, group_of(-1)),
        };
        let mut delivered = None;
        if sink_group == phase && pre[last].is_latched() {
            delivered = pre[last].bit();
            handed[last] = true;
        }
        for (i, h) in handed.into_iter().enumerate() {
            if h {
                self.stages[i].state = StageState::Unlatched;
            }
        }
        Ok(delivered)
    }

    /// Pure form of [`ShiftLine::apply_phase`].
    pub fn clock_phase(&self, phase: u8) -> Result<ShiftLine> {
        let mut next = self.clone();
        next.apply_phase(phase)?;
        Ok(next)
    }

    /// First inoperable stage between latched data and the active end.
    pub fn check_path(&self) -> Result<()> {
        let data = self.data_stages();
        let broken: Vec<usize> = (0..self.len()).filter(|&i| !self.stages[i].operable).collect();
        match self.direction {
            Direction::Forward => {
                if let (Some(&d), Some(&b)) = (data.first(), broken.iter().rev().next()) {
                    if b > d {
                        let blocker = broken.iter().copied().find(|&x| x > d).unwrap_or(b);
                        return Err(Error::BrokenPath {
                            broken_stage: blocker,
                            data_stage: d,
                        });
                    }
                }
            }
            Direction::Backward => {
                if let (Some(&d), Some(&b)) = (data.last(), broken.first()) {
                    if b < d {
                        let blocker = broken.iter().rev().copied().find(|&x| x < d).unwrap_or(b);
                        return Err(Error::BrokenPath {
                            broken_stage: blocker,
                            data_stage: d,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Clock full cycles until `n_bits` have reached the detector.
    pub fn stream_out(&mut self, n_bits: usize) -> Result<Vec<StreamedBit>> {
        let available = self.data_stages().len();
        if n_bits > available {
            return Err(Error::invalid(format!(
                "requested {n_bits} bits but only {available} are on the line"
            )));
        }
        self.check_path()?;
        let mut out = Vec::with_capacity(n_bits);
        let max_cycles = self.len() + 1;
        let mut cycle = 0;
        while out.len() < n_bits {
            if cycle > max_cycles {
                return Err(Error::invalid("data did not reach the detector"));
            }
            for phase in self.direction.cycle() {
                if let Some(bit) = self.apply_phase(phase)? {
                    out.push(StreamedBit { cycle, bit });
                }
            }
            cycle += 1;
        }
        Ok(out)
    }
}

/// Data rate of one line in bits/s.
pub fn throughput(filter_bandwidth_hz: f64, phases_per_bit: u32) -> Result<f64> {
    if !(filter_bandwidth_hz > 0.0) || phases_per_bit == 0 {
        return Err(Error::invalid("throughput needs positive bandwidth and phase count"));
    }
    Ok(filter_bandwidth_hz / phases_per_bit as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Orientation {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineSpec {
    pub id: usize,
    pub orientation: Orientation,
    /// Inoperable stage indices, ascending.
    pub breaks: Vec<usize>,
}

/// Processor grid of `side x side` cells with one vertical and one
/// horizontal line per row/column and a detector site at each line end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessorTopology {
    pub n_cells: u64,
    pub stages_per_line: usize,
    pub lines: Vec<LineSpec>,
}

impl ProcessorTopology {
    pub fn new(n_cells: u64, stages_per_line: usize, breaks: &[(usize, usize)]) -> Result<Self> {
        let side = (n_cells as f64).sqrt().round() as u64;
        if side == 0 || side * side != n_cells {
            return Err(Error::NotPerfectSquare(n_cells));
        }
        if stages_per_line < 3 {
            return Err(Error::invalid(format!("need at least 3 stages per line, got {stages_per_line}")));
        }
        let n_lines = 2 * side as usize;
        let mut lines: Vec<LineSpec> = (0..n_lines)
            .map(|id| LineSpec {
                id,
                orientation: if id < side as usize {
                    Orientation::Vertical
                } else {
                    Orientation::Horizontal
                },
                breaks: Vec::new(),
            })
            .collect();
        for &(line, stage) in breaks {
            if line >= n_lines || stage >= stages_per_line {
                return Err(Error::invalid(format!("break ({line}, {stage}) outside topology")));
            }
            lines[line].breaks.push(stage);
        }
        for l in &mut lines {
            l.breaks.sort_unstable();
            l.breaks.dedup();
        }
        Ok(Self {
            n_cells,
            stages_per_line,
            lines,
        })
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn detector_sites(&self) -> usize {
        2 * self.n_lines()
    }

    pub fn line(&self, id: usize, direction: Direction) -> Result<ShiftLine> {
        let spec = self
            .lines
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no line {id}")))?;
        ShiftLine::new(self.stages_per_line, direction).with_breaks(&spec.breaks)
    }

    /// Copy stages of line `id` with a clear path to the detector at the
    /// `direction` end.
    pub fn reachable_copy_stages(&self, id: usize, direction: Direction) -> usize {
        let (back, fwd) = self.reachable(id);
        match direction {
            Direction::Backward => back,
            Direction::Forward => fwd,
        }
    }

    /// Copy stages that can reach each end: `(backward, forward)`.
    fn reachable(&self, id: usize) -> (usize, usize) {
        let line = ShiftLine::new(self.stages_per_line, Direction::Forward);
        let b = &self.lines[id].breaks;
        let back = line
            .copy_stages
            .iter()
            .filter(|&&c| b.first().is_none_or(|&x| c < x))
            .count();
        let fwd = line
            .copy_stages
            .iter()
            .filter(|&&c| b.last().is_none_or(|&x| c > x))
            .count();
        (back, fwd)
    }
}

/// Site index of the detector at one end of a line.
pub fn detector_site(line: usize, direction: Direction) -> usize {
    2 * line
        + match direction {
            Direction::Backward => 0,
            Direction::Forward => 1,
        }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReadoutPlan {
    pub directions: Vec<Direction>,
    /// Active detector sites, one per line, ascending.
    pub active_sites: Vec<usize>,
    pub total_sites: usize,
}

/// Choose one active detector per line. A broken line is turned towards
/// the end that more of its copy stages can still reach.
pub fn plan_readout(topology: &ProcessorTopology, requested: &[Direction]) -> Result<ReadoutPlan> {
    if requested.len() != topology.n_lines() {
        return Err(Error::invalid(format!(
            "{} directions for {} lines",
            requested.len(),
            topology.n_lines()
        )));
    }
    let directions: Vec<Direction> = requested
        .iter()
        .enumerate()
        .map(|(id, &dir)| {
            if topology.lines[id].breaks.is_empty() {
                return dir;
            }
            let (back, fwd) = topology.reachable(id);
            match back.cmp(&fwd) {
                std::cmp::Ordering::Greater => Direction::Backward,
                std::cmp::Ordering::Less => Direction::Forward,
                std::cmp::Ordering::Equal => dir,
            }
        })
        .collect();
    let active_sites = directions
        .iter()
        .enumerate()
        .map(|(id, &d)| detector_site(id, d))
        .collect();
    Ok(ReadoutPlan {
        directions,
        active_sites,
        total_sites: topology.detector_sites(),
    })
}

/// A bit streamed from a given line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LineBit {
    pub line_id: usize,
    pub cycle: usize,
    pub bit: bool,
}

/// Load each line with its pattern and stream it out, lines in parallel.
/// A line whose pattern is cut off by a break fails the whole call.
pub fn stream_lines(
    topology: &ProcessorTopology,
    plan: &ReadoutPlan,
    patterns: &[Vec<bool>],
) -> Result<Vec<LineBit>> {
    if patterns.len() != topology.n_lines() {
        return Err(Error::invalid(format!(
            "{} patterns for {} lines",
            patterns.len(),
            topology.n_lines()
        )));
    }
    let per_line: Vec<Result<Vec<LineBit>>> = (0..topology.n_lines())
        .into_par_iter()
        .map(|id| {
            let mut line = topology.line(id, plan.directions[id])?.load(&patterns[id])?;
            let bits = line.stream_out(patterns[id].len())?;
            Ok(bits
                .into_iter()
                .map(|b| LineBit {
                    line_id: id,
                    cycle: b.cycle,
                    bit: b.bit,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_line {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits_of(out: &[StreamedBit]) -> Vec<bool> {
        out.iter().map(|b| b.bit).collect()
    }

    #[test]
    fn latch_copy_examples() {
        let line = ShiftLine::new(12, Direction::Forward);
        let l = line.latch_copy(&[true, false]).unwrap();
        assert_eq!(l.stages[2].state, StageState::LatchedPlus);
        assert_eq!(l.stages[5].state, StageState::LatchedMinus);
        assert_eq!(line.latch_copy(&[]).unwrap(), line);
        let broken = line.with_breaks(&[5]).unwrap();
        assert_eq!(broken.latch_copy(&[true, true]), Err(Error::StageInoperable { stage: 5 }));
        assert!(ShiftLine::new(12, Direction::Forward).latch_copy(&[true; 5]).is_err());
    }

    #[test]
    fn single_bit_advances_three_stages_per_cycle() {
        // Brute-force: every position of one bit on a 12-stage line.
        for start in (2..12).step_by(3) {
            for bit in [true, false] {
                let mut line = ShiftLine::new(12, Direction::Forward);
                line.stages[start].state = StageState::from_bit(bit);
                let mut delivered = None;
                for p in [1, 2, 3] {
                    delivered = delivered.or(line.apply_phase(p).unwrap());
                }
                if start + 3 < 12 {
                    assert_eq!(line.data_stages(), vec![start + 3]);
                    assert_eq!(line.bits(), vec![bit]);
                } else {
                    assert_eq!(delivered, Some(bit));
                    assert!(line.data_stages().is_empty());
                }
            }
        }
    }

    #[test]
    fn empty_line_is_fixed_point() {
        let line = ShiftLine::new(12, Direction::Forward);
        for p in [1, 2, 3] {
            assert_eq!(line.clock_phase(p).unwrap(), line);
        }
        assert!(line.clock_phase(4).is_err());
    }

    #[test]
    fn every_third_stage_pattern_preserved() {
        for mask in 0u8..8 {
            let pattern: Vec<bool> = (0..3).map(|k| mask >> k & 1 == 1).collect();
            let mut line = ShiftLine::new(12, Direction::Forward).latch_copy(&pattern).unwrap();
            let mut delivered = Vec::new();
            for p in [1, 2, 3, 1, 2, 3, 1] {
                delivered.extend(line.apply_phase(p).unwrap());
                let d = line.data_stages();
                assert!(d.windows(2).all(|w| w[1] - w[0] == 3));
                // Delivered bits left from the high end, last one first.
                let mut seen = line.bits();
                seen.extend(delivered.iter().rev());
                assert_eq!(seen, pattern);
            }
        }
    }

    #[test]
    fn stream_order_and_reversal() {
        let fwd = ShiftLine::new(12, Direction::Forward).latch_copy(&[true, false, false]).unwrap();
        let mut f = fwd.clone();
        // Forward delivers the highest copy stage first.
        assert_eq!(bits_of(&f.stream_out(3).unwrap()), vec![false, false, true]);
        let mut b = ShiftLine { direction: Direction::Backward, ..fwd };
        assert_eq!(bits_of(&b.stream_out(3).unwrap()), vec![true, false, false]);
        let mut l = ShiftLine::new(12, Direction::Forward).load(&[true, false, true]).unwrap();
        let out = l.stream_out(3).unwrap();
        assert_eq!(bits_of(&out), vec![true, false, true]);
        assert!(out.windows(2).all(|w| w[1].cycle == w[0].cycle + 1));
    }

    #[test]
    fn break_is_detected_and_rerouted() {
        let line = ShiftLine::new(12, Direction::Forward).with_breaks(&[7]).unwrap();
        let loaded = line.latch_copy(&[true, false]).unwrap();
        let mut fwd = loaded.clone();
        assert_eq!(
            fwd.stream_out(2),
            Err(Error::BrokenPath { broken_stage: 7, data_stage: 2 })
        );
        let mut back = ShiftLine { direction: Direction::Backward, ..loaded };
        assert_eq!(bits_of(&back.stream_out(2).unwrap()), vec![true, false]);
    }

    #[test]
    fn load_uses_stages_nearest_active_end() {
        let line = ShiftLine::new(30, Direction::Forward).with_breaks(&[10]).unwrap();
        let t = ProcessorTopology::new(1, 30, &[(0, 10)]).unwrap();
        let n = t.reachable_copy_stages(0, Direction::Forward);
        assert_eq!(n, 7);
        let pattern = [true, false, false, true, true, false, true];
        let mut l = line.load(&pattern).unwrap();
        assert_eq!(bits_of(&l.stream_out(7).unwrap()), pattern);
        assert!(line.load(&[true; 11]).is_err());
        assert_eq!(t.reachable_copy_stages(0, Direction::Backward), 3);
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(30e6, 3).unwrap(), 10e6);
        assert_eq!(throughput(15e6, 3).unwrap(), 5e6);
        assert_eq!(throughput(30e6, 6).unwrap(), 5e6);
        assert!(throughput(0.0, 3).is_err());
    }

    #[test]
    fn topology_and_plan() {
        let t = ProcessorTopology::new(64, 30, &[]).unwrap();
        assert_eq!((t.n_lines(), t.detector_sites()), (16, 32));
        let plan = plan_readout(&t, &[Direction::Forward; 16]).unwrap();
        assert_eq!(plan.active_sites.len(), 16);
        assert_eq!(plan.total_sites, 32);
        let big = ProcessorTopology::new(256, 30, &[]).unwrap();
        let plan = plan_readout(&big, &[Direction::Backward; 32]).unwrap();
        assert_eq!((big.detector_sites(), plan.active_sites.len()), (64, 32));
        assert_eq!(ProcessorTopology::new(60, 30, &[]), Err(Error::NotPerfectSquare(60)));
    }

    #[test]
    fn break_near_end_forces_direction() {
        let t = ProcessorTopology::new(64, 30, &[(3, 27)]).unwrap();
        let plan = plan_readout(&t, &[Direction::Forward; 16]).unwrap();
        assert_eq!(plan.directions[3], Direction::Backward);
        assert_eq!(plan.active_sites[3], 6);
        let t = ProcessorTopology::new(64, 30, &[(5, 1)]).unwrap();
        let plan = plan_readout(&t, &[Direction::Backward; 16]).unwrap();
        assert_eq!(plan.directions[5], Direction::Forward);
    }

    #[test]
    fn stream_lines_runs_every_line() {
        let t = ProcessorTopology::new(4, 9, &[]).unwrap();
        let plan = plan_readout(&t, &[Direction::Forward; 4]).unwrap();
        let patterns = vec![vec![true, false], vec![false], vec![], vec![true, true, false]];
        let out = stream_lines(&t, &plan, &patterns).unwrap();
        for (id, p) in patterns.iter().enumerate() {
            let got: Vec<bool> = out.iter().filter(|b| b.line_id == id).map(|b| b.bit).collect();
            assert_eq!(&got, p);
        }
    }

    fn pattern_strategy() -> impl Strategy<Value = Vec<bool>> {
        proptest::collection::vec(any::<bool>(), 0..=10)
    }

    proptest! {
        #[test]
        fn round_trip_both_directions(pattern in pattern_strategy(), backward in any::<bool>()) {
            let dir = if backward { Direction::Backward } else { Direction::Forward };
            let mut line = ShiftLine::new(30, dir).load(&pattern).unwrap();
            prop_assert_eq!(bits_of(&line.stream_out(pattern.len()).unwrap()), pattern);
        }

        #[test]
        fn conservation_and_spacing(
            pattern in pattern_strategy(),
            phases in proptest::collection::vec(1u8..=3, 0..60),
            backward in any::<bool>(),
        ) {
            let dir = if backward { Direction::Backward } else { Direction::Forward };
            let mut line = ShiftLine::new(30, dir).latch_copy(&pattern).unwrap();
            let mut delivered = Vec::new();
            for p in phases {
                let before = line.clone();
                prop_assert_eq!(before.clock_phase(p).unwrap(), before.clock_phase(p).unwrap());
                if let Some(b) = line.apply_phase(p).unwrap() {
                    delivered.push(b);
                }
                let d = line.data_stages();
                prop_assert!(d.windows(2).all(|w| w[1] - w[0] >= 3));
                let mut all = line.bits();
                let ones = all.iter().filter(|b| **b).count() + delivered.iter().filter(|b| **b).count();
                all.extend(&delivered);
                prop_assert_eq!(all.len(), pattern.len());
                prop_assert_eq!(ones, pattern.iter().filter(|b| **b).count());
            }
        }
    }
}
