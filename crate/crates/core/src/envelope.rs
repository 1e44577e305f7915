//! Upper envelopes of value lines over the belief direction.
//!
//! A line `(r, s)` is worth `a·r + c·s` at weights `(a, c)`; on the
//! normalised direction `t = c / (a + c)` it is `r + t·(s − r)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueLine {
    pub r: f64,
    pub s: f64,
}

impl ValueLine {
    pub const STOP: ValueLine = ValueLine { r: 0.0, s: 1.0 };

    #[inline]
    pub fn eval(&self, a: f64, c: f64) -> f64 {
        a * self.r + c * self.s
    }

    #[inline]
    fn slope(&self) -> f64 {
        self.s - self.r
    }
}

/// Pieces narrower than this are dropped after each construction.
const MIN_WIDTH: f64 = 1e-12;
/// Lines closer than this in both coefficients are merged.
const SAME_LINE: f64 = 1e-15;

/// Maximum of a finite set of lines on `t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    lines: Vec<ValueLine>,
    /// `starts[i]` is where `lines[i]` becomes active; `starts[0] = 0`.
    starts: Vec<f64>,
}

impl Envelope {
    pub fn single(line: ValueLine) -> Self {
        Self {
            lines: vec![line],
            starts: vec![0.0],
        }
    }

    pub fn from_lines(mut lines: Vec<ValueLine>) -> Self {
        assert!(!lines.is_empty(), "envelope of no lines");
        lines.sort_by(|x, y| x.slope().total_cmp(&y.slope()).then(y.r.total_cmp(&x.r)));
        let mut hull: Vec<ValueLine> = Vec::with_capacity(lines.len());
        let mut starts: Vec<f64> = Vec::with_capacity(lines.len());
        for l in lines {
            if let Some(last) = hull.last() {
                if (l.slope() - last.slope()).abs() <= SAME_LINE {
                    // Same slope, lower or equal intercept after sorting.
                    continue;
                }
            }
            loop {
                let Some(&last) = hull.last() else {
                    hull.push(l);
                    starts.push(f64::NEG_INFINITY);
                    break;
                };
                let x = (last.r - l.r) / (l.slope() - last.slope());
                if x <= *starts.last().unwrap() {
                    hull.pop();
                    starts.pop();
                } else {
                    hull.push(l);
                    starts.push(x);
                    break;
                }
            }
        }
        // Restrict to [0, 1].
        let first = starts.iter().rposition(|&x| x <= 0.0).unwrap_or(0);
        let end = starts.iter().position(|&x| x >= 1.0).unwrap_or(starts.len());
        let mut lines: Vec<ValueLine> = hull[first..end.max(first + 1)].to_vec();
        let mut starts: Vec<f64> = starts[first..end.max(first + 1)].to_vec();
        starts[0] = 0.0;
        prune(&mut lines, &mut starts);
        Self { lines, starts }
    }

    pub fn lines(&self) -> &[ValueLine] {
        &self.lines
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.starts
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    fn index(&self, t: f64) -> usize {
        self.starts.partition_point(|&x| x <= t).saturating_sub(1)
    }

    /// Active line at weights `(a, c)`. Ties resolve to the lower slope.
    pub fn best(&self, a: f64, c: f64) -> ValueLine {
        let w = a + c;
        if w <= 0.0 {
            return self.lines[0];
        }
        let i = self.index(c / w);
        // The neighbours cover rounding in the breakpoint search.
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(self.lines.len() - 1);
        let mut best = self.lines[lo];
        for l in &self.lines[lo + 1..=hi] {
            if l.eval(a, c) > best.eval(a, c) {
                best = *l;
            }
        }
        best
    }

    pub fn eval(&self, a: f64, c: f64) -> f64 {
        self.best(a, c).eval(a, c)
    }

    /// Value at direction `t`.
    pub fn at(&self, t: f64) -> f64 {
        self.eval(1.0 - t, t)
    }

    /// Pointwise sum of envelopes.
    pub fn sum(parts: &[Envelope]) -> Envelope {
        let mut cuts: Vec<f64> = parts.iter().flat_map(|e| e.starts.iter().copied()).collect();
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|x, y| (*x - *y).abs() <= MIN_WIDTH);
        let mut lines = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let mut acc = ValueLine { r: 0.0, s: 0.0 };
            for e in parts {
                let l = e.lines[e.index(mid)];
                acc.r += l.r;
                acc.s += l.s;
            }
            lines.push(acc);
        }
        if lines.is_empty() {
            let mut acc = ValueLine { r: 0.0, s: 0.0 };
            for e in parts {
                acc.r += e.lines[0].r;
                acc.s += e.lines[0].s;
            }
            lines.push(acc);
        }
        Envelope::from_lines(lines)
    }

    /// Envelope of `f(line)` for every line; `f` must be linear in `(r, s)`.
    pub fn map(&self, f: impl Fn(ValueLine) -> ValueLine) -> Envelope {
        Envelope::from_lines(self.lines.iter().map(|&l| f(l)).collect())
    }

    /// `sup_t |self(t) − other(t)|`, exact for piecewise-linear functions.
    pub fn distance(&self, other: &Envelope) -> f64 {
        self.starts
            .iter()
            .chain(&other.starts)
            .copied()
            .chain(std::iter::once(1.0))
            .map(|t| (self.at(t) - other.at(t)).abs())
            .fold(0.0, f64::max)
    }
}

fn prune(lines: &mut Vec<ValueLine>, starts: &mut Vec<f64>) {
    let mut i = 0;
    while lines.len() > 1 && i < lines.len() {
        let end = starts.get(i + 1).copied().unwrap_or(1.0);
        let near_prev = i > 0
            && (lines[i].r - lines[i - 1].r).abs() <= SAME_LINE
            && (lines[i].s - lines[i - 1].s).abs() <= SAME_LINE;
        if end - starts[i] < MIN_WIDTH || near_prev {
            lines.remove(i);
            let s = starts.remove(i);
            if i == 0 {
                starts[0] = 0.0;
            } else if i < starts.len() {
                // Neighbours meet where they cross.
                let (l, r) = (lines[i - 1], lines[i]);
                let x = (l.r - r.r) / (r.slope() - l.slope());
                starts[i] = if x.is_finite() { x.clamp(starts[i - 1], 1.0) } else { s };
            }
        } else {
            i += 1;
        }
    }
}
