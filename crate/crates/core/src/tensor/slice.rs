use crate::error::{Error, Result};

/// One axis selector. Negative positions count from the end of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Range {
        start: Option<isize>,
        stop: Option<isize>,
        step: isize,
    },
    Index(isize),
    NewAxis,
    Ellipsis,
}

impl Selector {
    pub fn full() -> Self {
        Selector::Range {
            start: None,
            stop: None,
            step: 1,
        }
    }

    pub fn range(start: isize, stop: isize) -> Self {
        Selector::Range {
            start: Some(start),
            stop: Some(stop),
            step: 1,
        }
    }

    pub fn rev() -> Self {
        Selector::Range {
            start: None,
            stop: None,
            step: -1,
        }
    }

    fn consumes_axis(&self) -> bool {
        matches!(self, Selector::Range { .. } | Selector::Index(_))
    }
}

impl From<std::ops::Range<isize>> for Selector {
    fn from(r: std::ops::Range<isize>) -> Self {
        Selector::range(r.start, r.end)
    }
}

impl From<isize> for Selector {
    fn from(i: isize) -> Self {
        Selector::Index(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SliceSpec {
    selectors: Vec<Selector>,
}

impl SliceSpec {
    pub fn new(selectors: Vec<Selector>) -> Self {
        SliceSpec { selectors }
    }

    pub fn selectors(&self) -> &[Selector] {
        &self.selectors
    }

    /// Resolves the spec against a layout, returning the view's
    /// `(shape, strides, offset)`.
    pub(crate) fn apply(
        &self,
        shape: &[usize],
        strides: &[isize],
        offset: usize,
    ) -> Result<(Vec<usize>, Vec<isize>, usize)> {
        let rank = shape.len();
        let ellipses = self
            .selectors
            .iter()
            .filter(|s| matches!(s, Selector::Ellipsis))
            .count();
        if ellipses > 1 {
            return Err(Error::MultipleEllipsis);
        }
        let consumed = self.selectors.iter().filter(|s| s.consumes_axis()).count();
        if consumed > rank {
            return Err(Error::TooManyIndices {
                given: consumed,
                rank,
            });
        }

        let mut expanded = Vec::with_capacity(rank + self.selectors.len());
        for sel in &self.selectors {
            if let Selector::Ellipsis = sel {
                expanded.extend(std::iter::repeat_n(Selector::full(), rank - consumed));
            } else {
                expanded.push(*sel);
            }
        }
        if ellipses == 0 {
            expanded.extend(std::iter::repeat_n(Selector::full(), rank - consumed));
        }

        let mut out_shape = Vec::new();
        let mut out_strides = Vec::new();
        let mut out_offset = offset as isize;
        let mut axis = 0;
        for sel in expanded {
            match sel {
                Selector::NewAxis => {
                    out_shape.push(1);
                    out_strides.push(0);
                }
                Selector::Ellipsis => unreachable!("expanded above"),
                Selector::Index(i) => {
                    let extent = shape[axis];
                    let pos = if i < 0 { i + extent as isize } else { i };
                    if pos < 0 || pos >= extent as isize {
                        return Err(Error::IndexOutOfBounds {
                            index: i,
                            axis,
                            extent,
                        });
                    }
                    out_offset += pos * strides[axis];
                    axis += 1;
                }
                Selector::Range { start, stop, step } => {
                    let (first, count) = resolve_range(start, stop, step, shape[axis])?;
                    if count > 0 {
                        out_offset += first * strides[axis];
                    }
                    out_shape.push(count);
                    out_strides.push(strides[axis] * step);
                    axis += 1;
                }
            }
        }
        debug_assert!(out_offset >= 0);
        Ok((out_shape, out_strides, out_offset as usize))
    }
}

impl From<Vec<Selector>> for SliceSpec {
    fn from(selectors: Vec<Selector>) -> Self {
        SliceSpec::new(selectors)
    }
}

/// Clamps a range to an axis of length `len`, returning the first position
/// and element count.
fn resolve_range(
    start: Option<isize>,
    stop: Option<isize>,
    step: isize,
    len: usize,
) -> Result<(isize, usize)> {
    if step == 0 {
        return Err(Error::ZeroStep);
    }
    let len = len as isize;
    let (lower, upper) = if step > 0 { (0, len) } else { (-1, len - 1) };
    let clamp = |v: isize| {
        if v < 0 {
            (v + len).max(lower)
        } else {
            v.min(upper)
        }
    };
    let first = start.map_or(if step > 0 { lower } else { upper }, clamp);
    let last = stop.map_or(if step > 0 { upper } else { lower }, clamp);
    let count = if step > 0 && last > first {
        (last - first + step - 1) / step
    } else if step < 0 && first > last {
        (first - last - step - 1) / -step
    } else {
        0
    };
    Ok((first, count as usize))
}
