//! Size lists such as `1,2,4,8,16` or `4,8,...,512`.

use std::str::FromStr;

/// Comma-separated sizes. A `...` element continues the progression set by
/// the two values before it up to the value after it: geometric when the
/// second is a multiple of the first, arithmetic otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sizes(pub Vec<usize>);

impl FromStr for Sizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let mut out: Vec<usize> = Vec::new();
        let mut i = 0;
        while i < parts.len() {
            if parts[i] != "..." {
                out.push(parts[i].parse().map_err(|e| format!("{:?}: {e}", parts[i]))?);
                i += 1;
                continue;
            }
            let (&[.., a, b], Some(last)) = (out.as_slice(), parts.get(i + 1)) else {
                return Err("\"...\" needs two values before it and one after".into());
            };
            let last: usize = last.parse().map_err(|e| format!("{last:?}: {e}"))?;
            if b <= a || last < b {
                return Err(format!("{a},{b},...,{last} is not ascending"));
            }
            let next = |v: usize| if b % a == 0 { v * (b / a) } else { v + (b - a) };
            let mut v = next(b);
            while v < last {
                out.push(v);
                v = next(v);
            }
            if v != last {
                return Err(format!("{last} is not on the progression {a},{b},..."));
            }
            i += 1;
        }
        if out.is_empty() {
            return Err("empty size list".into());
        }
        Ok(Sizes(out))
    }
}
