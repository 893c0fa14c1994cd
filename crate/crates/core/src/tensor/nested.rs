use crate::error::{Error, Result};

/// Nested numeric lists, the host-side input to [`Tensor::from_nested`](super::Tensor::from_nested).
#[derive(Debug, Clone, PartialEq)]
pub enum Nested {
    Value(f64),
    List(Vec<Nested>),
}

impl Nested {
    /// Infers the shape from the first element at each depth, then checks that
    /// every sibling agrees with it.
    pub(crate) fn flatten(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut shape = Vec::new();
        let mut probe = self;
        while let Nested::List(items) = probe {
            shape.push(items.len());
            match items.first() {
                Some(first) => probe = first,
                None => break,
            }
        }
        let mut values = Vec::with_capacity(shape.iter().product());
        self.collect(&shape, 0, &mut values)?;
        Ok((shape, values))
    }

    fn collect(&self, shape: &[usize], depth: usize, out: &mut Vec<f64>) -> Result<()> {
        match (self, shape.get(depth)) {
            (Nested::Value(v), None) => {
                out.push(*v);
                Ok(())
            }
            (Nested::List(items), Some(&expected)) => {
                if items.len() != expected {
                    return Err(Error::RaggedInput {
                        expected,
                        found: items.len(),
                    });
                }
                items
                    .iter()
                    .try_for_each(|item| item.collect(shape, depth + 1, out))
            }
            // A scalar where a list was expected, or vice versa.
            (Nested::Value(_), Some(&expected)) => Err(Error::RaggedInput { expected, found: 0 }),
            (Nested::List(items), None) => Err(Error::RaggedInput {
                expected: 0,
                found: items.len(),
            }),
        }
    }
}

macro_rules! nested_scalar {
    ($($t:ty),*) => {
        $(impl From<$t> for Nested {
            fn from(v: $t) -> Self {
                Nested::Value(v as f64)
            }
        })*
    };
}

nested_scalar!(f64, f32, i32, i64, u8, u32, usize);

impl<T: Into<Nested>> From<Vec<T>> for Nested {
    fn from(v: Vec<T>) -> Self {
        Nested::List(v.into_iter().map(Into::into).collect())
    }
}
