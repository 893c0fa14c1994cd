use serde::{Deserialize, Serialize};

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    I32,
    U8,
    Bool,
}

impl DType {
    pub const fn size_in_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 | DType::Bool => 1,
        }
    }

    /// Wire code used by the archive format.
    pub const fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
            DType::U8 => 2,
            DType::Bool => 3,
        }
    }

    pub const fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I32),
            2 => Some(DType::U8),
            3 => Some(DType::Bool),
            _ => None,
        }
    }

    /// Checks that `value` is exactly representable, rejecting out-of-range
    /// and fractional values for the integer types.
    pub fn represents(self, value: f64) -> bool {
        match self {
            DType::F32 => !value.is_finite() || value.abs() <= f32::MAX as f64,
            DType::I32 => {
                value.fract() == 0.0 && value >= i32::MIN as f64 && value <= i32::MAX as f64
            }
            DType::U8 => value.fract() == 0.0 && (0.0..=255.0).contains(&value),
            DType::Bool => value == 0.0 || value == 1.0,
        }
    }
}

/// Typed host storage behind a backend buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
    Bool(Vec<bool>),
}

impl Storage {
    pub fn dtype(&self) -> DType {
        match self {
            Storage::F32(_) => DType::F32,
            Storage::I32(_) => DType::I32,
            Storage::U8(_) => DType::U8,
            Storage::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Storage::F32(v) => v.len(),
            Storage::I32(v) => v.len(),
            Storage::U8(v) => v.len(),
            Storage::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> Storage {
        match dtype {
            DType::F32 => Storage::F32(vec![0.0; len]),
            DType::I32 => Storage::I32(vec![0; len]),
            DType::U8 => Storage::U8(vec![0; len]),
            DType::Bool => Storage::Bool(vec![false; len]),
        }
    }

    /// Gathers the elements at `offsets` into fresh storage of the same dtype.
    pub(crate) fn gather(&self, offsets: impl Iterator<Item = usize>) -> Storage {
        match self {
            Storage::F32(v) => Storage::F32(offsets.map(|o| v[o]).collect()),
            Storage::I32(v) => Storage::I32(offsets.map(|o| v[o]).collect()),
            Storage::U8(v) => Storage::U8(offsets.map(|o| v[o]).collect()),
            Storage::Bool(v) => Storage::Bool(offsets.map(|o| v[o]).collect()),
        }
    }
}

/// Rust scalar types that can back a tensor.
pub trait Element: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    const DTYPE: DType;
    fn slice(storage: &Storage) -> Option<&[Self]>;
    fn slice_mut(storage: &mut Storage) -> Option<&mut [Self]>;
    fn into_storage(data: Vec<Self>) -> Storage;
    fn to_f64(self) -> f64;
}

macro_rules! element {
    ($ty:ty, $variant:ident, $to:expr) => {
        impl Element for $ty {
            const DTYPE: DType = DType::$variant;

            fn slice(storage: &Storage) -> Option<&[Self]> {
                match storage {
                    Storage::$variant(v) => Some(v),
                    _ => None,
                }
            }

            fn slice_mut(storage: &mut Storage) -> Option<&mut [Self]> {
                match storage {
                    Storage::$variant(v) => Some(v),
                    _ => None,
                }
            }

            fn into_storage(data: Vec<Self>) -> Storage {
                Storage::$variant(data)
            }

            fn to_f64(self) -> f64 {
                let f: fn($ty) -> f64 = $to;
                f(self)
            }
        }
    };
}

element!(f32, F32, |v| v as f64);
element!(i32, I32, |v| v as f64);
element!(u8, U8, |v| v as f64);
element!(bool, Bool, |v| if v { 1.0 } else { 0.0 });
