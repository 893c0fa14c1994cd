//! Tracked host backend.
//!
//! Every buffer allocated through a [`Backend`] stays live until it is
//! explicitly released, either with [`Backend::release`] or by leaving the
//! [`Backend::tidy`] scope it was allocated in. Dropping the last Rust handle
//! frees the host memory but does not change the live count, which mirrors a
//! device allocator that cannot be garbage collected.

use std::cell::RefCell;
use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, Weak};

use parking_lot::RwLock;

use crate::dtype::{DType, Storage};
use crate::error::{Error, Result};

pub type BufferId = u64;

static NEXT_BACKEND: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static CURRENT: RefCell<Option<Backend>> = const { RefCell::new(None) };
}

#[derive(Clone)]
pub struct Backend {
    shared: Arc<Shared>,
}

struct Shared {
    id: u64,
    state: Mutex<State>,
}

#[derive(Default)]
struct State {
    next_buffer: BufferId,
    next_scope: u64,
    live: HashSet<BufferId>,
    scopes: Vec<Scope>,
}

struct Scope {
    id: u64,
    allocated: Vec<(BufferId, Weak<Buffer>)>,
}

/// A flat storage allocation owned by a backend.
pub struct Buffer {
    id: BufferId,
    len: usize,
    dtype: DType,
    backend: Backend,
    storage: RwLock<Option<Storage>>,
}

impl std::fmt::Debug for Buffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Buffer")
            .field("id", &self.id)
            .field("len", &self.len)
            .field("dtype", &self.dtype)
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl Buffer {
    pub fn id(&self) -> BufferId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn is_released(&self) -> bool {
        self.storage.read_recursive().is_none()
    }

    pub fn with_storage<R>(&self, f: impl FnOnce(&Storage) -> R) -> Result<R> {
        let guard = self.storage.read_recursive();
        match guard.as_ref() {
            Some(s) => Ok(f(s)),
            None => Err(Error::UseAfterRelease(self.id)),
        }
    }

    pub fn with_storage_mut<R>(&self, f: impl FnOnce(&mut Storage) -> R) -> Result<R> {
        let mut guard = self.storage.write();
        match guard.as_mut() {
            Some(s) => Ok(f(s)),
            None => Err(Error::UseAfterRelease(self.id)),
        }
    }

    fn free(&self) {
        *self.storage.write() = None;
    }
}

impl Default for Backend {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Backend({})", self.id())
    }
}

impl PartialEq for Backend {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }
}

impl Eq for Backend {}

impl Backend {
    pub fn new() -> Self {
        Backend {
            shared: Arc::new(Shared {
                id: NEXT_BACKEND.fetch_add(1, Ordering::Relaxed),
                state: Mutex::new(State::default()),
            }),
        }
    }

    /// The backend used by creation functions on this thread.
    pub fn current() -> Backend {
        CURRENT.with(|c| c.borrow_mut().get_or_insert_with(Backend::new).clone())
    }

    /// Installs `self` as this thread's current backend, returning the previous one.
    pub fn make_current(&self) -> Option<Backend> {
        CURRENT.with(|c| c.borrow_mut().replace(self.clone()))
    }

    pub fn id(&self) -> u64 {
        self.shared.id
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Number of buffers allocated and not yet released.
    pub fn live_buffers(&self) -> usize {
        self.state().live.len()
    }

    pub fn is_live(&self, id: BufferId) -> bool {
        self.state().live.contains(&id)
    }

    pub fn scope_depth(&self) -> usize {
        self.state().scopes.len()
    }

    pub fn alloc(&self, storage: Storage) -> Arc<Buffer> {
        let mut state = self.state();
        let id = state.next_buffer;
        state.next_buffer += 1;
        let buffer = Arc::new(Buffer {
            id,
            len: storage.len(),
            dtype: storage.dtype(),
            backend: self.clone(),
            storage: RwLock::new(Some(storage)),
        });
        state.live.insert(id);
        if let Some(scope) = state.scopes.last_mut() {
            scope.allocated.push((id, Arc::downgrade(&buffer)));
        }
        buffer
    }

    /// Releases a single buffer immediately. Releasing twice is a no-op.
    pub fn release(&self, buffer: &Buffer) {
        if self.state().live.remove(&buffer.id) {
            buffer.free();
        }
    }

    /// Runs `body` in a fresh scope. On exit every buffer allocated inside the
    /// scope is released unless it is reachable from the returned value; those
    /// are handed to the enclosing scope.
    pub fn tidy<R: Retain>(&self, body: impl FnOnce() -> R) -> R {
        let guard = ScopeGuard::enter(self);
        let out = body();
        let mut keep = Vec::new();
        out.collect_buffers(&mut keep);
        guard.exit(keep.into_iter().collect());
        out
    }

    fn push_scope(&self) -> u64 {
        let mut state = self.state();
        let id = state.next_scope;
        state.next_scope += 1;
        state.scopes.push(Scope {
            id,
            allocated: Vec::new(),
        });
        id
    }

    fn pop_scope(&self, scope_id: u64, keep: &HashSet<BufferId>) {
        let doomed = {
            let mut state = self.state();
            let pos = state
                .scopes
                .iter()
                .rposition(|s| s.id == scope_id)
                .expect("tidy scope popped twice");
            // Scopes nest lexically, so anything above `pos` belongs to an
            // unwinding inner scope and is folded into this one.
            let mut allocated = Vec::new();
            for scope in state.scopes.drain(pos..) {
                allocated.extend(scope.allocated);
            }
            let mut doomed = Vec::new();
            let mut kept = Vec::new();
            for (id, weak) in allocated {
                if keep.contains(&id) {
                    kept.push((id, weak));
                } else if state.live.remove(&id) {
                    doomed.push(weak);
                }
            }
            if let Some(parent) = state.scopes.last_mut() {
                parent.allocated.extend(kept);
            }
            doomed
        };
        for weak in doomed {
            if let Some(buffer) = weak.upgrade() {
                buffer.free();
            }
        }
    }
}

struct ScopeGuard<'a> {
    backend: &'a Backend,
    id: u64,
    done: bool,
}

impl<'a> ScopeGuard<'a> {
    fn enter(backend: &'a Backend) -> Self {
        ScopeGuard {
            id: backend.push_scope(),
            backend,
            done: false,
        }
    }

    fn exit(mut self, keep: HashSet<BufferId>) {
        self.done = true;
        self.backend.pop_scope(self.id, &keep);
    }
}

impl Drop for ScopeGuard<'_> {
    fn drop(&mut self) {
        if !self.done {
            self.backend.pop_scope(self.id, &HashSet::new());
        }
    }
}

/// Runs `body` in a tidy scope on this thread's current backend.
pub fn tidy<R: Retain>(body: impl FnOnce() -> R) -> R {
    Backend::current().tidy(body)
}

/// Values that can be returned from a tidy scope. Implementations report the
/// buffers that must survive the scope.
pub trait Retain {
    fn collect_buffers(&self, out: &mut Vec<BufferId>);
}

macro_rules! retain_nothing {
    ($($t:ty),*) => {
        $(impl Retain for $t {
            fn collect_buffers(&self, _out: &mut Vec<BufferId>) {}
        })*
    };
}

retain_nothing!((), bool, u8, u32, u64, usize, i32, i64, f32, f64, String, &str);

impl<T: Retain + ?Sized> Retain for &T {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        (**self).collect_buffers(out)
    }
}

impl<T: Retain + ?Sized> Retain for &mut T {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        (**self).collect_buffers(out)
    }
}

impl<T: Retain + ?Sized> Retain for Box<T> {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        (**self).collect_buffers(out)
    }
}

impl<T: Retain> Retain for [T] {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        for item in self {
            item.collect_buffers(out);
        }
    }
}

impl<T: Retain> Retain for Vec<T> {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        self.as_slice().collect_buffers(out)
    }
}

impl<T: Retain> Retain for Option<T> {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        if let Some(v) = self {
            v.collect_buffers(out);
        }
    }
}

impl<T: Retain, E> Retain for std::result::Result<T, E> {
    fn collect_buffers(&self, out: &mut Vec<BufferId>) {
        if let Ok(v) = self {
            v.collect_buffers(out);
        }
    }
}

macro_rules! retain_tuple {
    ($($name:ident),+) => {
        impl<$($name: Retain),+> Retain for ($($name,)+) {
            #[allow(non_snake_case)]
            fn collect_buffers(&self, out: &mut Vec<BufferId>) {
                let ($($name,)+) = self;
                $($name.collect_buffers(out);)+
            }
        }
    };
}

retain_tuple!(A);
retain_tuple!(A, B);
retain_tuple!(A, B, C);
retain_tuple!(A, B, C, D);

#[cfg(test)]
mod tests {
    use super::*;

    fn alloc(b: &Backend) -> Arc<Buffer> {
        b.alloc(Storage::F32(vec![1.0; 4]))
    }

    struct Keep(Vec<Arc<Buffer>>);

    impl Retain for Keep {
        fn collect_buffers(&self, out: &mut Vec<BufferId>) {
            out.extend(self.0.iter().map(|b| b.id()));
        }
    }

    #[test]
    fn five_allocated_one_returned() {
        let b = Backend::new();
        let before = b.live_buffers();
        let kept = b.tidy(|| {
            let bufs: Vec<_> = (0..5).map(|_| alloc(&b)).collect();
            Keep(vec![bufs[2].clone()])
        });
        assert_eq!(b.live_buffers(), before + 1);
        assert!(!kept.0[0].is_released());
    }

    #[test]
    fn released_buffer_errors_on_access() {
        let b = Backend::new();
        let leaked = b.tidy(|| Leak(alloc(&b))).0;
        assert!(leaked.is_released());
        assert!(matches!(
            leaked.with_storage(|_| ()),
            Err(Error::UseAfterRelease(_))
        ));
    }

    /// Smuggles a handle out of a scope without retaining it.
    struct Leak(Arc<Buffer>);

    impl Retain for Leak {
        fn collect_buffers(&self, _out: &mut Vec<BufferId>) {}
    }

    #[test]
    fn nested_retention_into_releasing_outer() {
        let b = Backend::new();
        let before = b.live_buffers();
        b.tidy(|| {
            let inner = b.tidy(|| {
                let _scratch = alloc(&b);
                Keep(vec![alloc(&b), alloc(&b)])
            });
            assert_eq!(b.live_buffers(), before + 2);
            drop(inner);
        });
        assert_eq!(b.live_buffers(), before);
    }

    #[test]
    fn explicit_release_is_counted_once() {
        let b = Backend::new();
        let buf = alloc(&b);
        assert_eq!(b.live_buffers(), 1);
        b.release(&buf);
        b.release(&buf);
        assert_eq!(b.live_buffers(), 0);
        b.tidy(|| {
            let x = alloc(&b);
            b.release(&x);
        });
        assert_eq!(b.live_buffers(), 0);
    }

    #[test]
    fn panic_inside_tidy_still_pops_scope() {
        let b = Backend::new();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            b.tidy(|| -> () {
                alloc(&b);
                panic!("boom");
            })
        }));
        assert!(r.is_err());
        assert_eq!(b.scope_depth(), 0);
        assert_eq!(b.live_buffers(), 0);
    }

    #[test]
    fn current_backend_is_per_thread() {
        let here = Backend::current();
        assert_eq!(here, Backend::current());
        let there = std::thread::spawn(|| Backend::current().id()).join().unwrap();
        assert_ne!(here.id(), there);
    }
}
