//! Deferred results.
//!
//! Forward passes, `backward` and optimizer steps hand back a [`Deferred`]
//! instead of a bare value. Callers must `join` (or `.await`) it before using
//! the result. The native backend completes the work eagerly, but callers may
//! not rely on that.

use std::future::Future;
use std::pin::Pin;
use std::task::{Context, Poll};

use crate::error::Result;

#[must_use = "a deferred result must be joined or awaited"]
#[derive(Debug)]
pub struct Deferred<T> {
    value: Option<Result<T>>,
}

impl<T> Deferred<T> {
    pub(crate) fn ready(value: Result<T>) -> Self {
        Deferred { value: Some(value) }
    }

    /// Blocks until the value is available.
    pub fn join(mut self) -> Result<T> {
        self.value.take().expect("deferred value taken twice")
    }
}

impl<T> Unpin for Deferred<T> {}

impl<T> Future for Deferred<T> {
    type Output = Result<T>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Result<T>> {
        Poll::Ready(self.value.take().expect("deferred polled after completion"))
    }
}
