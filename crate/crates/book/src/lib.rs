//! The guide in `book/`, compiled so its snippets run as doc tests.

#[doc = include_str!("../../../book/src/chapter1.md")]
pub mod chapter1 {}

#[doc = include_str!("../../../book/src/chapter2.md")]
pub mod chapter2 {}

#[doc = include_str!("../../../book/src/chapter3.md")]
pub mod chapter3 {}

#[doc = include_str!("../../../book/src/chapter4.md")]
pub mod chapter4 {}

#[doc = include_str!("../../../book/src/chapter5.md")]
pub mod chapter5 {}
