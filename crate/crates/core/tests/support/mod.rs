#![allow(dead_code)]

pub mod grad;
pub mod reference;
pub mod oracle;
