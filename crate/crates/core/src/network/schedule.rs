//! Named static growth schedules, expressed per base width.

use super::spec::Template;
use crate::error::{Error, Result};

pub const SCHEDULES: [&str; 4] = [
    "cifar-resnet-schedule",
    "imagenet-resnet-schedule",
    "tiny-vgg-schedule",
    "desk-schedule",
];

fn by_base_width(name: &str, base: usize) -> Option<usize> {
    match name {
        "cifar-resnet-schedule" => match base {
            64 => Some(1),
            128 => Some(5),
            256 | 512 => Some(10),
            _ => None,
        },
        "imagenet-resnet-schedule" => match base {
            64 => Some(2),
            128 | 256 | 512 => Some(10),
            _ => None,
        },
        "tiny-vgg-schedule" => match base {
            64 | 128 => Some(1),
            256 | 512 => Some(8),
            _ => None,
        },
        "desk-schedule" => Some((base / 4).max(1)),
        _ => None,
    }
}

/// Filters added per width unit of `template` for every task after the first.
pub fn schedule_growth(name: &str, template: &Template) -> Result<Vec<usize>> {
    if !SCHEDULES.contains(&name) {
        return Err(Error::Config(format!("unknown growth schedule {name:?}")));
    }
    template
        .base_widths()
        .into_iter()
        .map(|b| {
            by_base_width(name, b).ok_or_else(|| {
                Error::Config(format!(
                    "schedule {name:?} has no entry for {b}-filter layers of {}",
                    template.name
                ))
            })
        })
        .collect()
}
