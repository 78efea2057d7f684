use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::{ChannelImage, ProbMapSet};

/// Returns the map stored at `<dir>/<stem>.pmap`, unmodified.
pub(super) fn replay(
    dir: &Path,
    stem: &str,
    image: &ChannelImage,
    classes: usize,
) -> Result<ProbMapSet> {
    let path = dir.join(format!("{stem}.pmap"));
    let map = ProbMapSet::read(&path)?;
    if map.width() != image.width() || map.height() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}x{}, image is {}x{}",
            path.display(),
            map.width(),
            map.height(),
            image.width(),
            image.height()
        )));
    }
    if map.classes() != classes {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} classes, model expects {classes}",
            path.display(),
            map.classes()
        )));
    }
    Ok(map)
}
