//! Text assets bundled into the library. Each has an on-disk counterpart in
//! `crates/core/assets/` that users can copy and extend.

pub const ATTRIBUTE_CLUSTERS: &str = include_str!("../assets/attribute_clusters.txt");
pub const BODY_PART_CLASSES: &str = include_str!("../assets/body_parts.txt");
pub const BACKGROUND_CLASSES: &str = include_str!("../assets/background_classes.txt");
pub const PLURAL_EXCEPTIONS: &str = include_str!("../assets/plural_exceptions.txt");
