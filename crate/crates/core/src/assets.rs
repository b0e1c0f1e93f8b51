//! Definitions bundled into the library: skeletons, mappings and run configs.

pub const SKELETONS: [&str; 4] = ["human", "planar_biped", "pendulum3", "mini_humanoid"];
pub const MAPPINGS: [&str; 3] = ["planar_biped", "pendulum3", "mini_humanoid"];
pub const CONFIGS: [&str; 3] = ["stand", "walk", "pendulum"];

pub fn skeleton_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "human" => include_str!("../assets/skeletons/human.toml"),
        "planar_biped" => include_str!("../assets/skeletons/planar_biped.toml"),
        "pendulum3" => include_str!("../assets/skeletons/pendulum3.toml"),
        "mini_humanoid" => include_str!("../assets/skeletons/mini_humanoid.toml"),
        _ => return None,
    })
}

pub fn mapping_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "planar_biped" => include_str!("../assets/mappings/planar_biped.toml"),
        "pendulum3" => include_str!("../assets/mappings/pendulum3.toml"),
        "mini_humanoid" => include_str!("../assets/mappings/mini_humanoid.toml"),
        _ => return None,
    })
}

pub fn config_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "stand" => include_str!("../assets/configs/stand.toml"),
        "walk" => include_str!("../assets/configs/walk.toml"),
        "pendulum" => include_str!("../assets/configs/pendulum.toml"),
        _ => return None,
    })
}
