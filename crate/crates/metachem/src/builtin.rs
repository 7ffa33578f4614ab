//! Graph files shipped with the crate, each paired with the builder it
//! must equal.

use metachem_core::graph::GraphDef;
use metachem_core::nested::{build_variant, Variant};
use metachem_core::{ja, stringcat, swarm};

use crate::graph_file::{parse_graph, ParseError};

pub struct Shipped {
    pub name: &'static str,
    pub file: &'static str,
    pub text: &'static str,
    pub build: fn() -> GraphDef,
}

impl Shipped {
    /// The parsed file. Shipped files are checked by the tests, so this
    /// only fails on a broken build.
    pub fn graph(&self) -> GraphDef {
        self.parse().expect("shipped graph parses")
    }

    pub fn parse(&self) -> Result<GraphDef, ParseError> {
        parse_graph(self.text)
    }
}

macro_rules! shipped {
    ($name:literal, $build:expr) => {
        Shipped {
            name: $name,
            file: concat!("graphs/", $name, ".graph"),
            text: include_str!(concat!("../graphs/", $name, ".graph")),
            build: $build,
        }
    };
}

pub static SHIPPED: [Shipped; 8] = [
    shipped!("stringcat_macro", || stringcat::build_macro(true)),
    shipped!("stringcat_macro_terminating", || stringcat::build_macro(false)),
    shipped!("stringcat_process", stringcat::build_micro_process),
    shipped!("ja_link", ja::system::build_link_micro),
    shipped!("ja_macro", || ja::system::build_macro(false)),
    shipped!("swarm_macro", swarm::system::build_macro),
    shipped!("swarm_flock", swarm::system::build_flock_micro),
    shipped!("nested_macro", || build_variant(Variant::I)),
];

pub fn by_name(name: &str) -> Option<&'static Shipped> {
    SHIPPED.iter().find(|s| s.name == name)
}

pub fn names() -> Vec<&'static str> {
    SHIPPED.iter().map(|s| s.name).collect()
}
