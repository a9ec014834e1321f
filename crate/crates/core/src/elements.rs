//! The fixed set of alloying elements a composition may reference.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of supported elements.
pub const N_ELEMENTS: usize = 32;

/// Element symbols in canonical feature-column order.
pub const SYMBOLS: [&str; N_ELEMENTS] = [
    "Al", "Mg", "Si", "Zn", "Li", "Ti", "Ni", "Cu", "As", "Au", "B", "C", "Ca", "Cd", "Co", "Ga",
    "Hf", "In", "Mo", "Nb", "O", "Pb", "P", "S", "Sn", "Th", "V", "W", "Zr", "Fe", "Mn", "Cr",
];

/// Standard atomic weights (CIAAW 2021 conventional / abridged values), g/mol,
/// indexed like [`SYMBOLS`].
pub const ATOMIC_MASSES: [f64; N_ELEMENTS] = [
    26.981_538_4, // Al
    24.305,       // Mg
    28.085,       // Si
    65.38,        // Zn
    6.94,         // Li
    47.867,       // Ti
    58.693_4,     // Ni
    63.546,       // Cu
    74.921_595,   // As
    196.966_570,  // Au
    10.81,        // B
    12.011,       // C
    40.078,       // Ca
    112.414,      // Cd
    58.933_194,   // Co
    69.723,       // Ga
    178.486,      // Hf
    114.818,      // In
    95.95,        // Mo
    92.906_37,    // Nb
    15.999,       // O
    207.2,        // Pb
    30.973_762,   // P
    32.06,        // S
    118.710,      // Sn
    232.037_7,    // Th
    50.941_5,     // V
    183.84,       // W
    91.224,       // Zr
    55.845,       // Fe
    54.938_043,   // Mn
    51.996_1,     // Cr
];

/// A supported element, stored as its index into [`SYMBOLS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Element(u8);

impl Element {
    pub const AL: Element = Element(0);
    pub const MG: Element = Element(1);
    pub const SI: Element = Element(2);
    pub const ZN: Element = Element(3);
    pub const TI: Element = Element(5);
    pub const NI: Element = Element(6);
    pub const CU: Element = Element(7);
    pub const FE: Element = Element(29);
    pub const MN: Element = Element(30);
    pub const CR: Element = Element(31);

    pub fn from_index(index: usize) -> Option<Element> {
        (index < N_ELEMENTS).then_some(Element(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.index()]
    }

    pub fn atomic_mass(self) -> f64 {
        ATOMIC_MASSES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = Element> {
        (0..N_ELEMENTS).map(|i| Element(i as u8))
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown element symbol `{0}`")]
pub struct UnknownElement(pub String);

impl FromStr for Element {
    type Err = UnknownElement;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SYMBOLS
            .iter()
            .position(|sym| *sym == s)
            .map(|i| Element(i as u8))
            .ok_or_else(|| UnknownElement(s.to_string()))
    }
}

impl TryFrom<String> for Element {
    type Error = UnknownElement;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Element> for String {
    fn from(e: Element) -> String {
        e.symbol().to_string()
    }
}
