//! Periodic table subset with the valence rules used by the feasibility check.

use std::fmt;

/// Atomic number. `0` is the SMILES wildcard `*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Element(pub u8);

/// `(symbol, allowed valences)`. A trailing `-1` means any valence above the
/// listed ones is also accepted; a lone `-1` means unrestricted.
const TABLE: &[(&str, &[i32])] = &[
    ("*", &[-1]),
    ("H", &[1]),
    ("He", &[0]),
    ("Li", &[1, -1]),
    ("Be", &[2]),
    ("B", &[3]),
    ("C", &[4]),
    ("N", &[3]),
    ("O", &[2]),
    ("F", &[1]),
    ("Ne", &[0]),
    ("Na", &[1, -1]),
    ("Mg", &[2, -1]),
    ("Al", &[3]),
    ("Si", &[4]),
    ("P", &[3, 5]),
    ("S", &[2, 4, 6]),
    ("Cl", &[1]),
    ("Ar", &[0]),
    ("K", &[1, -1]),
    ("Ca", &[2, -1]),
    ("Sc", &[-1]),
    ("Ti", &[-1]),
    ("V", &[-1]),
    ("Cr", &[-1]),
    ("Mn", &[-1]),
    ("Fe", &[-1]),
    ("Co", &[-1]),
    ("Ni", &[-1]),
    ("Cu", &[-1]),
    ("Zn", &[-1]),
    ("Ga", &[3]),
    ("Ge", &[4]),
    ("As", &[3, 5]),
    ("Se", &[2, 4, 6]),
    ("Br", &[1]),
    ("Kr", &[0]),
    ("Rb", &[1, -1]),
    ("Sr", &[2, -1]),
    ("Y", &[-1]),
    ("Zr", &[-1]),
    ("Nb", &[-1]),
    ("Mo", &[-1]),
    ("Tc", &[-1]),
    ("Ru", &[-1]),
    ("Rh", &[-1]),
    ("Pd", &[-1]),
    ("Ag", &[-1]),
    ("Cd", &[-1]),
    ("In", &[3]),
    ("Sn", &[2, 4]),
    ("Sb", &[3, 5]),
    ("Te", &[2, 4, 6]),
    ("I", &[1, 3, 5]),
    ("Xe", &[0, 2, 4, 6]),
    ("Cs", &[1]),
    ("Ba", &[2, -1]),
    ("La", &[-1]),
    ("Ce", &[-1]),
    ("Pr", &[-1]),
    ("Nd", &[-1]),
    ("Pm", &[-1]),
    ("Sm", &[-1]),
    ("Eu", &[-1]),
    ("Gd", &[-1]),
    ("Tb", &[-1]),
    ("Dy", &[-1]),
    ("Ho", &[-1]),
    ("Er", &[-1]),
    ("Tm", &[-1]),
    ("Yb", &[-1]),
    ("Lu", &[-1]),
    ("Hf", &[-1]),
    ("Ta", &[-1]),
    ("W", &[-1]),
    ("Re", &[-1]),
    ("Os", &[-1]),
    ("Ir", &[-1]),
    ("Pt", &[-1]),
    ("Au", &[-1]),
    ("Hg", &[-1]),
    ("Tl", &[-1]),
    ("Pb", &[2, 4]),
    ("Bi", &[3, 5]),
    ("Po", &[2, 4, 6]),
    ("At", &[1, 3, 5]),
    ("Rn", &[0]),
    ("Fr", &[1, -1]),
    ("Ra", &[2, -1]),
    ("Ac", &[-1]),
    ("Th", &[-1]),
    ("Pa", &[-1]),
    ("U", &[-1]),
];

/// Maximum explicit valence an atom may carry; `None` means unrestricted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValenceLimit {
    Max(i32),
    Unrestricted,
}

impl Element {
    pub const WILDCARD: Element = Element(0);
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        TABLE
            .iter()
            .position(|(s, _)| *s == symbol)
            .map(|z| Element(z as u8))
    }

    pub fn symbol(self) -> &'static str {
        TABLE.get(self.0 as usize).map(|(s, _)| *s).unwrap_or("*")
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    fn valences(z: i32) -> Option<&'static [i32]> {
        if z < 0 {
            return None;
        }
        TABLE.get(z as usize).map(|(_, v)| *v)
    }

    /// Allowed valences for a charged atom: the list of the isoelectronic
    /// element (`Z - charge`). Anions of the group 15/16 elements below the
    /// second period additionally keep their own list shifted by the charge,
    /// so `[S-]` may still be pentavalent.
    fn charged_valences(self, charge: i8) -> Vec<i32> {
        if self == Element::WILDCARD {
            return vec![-1];
        }
        let own = Element::valences(self.0 as i32).unwrap_or(&[-1]);
        if own.contains(&-1) || charge == 0 {
            return own.to_vec();
        }
        let mut list = Element::valences(self.0 as i32 - charge as i32)
            .unwrap_or(&[-1])
            .to_vec();
        if charge < 0 && matches!(self.0, 15 | 16 | 33 | 34 | 51 | 52) && !list.contains(&-1) {
            list.extend(own.iter().map(|v| v + charge as i32).filter(|v| *v >= 0));
        }
        list
    }

    pub fn valence_limit(self, charge: i8) -> ValenceLimit {
        let list = self.charged_valences(charge);
        if list.contains(&-1) {
            ValenceLimit::Unrestricted
        } else {
            ValenceLimit::Max(list.iter().copied().max().unwrap_or(0))
        }
    }

    /// Smallest allowed valence that is at least `used`; `None` when the atom
    /// has no listed valence that large or is unrestricted.
    pub fn target_valence(self, charge: i8, used: i32) -> Option<i32> {
        let list = self.charged_valences(charge);
        list.iter().copied().filter(|&v| v >= 0 && v >= used).min()
    }

    /// SMILES organic subset (may be written without brackets).
    pub fn is_organic_subset(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements that may be written in lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16 | 33 | 34 | 52)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 0..TABLE.len() as u8 {
            let e = Element(z);
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("Cl"), Some(Element::CL));
        assert_eq!(Element::from_symbol("Xx"), None);
    }

    #[test]
    fn isoelectronic_limits() {
        assert_eq!(Element::C.valence_limit(0), ValenceLimit::Max(4));
        assert_eq!(Element::N.valence_limit(1), ValenceLimit::Max(4));
        assert_eq!(Element::N.valence_limit(-1), ValenceLimit::Max(2));
        assert_eq!(Element::O.valence_limit(1), ValenceLimit::Max(3));
        assert_eq!(Element::O.valence_limit(-1), ValenceLimit::Max(1));
        assert_eq!(Element::C.valence_limit(1), ValenceLimit::Max(3));
        assert_eq!(Element::B.valence_limit(-1), ValenceLimit::Max(4));
        assert_eq!(Element::CL.valence_limit(1), ValenceLimit::Max(6));
        assert_eq!(Element(11).valence_limit(1), ValenceLimit::Unrestricted);
        assert_eq!(Element(29).valence_limit(0), ValenceLimit::Unrestricted);
        assert_eq!(Element::S.valence_limit(-1), ValenceLimit::Max(5));
        assert_eq!(Element::S.valence_limit(-2), ValenceLimit::Max(4));
        assert_eq!(Element::P.valence_limit(-1), ValenceLimit::Max(6));
        assert_eq!(Element::P.valence_limit(-2), ValenceLimit::Max(3));
        assert_eq!(Element::I.valence_limit(-2), ValenceLimit::Max(1));
    }

    #[test]
    fn target_valence_picks_next_level() {
        assert_eq!(Element::S.target_valence(0, 3), Some(4));
        assert_eq!(Element::S.target_valence(0, 2), Some(2));
        assert_eq!(Element::N.target_valence(0, 4), None);
        assert_eq!(Element::N.target_valence(1, 3), Some(4));
    }
}
