use std::collections::BTreeMap;

use crate::chem::element::Element;
use crate::chem::kekulize::{kekulize, KekuleMode};
use crate::chem::molecule::{AtomKind, BondOrder, Molecule};
use crate::chem::sanitize::cleanup;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("empty SMILES")]
    Empty,
    #[error("unexpected character {ch:?} at {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unknown element {symbol:?} at {pos}")]
    UnknownElement { symbol: String, pos: usize },
    #[error("unterminated bracket atom starting at {pos}")]
    UnterminatedBracket { pos: usize },
    #[error("bond symbol without a preceding atom at {pos}")]
    DanglingBond { pos: usize },
    #[error("unbalanced parentheses at {pos}")]
    UnbalancedBranch { pos: usize },
    #[error("ring closure {label} never closed")]
    UnclosedRing { label: u32 },
    #[error("conflicting bond symbols on ring closure {label}")]
    RingBondConflict { label: u32 },
    #[error("ring closure {label} would duplicate a bond or close on itself")]
    InvalidRingClosure { label: u32 },
    #[error("quadruple bonds are not supported (pos {pos})")]
    UnsupportedBond { pos: usize },
    #[error("atom {atom} is marked aromatic but is not in a ring")]
    NonRingAromatic { atom: usize },
    #[error(transparent)]
    Kekulize(#[from] crate::chem::kekulize::KekulizeError),
    #[error("SMILES contains no heavy atoms")]
    NoHeavyAtoms,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
}

#[derive(Debug, Clone)]
struct ParsedAtom {
    kind: AtomKind,
    aromatic: bool,
    explicit_h: Option<u8>,
}

/// Reads SMILES into a heavy-atom graph. Aromatic input is kekulized and
/// charge-separated forms are normalized the same way the feasibility check
/// expects them; syntax errors and non-kekulizable aromatic systems are
/// reported as [`ParseError`].
pub fn parse_smiles(smiles: &str) -> Result<Molecule, ParseError> {
    let (mut mol, explicit_h) = read_raw(smiles)?;
    kekulize(&mut mol, &explicit_h, KekuleMode::Strict)?;
    cleanup(&mut mol);
    Ok(mol)
}

/// Syntax-only read: aromatic bonds are kept as [`BondOrder::Aromatic`].
pub(crate) fn read_raw(smiles: &str) -> Result<(Molecule, Vec<Option<u8>>), ParseError> {
    let s = smiles.trim();
    if s.is_empty() {
        return Err(ParseError::Empty);
    }
    let bytes = s.as_bytes();
    let mut atoms: Vec<ParsedAtom> = Vec::new();
    let mut bonds: Vec<(usize, usize, Option<BondSym>)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondSym, usize)> = None;
    let mut branches: Vec<Option<usize>> = Vec::new();
    let mut rings: BTreeMap<u32, (usize, Option<BondSym>)> = BTreeMap::new();

    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            '(' => {
                if prev.is_none() || pending.is_some() {
                    return Err(ParseError::UnbalancedBranch { pos: i });
                }
                branches.push(prev);
                i += 1;
            }
            ')' => {
                if pending.is_some() || i > 0 && bytes[i - 1] == b'(' {
                    return Err(ParseError::DanglingBond { pos: i });
                }
                prev = branches
                    .pop()
                    .ok_or(ParseError::UnbalancedBranch { pos: i })?;
                i += 1;
            }
            '.' => {
                if pending.is_some() || !branches.is_empty() && prev.is_none() {
                    return Err(ParseError::DanglingBond { pos: i });
                }
                prev = None;
                i += 1;
            }
            '-' | '=' | '#' | ':' | '/' | '\\' => {
                if prev.is_none() || pending.is_some() {
                    return Err(ParseError::DanglingBond { pos: i });
                }
                let sym = match c {
                    '=' => BondSym::Double,
                    '#' => BondSym::Triple,
                    ':' => BondSym::Aromatic,
                    _ => BondSym::Single,
                };
                pending = Some((sym, i));
                i += 1;
            }
            '$' => return Err(ParseError::UnsupportedBond { pos: i }),
            '0'..='9' | '%' => {
                let label;
                if c == '%' {
                    let d: String = s[i + 1..].chars().take(2).collect();
                    if d.len() != 2 || !d.chars().all(|ch| ch.is_ascii_digit()) {
                        return Err(ParseError::UnexpectedChar { ch: c, pos: i });
                    }
                    label = d.parse::<u32>().unwrap();
                    i += 3;
                } else {
                    label = c.to_digit(10).unwrap();
                    i += 1;
                }
                let Some(cur) = prev else {
                    return Err(ParseError::UnexpectedChar { ch: c, pos: i - 1 });
                };
                let sym = pending.take().map(|(s, _)| s);
                if let Some((open_atom, open_sym)) = rings.remove(&label) {
                    let sym = match (open_sym, sym) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(ParseError::RingBondConflict { label })
                        }
                        (a, b) => a.or(b),
                    };
                    if open_atom == cur
                        || bonds
                            .iter()
                            .any(|&(x, y, _)| (x == open_atom && y == cur) || (x == cur && y == open_atom))
                    {
                        return Err(ParseError::InvalidRingClosure { label });
                    }
                    bonds.push((open_atom, cur, sym));
                } else {
                    rings.insert(label, (cur, sym));
                }
            }
            '[' => {
                let (atom, next) = read_bracket(s, i)?;
                atoms.push(atom);
                let idx = atoms.len() - 1;
                if let Some(p) = prev {
                    bonds.push((p, idx, pending.take().map(|(s, _)| s)));
                } else if let Some((_, pos)) = pending {
                    return Err(ParseError::DanglingBond { pos });
                }
                prev = Some(idx);
                i = next;
            }
            _ => {
                let (atom, next) = read_organic(s, i)?;
                atoms.push(atom);
                let idx = atoms.len() - 1;
                if let Some(p) = prev {
                    bonds.push((p, idx, pending.take().map(|(s, _)| s)));
                } else if let Some((_, pos)) = pending {
                    return Err(ParseError::DanglingBond { pos });
                }
                prev = Some(idx);
                i = next;
            }
        }
    }
    if let Some((_, pos)) = pending {
        return Err(ParseError::DanglingBond { pos });
    }
    if !branches.is_empty() {
        return Err(ParseError::UnbalancedBranch { pos: bytes.len() });
    }
    if let Some((&label, _)) = rings.iter().next() {
        return Err(ParseError::UnclosedRing { label });
    }

    // hydrogens become counts on their heavy neighbour
    let is_h: Vec<bool> = atoms.iter().map(|a| a.kind.element == Element::H).collect();
    for &(a, b, _) in &bonds {
        for (h, heavy) in [(a, b), (b, a)] {
            if is_h[h] && !is_h[heavy] {
                let slot = &mut atoms[heavy].explicit_h;
                *slot = Some(slot.unwrap_or(0) + 1);
            }
        }
    }
    let mut remap = vec![usize::MAX; atoms.len()];
    let mut mol = Molecule::new();
    let mut explicit_h = Vec::new();
    let mut aromatic_atom = Vec::new();
    for (k, a) in atoms.iter().enumerate() {
        if !is_h[k] {
            remap[k] = mol.add_atom(a.kind);
            explicit_h.push(a.explicit_h);
            aromatic_atom.push(a.aromatic);
        }
    }
    if mol.num_atoms() == 0 {
        return Err(ParseError::NoHeavyAtoms);
    }
    for &(a, b, sym) in &bonds {
        if is_h[a] || is_h[b] {
            continue;
        }
        let (ra, rb) = (remap[a], remap[b]);
        let order = match sym {
            Some(BondSym::Single) => BondOrder::Single,
            Some(BondSym::Double) => BondOrder::Double,
            Some(BondSym::Triple) => BondOrder::Triple,
            Some(BondSym::Aromatic) => BondOrder::Aromatic,
            None if atoms[a].aromatic && atoms[b].aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        mol.add_bond(ra, rb, order);
    }

    let in_ring = ring_bonds(&mol);
    for (atom, &arom) in aromatic_atom.iter().enumerate() {
        if !arom {
            continue;
        }
        let ok = mol
            .bonds
            .iter()
            .enumerate()
            .any(|(k, b)| (b.a == atom || b.b == atom) && in_ring[k]);
        if !ok {
            return Err(ParseError::NonRingAromatic { atom });
        }
    }
    Ok((mol, explicit_h))
}

fn read_organic(s: &str, i: usize) -> Result<(ParsedAtom, usize), ParseError> {
    let rest = &s[i..];
    let (symbol, aromatic, len) = if rest.starts_with("Cl") {
        ("Cl", false, 2)
    } else if rest.starts_with("Br") {
        ("Br", false, 2)
    } else {
        let ch = rest.chars().next().unwrap();
        match ch {
            'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => (&rest[..1], false, 1),
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => (&rest[..1], true, 1),
            '*' => ("*", false, 1),
            _ => return Err(ParseError::UnexpectedChar { ch, pos: i }),
        }
    };
    let upper = if aromatic {
        symbol.to_ascii_uppercase()
    } else {
        symbol.to_string()
    };
    let element = Element::from_symbol(&upper).ok_or_else(|| ParseError::UnknownElement {
        symbol: symbol.to_string(),
        pos: i,
    })?;
    Ok((
        ParsedAtom {
            kind: AtomKind::neutral(element),
            aromatic,
            explicit_h: None,
        },
        i + len,
    ))
}

fn read_bracket(s: &str, start: usize) -> Result<(ParsedAtom, usize), ParseError> {
    let close = s[start..]
        .find(']')
        .map(|k| start + k)
        .ok_or(ParseError::UnterminatedBracket { pos: start })?;
    let body = &s[start + 1..close];
    let b = body.as_bytes();
    let mut k = 0;
    let err = |k: usize| ParseError::UnexpectedChar {
        ch: body[k..].chars().next().unwrap_or(']'),
        pos: start + 1 + k,
    };
    // isotope (ignored)
    while k < b.len() && b[k].is_ascii_digit() {
        k += 1;
    }
    if k >= b.len() {
        return Err(err(k));
    }
    let (element, aromatic) = if b[k] == b'*' {
        k += 1;
        (Element::WILDCARD, false)
    } else if b[k].is_ascii_lowercase() {
        let two = body.get(k..k + 2).unwrap_or("");
        let (sym, len) = if matches!(two, "se" | "as" | "te") {
            (two, 2)
        } else if matches!(b[k], b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
            (&body[k..k + 1], 1)
        } else {
            return Err(ParseError::UnknownElement {
                symbol: body[k..k + 1].to_string(),
                pos: start + 1 + k,
            });
        };
        let mut up = sym.to_string();
        up[..1].make_ascii_uppercase();
        k += len;
        (Element::from_symbol(&up).unwrap(), true)
    } else if b[k].is_ascii_uppercase() {
        let two = body.get(k..k + 2).unwrap_or("");
        if two.len() == 2
            && two.as_bytes()[1].is_ascii_lowercase()
            && Element::from_symbol(two).is_some()
        {
            k += 2;
            (Element::from_symbol(two).unwrap(), false)
        } else {
            let one = &body[k..k + 1];
            let e = Element::from_symbol(one).ok_or_else(|| ParseError::UnknownElement {
                symbol: one.to_string(),
                pos: start + 1 + k,
            })?;
            k += 1;
            (e, false)
        }
    } else {
        return Err(err(k));
    };
    // chirality (ignored)
    if k < b.len() && b[k] == b'@' {
        k += 1;
        if k < b.len() && b[k] == b'@' {
            k += 1;
        }
        while k < b.len() && (b[k].is_ascii_uppercase() && b[k] != b'H' || b[k].is_ascii_digit()) {
            k += 1;
        }
    }
    let mut hcount = 0u8;
    if k < b.len() && b[k] == b'H' {
        k += 1;
        let d0 = k;
        while k < b.len() && b[k].is_ascii_digit() {
            k += 1;
        }
        hcount = if k > d0 {
            body[d0..k].parse().map_err(|_| err(d0))?
        } else {
            1
        };
    }
    let mut charge: i32 = 0;
    if k < b.len() && (b[k] == b'+' || b[k] == b'-') {
        let sign = if b[k] == b'+' { 1 } else { -1 };
        let ch = b[k];
        k += 1;
        let d0 = k;
        while k < b.len() && b[k].is_ascii_digit() {
            k += 1;
        }
        if k > d0 {
            charge = sign * body[d0..k].parse::<i32>().map_err(|_| err(d0))?;
        } else {
            charge = sign;
            while k < b.len() && b[k] == ch {
                charge += sign;
                k += 1;
            }
        }
    }
    // atom class (ignored)
    if k < b.len() && b[k] == b':' {
        k += 1;
        while k < b.len() && b[k].is_ascii_digit() {
            k += 1;
        }
    }
    if k != b.len() {
        return Err(err(k));
    }
    let charge = i8::try_from(charge).map_err(|_| err(k.saturating_sub(1)))?;
    Ok((
        ParsedAtom {
            kind: AtomKind::new(element, charge),
            aromatic,
            explicit_h: Some(hcount),
        },
        close + 1,
    ))
}

/// Marks bonds that lie on a cycle (i.e. are not bridges).
pub(crate) fn ring_bonds(mol: &Molecule) -> Vec<bool> {
    let n = mol.num_atoms();
    let adj = mol.adjacency();
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut in_ring = vec![true; mol.bonds.len()];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // iterative DFS: (vertex, parent bond, next neighbour index)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, pb, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let (w, k) = adj[v][*next];
                *next += 1;
                if k == pb {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, k, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        in_ring[pb] = false;
                    }
                }
            }
        }
    }
    in_ring
}
