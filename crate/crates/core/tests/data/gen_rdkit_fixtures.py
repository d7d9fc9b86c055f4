"""Regenerates the RDKit reference fixtures used by the chemistry tests.

    python3 gen_rdkit_fixtures.py <path to rdkit/Data/NCI/first_5k.tpsa.csv>
"""
import json
import random
import sys

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")
rng = random.Random(7)

ORDERS = {1: Chem.BondType.SINGLE, 2: Chem.BondType.DOUBLE, 3: Chem.BondType.TRIPLE}
ELEMENTS = ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B"]


def load_smiles(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            smi = line.split(",")[0].strip()
            if smi and smi != "Smiles":
                out.append(smi)
    return out


def heavy_graph(mol):
    atoms = [[a.GetSymbol(), a.GetFormalCharge()] for a in mol.GetAtoms()]
    bonds = [[b.GetBeginAtomIdx(), b.GetEndAtomIdx(), int(b.GetBondTypeAsDouble())]
             for b in mol.GetBonds()]
    return atoms, bonds


def rdkit_feasible(atoms, bonds):
    rw = Chem.RWMol()
    for sym, charge in atoms:
        a = Chem.Atom(sym)
        a.SetFormalCharge(charge)
        rw.AddAtom(a)
    for i, j, o in bonds:
        rw.AddBond(i, j, ORDERS[o])
    try:
        Chem.SanitizeMol(rw.GetMol())
        return True
    except Exception:
        return False


def mutate(smi):
    chars = list(smi)
    k = rng.randrange(len(chars))
    op = rng.randrange(3)
    if op == 0:
        del chars[k]
    elif op == 1:
        chars.insert(k, rng.choice("()=#123cnoCN[]+-"))
    else:
        chars[k] = rng.choice("cnosCNO1()=")
    return "".join(chars)


def rdkit_readable(smi):
    """Accepted by MolFromSmiles once valence checking is switched off."""
    m = Chem.MolFromSmiles(smi, sanitize=False)
    if m is None or m.GetNumAtoms() == 0:
        return False
    try:
        m.UpdatePropertyCache(strict=False)
        ops = Chem.SanitizeFlags.SANITIZE_ALL ^ Chem.SanitizeFlags.SANITIZE_PROPERTIES
        Chem.SanitizeMol(m, sanitizeOps=ops)
    except Exception:
        return False
    return True


def perturb(atoms, bonds):
    atoms = [list(a) for a in atoms]
    bonds = [list(b) for b in bonds]
    for _ in range(rng.randint(1, 3)):
        op = rng.randrange(5)
        n = len(atoms)
        if op == 0 and bonds:
            rng.choice(bonds)[2] = rng.randint(1, 3)
        elif op == 1 and n > 2:
            i, j = rng.sample(range(n), 2)
            if not any({i, j} == {b[0], b[1]} for b in bonds):
                bonds.append([i, j, rng.randint(1, 3)])
        elif op == 2 and bonds:
            bonds.pop(rng.randrange(len(bonds)))
        elif op == 3:
            atoms[rng.randrange(n)][0] = rng.choice(ELEMENTS)
        else:
            atoms[rng.randrange(n)][1] = rng.choice([-1, 0, 1])
    return atoms, bonds


def main():
    smiles = load_smiles(sys.argv[1])
    corpus, feas, mutants = [], [], []
    for smi in smiles[:1500]:
        mol = Chem.MolFromSmiles(smi)
        rec = {"smiles": smi, "ok": mol is not None}
        if mol is not None:
            rec["aromatic_smiles"] = Chem.MolToSmiles(mol)
            mutants.append(mutate(rec["aromatic_smiles"]))
            Chem.Kekulize(mol, clearAromaticFlags=True)
            atoms, bonds = heavy_graph(mol)
            rec.update(
                atoms=mol.GetNumAtoms(),
                bonds=mol.GetNumBonds(),
                doubles=sum(1 for b in bonds if b[2] == 2),
                triples=sum(1 for b in bonds if b[2] == 3),
                charge=sum(a[1] for a in atoms),
                ring_bonds=sum(1 for b in mol.GetBonds() if b.IsInRing()),
            )
            if len(feas) < 4000 and 1 < len(atoms) <= 40:
                feas.append({"atoms": atoms, "bonds": bonds, "feasible": True})
                for _ in range(2):
                    pa, pb = perturb(atoms, bonds)
                    feas.append({"atoms": pa, "bonds": pb, "feasible": rdkit_feasible(pa, pb)})
        corpus.append(rec)
    with open("rdkit_mutants.jsonl", "w") as fh:
        for smi in mutants:
            fh.write(json.dumps({"smiles": smi, "readable": rdkit_readable(smi)}) + "\n")
    # hand-picked checks
    extra = {
        "CSC1OC(C)(C)OC1=O": Chem.MolFromSmiles("CSC1OC(C)(C)OC1=O").GetNumAtoms(),
        "N3": rdkit_feasible([["N", 0], ["C", 0], ["C", 0], ["C", 0]], [[0, 1, 1], [0, 2, 1], [0, 3, 1]]),
        "C5": rdkit_feasible([["C", 0]] + [["C", 0]] * 5, [[0, k, 1] for k in range(1, 6)]),
    }
    with open("rdkit_corpus.jsonl", "w") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec) + "\n")
    with open("rdkit_feasibility.jsonl", "w") as fh:
        for rec in feas:
            fh.write(json.dumps(rec) + "\n")
    print(json.dumps(extra))
    print(len(corpus), sum(r["ok"] for r in corpus), len(feas), sum(r["feasible"] for r in feas))


if __name__ == "__main__":
    main()
