#!/usr/bin/env python3
"""Regenerates the bundled fixture files under crates/core/data/fixtures.

corpus.sdf     small molecules with explicit hydrogens and MMFF geometry
complex_*.pdb  synthetic pocket shells around a ligand
complex_*.sdf  the matching ligands

Requires RDKit and numpy. Output is deterministic.
"""
import argparse
import pathlib

import numpy as np
from rdkit import Chem
from rdkit.Chem import AllChem

# Every entry must reassign to a valency-stable bond set from its own geometry.
# Amides, five-membered heteroaromatics and fused aromatics do not, because
# their bond lengths fall between the single and double intervals.
CORPUS = [
    ("ethanol", "CCO"),
    ("acetic_acid", "CC(=O)O"),
    ("acetone", "CC(C)=O"),
    ("propanol", "CCCO"),
    ("isopropanol", "CC(C)O"),
    ("butanoic_acid", "CCCC(=O)O"),
    ("methyl_acetate", "COC(C)=O"),
    ("ethyl_acetate", "CCOC(C)=O"),
    ("glycine", "NCC(=O)O"),
    ("alanine", "CC(N)C(=O)O"),
    ("serine", "NC(CO)C(=O)O"),
    ("ethylamine", "CCN"),
    ("dimethyl_sulfide", "CSC"),
    ("dimethyl_sulfoxide", "CS(C)=O"),
    ("cyclopentanone", "O=C1CCCC1"),
    ("cyclohexane", "C1CCCCC1"),
    ("cyclohexanol", "OC1CCCCC1"),
    ("tetrahydrofuran", "C1CCOC1"),
    ("dioxane", "C1COCCO1"),
    ("piperidine", "C1CCNCC1"),
    ("morpholine", "C1COCCN1"),
    ("piperazine", "C1CNCCN1"),
    ("benzene", "c1ccccc1"),
    ("toluene", "Cc1ccccc1"),
    ("phenol", "Oc1ccccc1"),
    ("aniline", "Nc1ccccc1"),
    ("fluorobenzene", "Fc1ccccc1"),
    ("chlorobenzene", "Clc1ccccc1"),
    ("anisole", "COc1ccccc1"),
    ("benzyl_alcohol", "OCc1ccccc1"),
    ("benzaldehyde", "O=Cc1ccccc1"),
    ("acetophenone", "CC(=O)c1ccccc1"),
    ("benzoic_acid", "OC(=O)c1ccccc1"),
    ("p_cresol", "Cc1ccc(O)cc1"),
    ("thioanisole", "CSc1ccccc1"),
    ("pyridine", "c1ccncc1"),
    ("pyrimidine", "c1cncnc1"),
    ("fluoropyridine", "Fc1ccccn1"),
    ("chloropyridine", "Clc1cccnc1"),
    ("methylpyridine", "Cc1ccncc1"),
    ("salicylic_acid", "OC(=O)c1ccccc1O"),
    ("paracetamol", "CC(=O)Nc1ccc(O)cc1"),
    ("thiophene", "c1ccsc1"),
    ("imidazole", "c1c[nH]cn1"),
    ("thiazole", "c1cscn1"),
    ("indole", "c1ccc2[nH]ccc2c1"),
    ("methanesulfonamide", "CS(N)(=O)=O"),
    ("dimethylformamide", "CN(C)C=O"),
    ("chloroacetic_acid", "OC(=O)CCl"),
    ("trifluoroethanol", "OCC(F)(F)F"),
]

LIGANDS = [("benzamide", "NC(=O)c1ccccc1"), ("hydroxyethylpiperidine", "OCCN1CCCCC1")]
POCKET_ELEMENTS = ["C", "C", "C", "N", "O", "S"]
CONTACT = {"C": 3.4, "N": 3.1, "O": 2.9, "S": 3.6}


def embed(name, smiles, seed=7):
    mol = Chem.AddHs(Chem.MolFromSmiles(smiles))
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(mol, params) != 0:
        raise RuntimeError(f"embedding failed for {name}")
    AllChem.MMFFOptimizeMolecule(mol, maxIters=2000)
    mol.SetProp("_Name", name)
    return mol


def mol_block(mol):
    Chem.Kekulize(mol, clearAromaticFlags=True)
    return Chem.MolToMolBlock(mol, kekulize=True) + "$$$$\n"


def pocket_shell(mol, rng, n_atoms=60):
    """Atoms on a loose shell: each sits at its contact distance from the nearest ligand atom."""
    pos = mol.GetConformer().GetPositions()
    center = pos.mean(axis=0)
    out = []
    attempts = 0
    while len(out) < n_atoms and attempts < 20000:
        attempts += 1
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        elem = POCKET_ELEMENTS[rng.integers(len(POCKET_ELEMENTS))]
        r = 0.0
        p = center
        while True:
            p = center + d * r
            if np.min(np.linalg.norm(pos - p, axis=1)) >= CONTACT[elem] + rng.uniform(0.0, 0.6):
                break
            r += 0.02
        if all(np.linalg.norm(p - q) > 2.8 for q, _ in out):
            out.append((p, elem))
    return out


def pdb_block(atoms):
    lines = []
    for i, (p, elem) in enumerate(atoms, start=1):
        lines.append(
            f"ATOM  {i:5d} {elem:<4} UNK A   1    {p[0]:8.3f}{p[1]:8.3f}{p[2]:8.3f}  1.00  0.00          {elem:>2}"
        )
    lines.append("END")
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    root = pathlib.Path(__file__).resolve().parent.parent
    ap.add_argument("--out", type=pathlib.Path, default=root / "crates/core/data/fixtures")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    assert len(CORPUS) == 50
    with open(args.out / "corpus.sdf", "w") as f:
        for name, smi in CORPUS:
            mol = embed(name, smi)
            assert mol.GetNumHeavyAtoms() <= 15, name
            f.write(mol_block(mol))

    rng = np.random.default_rng(11)
    for k, (name, smi) in enumerate(LIGANDS, start=1):
        mol = embed(name, smi)
        shell = pocket_shell(mol, rng)
        (args.out / f"complex_{k}.pdb").write_text(pdb_block(shell))
        (args.out / f"complex_{k}.sdf").write_text(mol_block(mol))


if __name__ == "__main__":
    main()
