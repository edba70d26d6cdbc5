"""Pluggable molecular property functions.

Built-in surrogates cover desk-scale experiments; the `oracle` property
shells out to an external scorer speaking a line protocol (SMILES in,
float out, one per line), named by the MOLGEN_ORACLE_CMD environment
variable or an explicit command.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
from typing import Callable

from molgen.chem.mol import Molecule
from molgen.chem.smiles import write_smiles
from molgen.chem.vocab import Vocabulary

PropertyFn = Callable[[Molecule], float]

ORACLE_ENV_VAR = "MOLGEN_ORACLE_CMD"


def atom_count(mol: Molecule) -> float:
    return float(mol.size)


def bond_order_sum(mol: Molecule) -> float:
    return float(mol.bonds.sum()) / 2.0


def ring_count(mol: Molecule) -> float:
    """Cyclomatic ring count: edges - atoms + 1 on a connected graph."""
    edges = int((mol.bonds > 0).sum()) // 2
    return float(edges - mol.size + 1)


class OracleProperty:
    """Line-protocol client for an external property scorer."""

    def __init__(self, command: str, vocab: Vocabulary | None = None):
        self.command = command
        self.vocab = vocab
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def __call__(self, mol: Molecule) -> float:
        proc = self._ensure()
        assert proc.stdin is not None and proc.stdout is not None
        proc.stdin.write(write_smiles(mol, self.vocab) + "\n")
        proc.stdin.flush()
        line = proc.stdout.readline().strip()
        if not line:
            raise RuntimeError(f"oracle {self.command!r} closed its output")
        try:
            return float(line)
        except ValueError:
            return math.nan

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()  # type: ignore[union-attr]
            self._proc.wait(timeout=10)
        self._proc = None


BUILTIN_PROPERTIES: dict[str, PropertyFn] = {
    "atoms": atom_count,
    "bond_sum": bond_order_sum,
    "rings": ring_count,
}


def resolve_property(
    name: str,
    oracle_cmd: str | None = None,
    vocab: Vocabulary | None = None,
) -> PropertyFn:
    """Look up a property by name; `oracle` requires a configured command."""
    if name in BUILTIN_PROPERTIES:
        return BUILTIN_PROPERTIES[name]
    if name == "oracle":
        command = oracle_cmd or os.environ.get(ORACLE_ENV_VAR)
        if not command:
            raise ValueError(
                f"property 'oracle' needs {ORACLE_ENV_VAR} or an explicit command"
            )
        return OracleProperty(command, vocab)
    raise ValueError(f"unknown property {name!r}; choose from "
                     f"{sorted(BUILTIN_PROPERTIES)} or 'oracle'")
