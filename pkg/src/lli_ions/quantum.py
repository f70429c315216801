"""Labeled composite Hilbert spaces for a string of ions sharing one motional mode.

Basis ordering is fixed: ion 0 is the slowest-varying index, the Fock
occupation of the shared mode is the fastest. For ``n_ions`` ions with ``L``
levels each and a Fock cutoff ``n_max`` the flat index of
``(l_0, ..., l_{N-1}, n)`` is::

    ((l_0 * L + l_1) * L + ... + l_{N-1}) * (n_max + 1) + n

Global phases are never removed; compare states with :func:`fidelity`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

S_HALF = "S1/2"
D_FIVE_HALF = "D5/2"
_ALLOWED_MJ = {
    S_HALF: {Fraction(-1, 2), Fraction(1, 2)},
    D_FIVE_HALF: {Fraction(k, 2) for k in (-5, -3, -1, 1, 3, 5)},
}

UNITARY_TOL = 1e-12


class BasisError(ValueError):
    """Raised for labels that do not index a valid basis element."""


@dataclass(frozen=True, order=True)
class IonLevel:
    """One Zeeman sublevel of 40Ca+ (S1/2 or D5/2 manifold)."""

    manifold: str
    m_j: Fraction

    def __post_init__(self):
        if self.manifold not in _ALLOWED_MJ:
            raise BasisError(f"unknown manifold {self.manifold!r}")
        m = Fraction(self.m_j).limit_denominator(2)
        if m not in _ALLOWED_MJ[self.manifold]:
            raise BasisError(f"m_J={m} is not a sublevel of {self.manifold}")
        object.__setattr__(self, "m_j", m)

    @property
    def bright(self) -> bool:
        # detection scatters on S1/2 -> P1/2, D5/2 stays dark
        return self.manifold == S_HALF

    def __str__(self):
        sign = "+" if self.m_j > 0 else "-"
        return f"{self.manifold[0]}{sign}{abs(self.m_j.numerator)}/2"


def level(name: str) -> IonLevel:
    """Parse ``'S+1/2'``, ``'D-5/2'`` style labels."""
    name = name.strip()
    manifold = {"S": S_HALF, "D": D_FIVE_HALF}.get(name[:1].upper())
    if manifold is None:
        raise BasisError(f"cannot parse level {name!r}")
    try:
        m = Fraction(name[1:])
    except ValueError as exc:
        raise BasisError(f"cannot parse level {name!r}") from exc
    return IonLevel(manifold, m)


S_M = level("S-1/2")
S_P = level("S+1/2")
D_M1 = level("D-1/2")
D_P1 = level("D+1/2")
D_M5 = level("D-5/2")
D_P5 = level("D+5/2")

GATE_LEVELS = (S_M, S_P, D_M1, D_P1)
LLI_LEVELS = (S_M, S_P, D_M1, D_P1, D_M5, D_P5)

# (ground, excited) of each addressed 729 nm transition
TRANSITIONS = {
    "C1": (S_M, D_M5),
    "C2": (S_P, D_P5),
    "C3": (S_P, D_P1),
    "C4": (S_M, D_M1),
}


@dataclass(frozen=True)
class CompositeBasis:
    """Product basis ``levels^n_ions (x) Fock(0..n_max)``."""

    n_ions: int = 2
    levels: tuple = GATE_LEVELS
    n_max: int = 0

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(set(levels)) != len(levels):
            raise BasisError("duplicate level in per-ion level list")
        object.__setattr__(self, "levels", levels)
        if self.n_ions < 1 or self.n_max < 0:
            raise BasisError("need n_ions >= 1 and n_max >= 0")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def internal_dim(self) -> int:
        return self.n_levels**self.n_ions

    @property
    def dim(self) -> int:
        return self.internal_dim * self.n_fock

    def level_index(self, ion: int, lvl: IonLevel) -> int:
        if not 0 <= ion < self.n_ions:
            raise BasisError(f"ion {ion} out of range for {self.n_ions} ions")
        try:
            return self.levels.index(lvl)
        except ValueError:
            raise BasisError(f"ion {ion}: level {lvl} not in basis {self.level_names}") from None

    @property
    def level_names(self) -> list[str]:
        return [str(l) for l in self.levels]

    def index(self, levels: Sequence[Union[IonLevel, str]], n: int = 0) -> int:
        if len(levels) != self.n_ions:
            raise BasisError(f"expected {self.n_ions} ion labels, got {len(levels)}")
        if not 0 <= n <= self.n_max:
            raise BasisError(f"Fock number {n} outside 0..{self.n_max}")
        idx = 0
        for ion, lvl in enumerate(levels):
            if isinstance(lvl, str):
                try:
                    lvl = level(lvl)
                except BasisError as exc:
                    raise BasisError(f"ion {ion}: {exc}") from None
            idx = idx * self.n_levels + self.level_index(ion, lvl)
        return idx * self.n_fock + n

    def label(self, index: int) -> tuple[tuple[IonLevel, ...], int]:
        n = index % self.n_fock
        rest = index // self.n_fock
        per_ion = []
        for _ in range(self.n_ions):
            per_ion.append(self.levels[rest % self.n_levels])
            rest //= self.n_levels
        return tuple(reversed(per_ion)), n

    @cached_property
    def ion_level_table(self) -> np.ndarray:
        """(dim, n_ions) array of per-ion level indices for every basis element."""
        idx = np.arange(self.dim) // self.n_fock
        table = np.empty((self.dim, self.n_ions), dtype=int)
        for ion in reversed(range(self.n_ions)):
            table[:, ion] = idx % self.n_levels
            idx //= self.n_levels
        return table

    @cached_property
    def fock_numbers(self) -> np.ndarray:
        return np.arange(self.dim) % self.n_fock

    @property
    def internal(self) -> "CompositeBasis":
        return CompositeBasis(self.n_ions, self.levels, 0)


@dataclass(frozen=True)
class Ket:
    basis: CompositeBasis
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dim,):
            raise ValueError(f"amplitude vector has shape {amps.shape}, basis dim {self.basis.dim}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def population(self, levels: Sequence[Union[IonLevel, str]]) -> float:
        """Population of an internal configuration, summed over the Fock index."""
        start = self.basis.index(levels, 0)
        return float(self.probabilities()[start:start + self.basis.n_fock].sum())

    def reduced_internal(self) -> np.ndarray:
        """Internal-state density matrix with the motional mode traced out."""
        psi = self.amplitudes.reshape(self.basis.internal_dim, self.basis.n_fock)
        return psi @ psi.conj().T


def make_ket(basis: CompositeBasis, levels: Sequence[Union[IonLevel, str]], n: int = 0) -> Ket:
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index(levels, n)] = 1.0
    return Ket(basis, amps)


def superpose(*terms: tuple[complex, Ket]) -> Ket:
    """Normalized linear combination of kets on a common basis."""
    basis = terms[0][1].basis
    amps = sum(c * k.amplitudes for c, k in terms)
    return Ket(basis, amps / np.linalg.norm(amps))


def fidelity(a: Ket, b: Ket) -> float:
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def local_operator(basis: CompositeBasis, ion: int, op: np.ndarray) -> np.ndarray:
    """Embed a single-ion ``L x L`` operator, identity on other ions and motion."""
    mats = [np.eye(basis.n_levels)] * basis.n_ions
    mats[ion] = np.asarray(op)
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return np.kron(out, np.eye(basis.n_fock))


def mode_operator(basis: CompositeBasis, op: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(basis.internal_dim), op)


def annihilation(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex)


def transition_pair(basis: CompositeBasis, ion: int, transition: str) -> tuple[int, int]:
    """Per-ion level indices ``(ground, excited)`` of an addressed transition."""
    try:
        g, e = TRANSITIONS[transition]
    except KeyError:
        raise BasisError(f"unknown transition {transition!r}") from None
    return basis.level_index(ion, g), basis.level_index(ion, e)


def carrier_rotation(basis: CompositeBasis, ion: int, transition: str,
                     theta: float, phi: float) -> np.ndarray:
    """Resonant carrier pulse on one ion.

    Acts as ``cos(theta/2) I - i sin(theta/2) (cos(phi) sx + sin(phi) sy)``
    on the ``{ground, excited}`` pair of ``transition`` with ``sx``/``sy``
    the Pauli matrices in the ordered pair (ground, excited); identity on all
    other levels, ions and the motional mode.
    """
    g, e = transition_pair(basis, ion, transition)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    r = np.eye(basis.n_levels, dtype=complex)
    r[g, g] = r[e, e] = c
    # sx + i sy structure: <g|..|e> = e^{-i phi}, <e|..|g> = e^{+i phi}
    r[g, e] = -1j * s * np.exp(-1j * phi)
    r[e, g] = -1j * s * np.exp(1j * phi)
    return local_operator(basis, ion, r)


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < tol)


def apply(u: np.ndarray, k: Ket) -> Ket:
    u = np.asarray(u)
    if u.shape != (k.basis.dim, k.basis.dim):
        raise ValueError(f"operator shape {u.shape} does not match basis dim {k.basis.dim}")
    return Ket(k.basis, u @ k.amplitudes)


def parity_diagonal(basis: CompositeBasis,
                    bright: Callable[[IonLevel], bool] | None = None) -> np.ndarray:
    """Diagonal of the parity observable: product over ions of +1 bright / -1 dark."""
    bright = bright or (lambda lvl: lvl.bright)
    sign = np.array([1.0 if bright(l) else -1.0 for l in basis.levels])
    return np.prod(sign[basis.ion_level_table], axis=1)


def parity_expectation(state, bright: Callable[[IonLevel], bool] | None = None,
                       basis: CompositeBasis | None = None) -> float:
    """Expectation of the parity of a :class:`Ket` or a density matrix.

    A density matrix must be accompanied by its ``basis``.
    """
    if isinstance(state, Ket):
        diag = parity_diagonal(state.basis, bright)
        return float(np.dot(diag, state.probabilities()))
    rho = np.asarray(state)
    diag = parity_diagonal(basis, bright)
    return float(np.real(np.dot(diag, np.diag(rho))))


def configuration_probabilities(k: Ket, bright: Callable[[IonLevel], bool] | None = None
                                ) -> dict[tuple[bool, ...], float]:
    """Probability of every bright/dark pattern, traced over motion."""
    bright = bright or (lambda lvl: lvl.bright)
    is_bright = np.array([bright(l) for l in k.basis.levels])
    patterns = is_bright[k.basis.ion_level_table]
    probs = k.probabilities()
    out: dict[tuple[bool, ...], float] = {}
    for pat, p in zip(map(tuple, patterns), probs):
        out[pat] = out.get(pat, 0.0) + p
    return out


def sample_outcomes(k: Ket, shots: int, rng_seed=None, detection_error: float = 0.0,
                    bright: Callable[[IonLevel], bool] | None = None
                    ) -> dict[tuple[bool, ...], int]:
    """Projective bright/dark readout of ``shots`` copies of ``k``.

    ``detection_error`` flips each ion's bright/dark result independently.
    Deterministic for a fixed ``rng_seed``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(rng_seed)
    probs = configuration_probabilities(k, bright)
    patterns = sorted(probs, reverse=True)
    p = np.array([probs[pat] for pat in patterns])
    counts = rng.multinomial(shots, p / p.sum())
    if detection_error > 0:
        flipped: dict[tuple[bool, ...], int] = {pat: 0 for pat in patterns}
        for pat, c in zip(patterns, counts):
            flips = rng.random((c, len(pat))) < detection_error
            for row in np.logical_xor(np.array(pat, dtype=bool), flips):
                key = tuple(bool(x) for x in row)
                flipped[key] = flipped.get(key, 0) + 1
        return flipped
    return {pat: int(c) for pat, c in zip(patterns, counts)}


def parity_from_counts(counts: dict[tuple[bool, ...], int]) -> float:
    total = sum(counts.values())
    signed = sum(c * (1 if sum(not b for b in pat) % 2 == 0 else -1) for pat, c in counts.items())
    return signed / total
