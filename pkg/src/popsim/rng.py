"""Seedable 64-bit random number generation with a frozen algorithm.

Simulation traces must be reproducible bit-for-bit across platforms, Python
versions, and library upgrades, so the generator is implemented here rather
than delegated to ``random`` or ``numpy`` (whose distribution streams are
allowed to change between releases).

The algorithm is splitmix64: the state advances by a fixed odd increment
(the 64-bit golden ratio) and each output is a xor-shift-multiply mix of the
state.  It has a period of 2**64, passes BigCrush, and costs a handful of
integer operations per draw.

Bounded integers are drawn by taking the top bits of an output word and
rejecting values outside the range, which is exactly uniform (no modulo
bias).  For power-of-two bounds the rejection never triggers.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 output function: a bijective 64-bit finalizer."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX_A) & MASK64
    x = ((x ^ (x >> 27)) * _MIX_B) & MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, index: int) -> int:
    """Seed for trial ``index`` of a sweep seeded with ``base``.

    Defined as ``mix64(base + (index + 1) * GOLDEN_GAMMA)``: a fixed 64-bit
    mixer applied to the base combined with the trial index, so any single
    trial can be reproduced in isolation without replaying the sweep.
    """
    if index < 0:
        raise ValueError("trial index must be >= 0")
    return mix64((base + (index + 1) * GOLDEN_GAMMA) & MASK64)


class Splitmix64:
    """Deterministic 64-bit generator; one instance per trial, never shared."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next64(self) -> int:
        self._state = s = (self._state + GOLDEN_GAMMA) & MASK64
        s = ((s ^ (s >> 30)) * _MIX_A) & MASK64
        s = ((s ^ (s >> 27)) * _MIX_B) & MASK64
        return s ^ (s >> 31)

    def randbelow(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)``, exactly unbiased."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        shift = 64 - (bound - 1).bit_length()
        while True:
            r = self.next64() >> shift
            if r < bound:
                return r

    def random(self) -> float:
        """Uniform float in the open interval (0, 1) with 53-bit resolution.

        Cell centers ``(i + 0.5) * 2**-53`` are used so neither endpoint can
        occur; downstream inverse-transform samplers rely on ``0 < u < 1``.
        """
        return ((self.next64() >> 11) + 0.5) * 1.1102230246251565e-16  # 2**-53
