"""Pseudo-random and constant-amplitude base sequences for the positioning
reference signals: 31-bit Gold codes with QPSK mapping for the downlink
signal, Zadoff-Chu roots for the uplink one.
"""

from __future__ import annotations

import math

import numpy as np

# Gold generator: warm-up outputs discarded before the sequence starts.
_GOLD_WARMUP = 1600

_SEQ_ID_MAX = 4095


def gold_sequence(c_init: int, length: int) -> np.ndarray:
    """Length-31 Gold code as a 0/1 int array.

    Two 31-bit LFSRs with feedback x^31 + x^3 + 1 and
    x^31 + x^3 + x^2 + x + 1; the first register starts from 1, the second
    from the binary expansion of c_init, and the output is their XOR after
    1600 warm-up steps.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    total = length + _GOLD_WARMUP + 31
    x1 = np.zeros(total, dtype=np.int64)
    x2 = np.zeros(total, dtype=np.int64)
    x1[0] = 1
    for i in range(31):
        x2[i] = (int(c_init) >> i) & 1
    for i in range(total - 31):
        x1[i + 31] = (x1[i + 3] + x1[i]) & 1
        x2[i + 31] = (x2[i + 3] + x2[i + 2] + x2[i + 1] + x2[i]) & 1
    return (x1[_GOLD_WARMUP : _GOLD_WARMUP + length] + x2[_GOLD_WARMUP : _GOLD_WARMUP + length]) & 1


def prs_c_init(seq_id: int, slot: int, symbol: int) -> int:
    """Scrambling seed for one downlink positioning symbol.

    Mixes the 12-bit sequence ID with the slot/symbol position so each
    symbol of each signal gets a distinct Gold code:

        c_init = (2^22 * (seq_id >> 10)
                  + 2^10 * (14*slot + symbol + 1) * (2*(seq_id & 1023) + 1)
                  + (seq_id & 1023)) mod 2^31

    Injective in seq_id for a fixed (slot, symbol); pinned by golden
    vectors in the test suite.
    """
    if not 0 <= seq_id <= _SEQ_ID_MAX:
        raise ValueError(f"seq_id {seq_id} outside 0..{_SEQ_ID_MAX}")
    if slot < 0 or symbol < 0:
        raise ValueError("slot and symbol must be non-negative")
    hi, lo = seq_id >> 10, seq_id & 1023
    mixed = (2**22) * hi + (2**10) * (14 * slot + symbol + 1) * (2 * lo + 1) + lo
    return mixed % (2**31)


def qpsk_map(bits: np.ndarray) -> np.ndarray:
    """Map bit pairs (b0, b1) to ((1-2*b0) + 1j*(1-2*b1)) / sqrt(2)."""
    bits = np.asarray(bits)
    if bits.size % 2 != 0:
        raise ValueError("qpsk_map needs an even number of bits")
    b = bits.reshape(-1, 2)
    return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / np.sqrt(2)


def prs_symbol_sequence(seq_id: int, slot: int, symbol: int, n_values: int) -> np.ndarray:
    """QPSK sequence carried by one downlink positioning symbol."""
    bits = gold_sequence(prs_c_init(seq_id, slot, symbol), 2 * n_values)
    return qpsk_map(bits)


def zc_sequence(root: int, length: int) -> np.ndarray:
    """Zadoff-Chu sequence x[n] = exp(-1j*pi*root*n*(n+1)/length).

    Requires gcd(root, length) = 1 and odd length >= 3; every sample has
    unit modulus and the cyclic autocorrelation vanishes at nonzero lags.
    """
    if length < 3:
        raise ValueError("length must be >= 3")
    if length % 2 == 0:
        raise ValueError("length must be odd")
    if math.gcd(root, length) != 1:
        raise ValueError(f"root {root} not coprime with length {length}")
    n = np.arange(length)
    return np.exp(-1j * np.pi * root * n * (n + 1) / length)


def largest_coprime_root(length: int, preferred: int) -> int:
    """Root closest to `preferred` (searching downward) coprime with length."""
    root = max(1, min(preferred, length - 1))
    while math.gcd(root, length) != 1:
        root -= 1
        if root < 1:
            raise ValueError(f"no coprime root below {preferred} for length {length}")
    return root


def zc_base_for_width(root: int, n_values: int) -> np.ndarray:
    """Constant-amplitude base sequence spanning n_values subcarriers.

    Uses the largest odd length <= n_values with a coprime root and extends
    it cyclically, which keeps the flat spectrum of the underlying root.
    """
    if n_values < 3:
        raise ValueError("need at least 3 values")
    length = n_values if n_values % 2 == 1 else n_values - 1
    base = zc_sequence(largest_coprime_root(length, root), length)
    reps = int(np.ceil(n_values / length))
    return np.tile(base, reps)[:n_values]
