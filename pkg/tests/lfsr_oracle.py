"""Straight-line LFSR oracle, deliberately independent of the package
implementation: integer registers stepped bit by bit with explicit
feedback taps. Used to pin the Gold generator and the golden hex vectors.
"""


def _step(state: int, taps: tuple[int, ...]) -> tuple[int, int]:
    """Advance a 31-bit Fibonacci LFSR one step; returns (new_state, out_bit).

    state bit i holds x(n+i); the new top bit is the XOR of the tapped
    delays and the output is x(n).
    """
    out = state & 1
    fb = 0
    for t in taps:
        fb ^= (state >> t) & 1
    state = (state >> 1) | (fb << 30)
    return state, out


def oracle_gold(c_init: int, length: int, warmup: int = 1600) -> list[int]:
    s1, s2 = 1, c_init & 0x7FFFFFFF
    out = []
    for n in range(warmup + length):
        s1, b1 = _step(s1, (0, 3))
        s2, b2 = _step(s2, (0, 1, 2, 3))
        if n >= warmup:
            out.append(b1 ^ b2)
    return out


def bits_to_hex(bits) -> str:
    """Pack bits (first bit = MSB of first nibble) into a hex string."""
    padded = list(bits) + [0] * (-len(bits) % 4)
    digits = []
    for i in range(0, len(padded), 4):
        val = padded[i] * 8 + padded[i + 1] * 4 + padded[i + 2] * 2 + padded[i + 3]
        digits.append(f"{val:x}")
    return "".join(digits)
