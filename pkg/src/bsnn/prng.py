"""Pseudo-random sources for Bernoulli weight sampling.

Hardware path: a bank of 32-bit Galois LFSRs with polynomial
``x^32 + x^22 + x^2 + x + 1``.  With maximal reuse all four bytes of every
register are tapped (least-significant byte first), so 16 registers yield
64 bytes per clock.  Without reuse only the low byte of each register is
used, so a 64-register bank is needed for the same 64 bytes per clock.

Each bank clock advances every register by ``SHIFTS_PER_CLOCK`` (32)
single Galois shifts, a leap-forward register whose XOR network replaces
the whole word every clock.  With one shift per clock the same register
would emit bytes that are one-bit shifts of the previous clock's bytes,
and sample frequencies would carry 2-3x the binomial spread.  The leap
is a fixed GF(2) matrix, applied here through four 256-entry byte tables.

Software path: numpy's ``Philox`` (Philox4x32-10) counter-based bit
generator keyed with the stream seed and read through ``random_raw``.
Each raw 64-bit word yields one value:

* ``FP32``  -- ``(word >> 40) * 2**-24``, a float32-exact real in [0, 1);
* ``FXP8``  -- ``word & 0xFF``, the value truncated to 8 bits.

Seeds are expanded with SplitMix64.
"""
from __future__ import annotations

import enum
import functools

import numpy as np

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

TAPS32 = 0x80200003  # x^32 + x^22 + x^2 + x + 1, Galois right-shift form
TAPS8 = 0xB8  # x^8 + x^6 + x^5 + x^4 + 1

BANK_SIZE = 16
BLOCK = 64
SHIFTS_PER_CLOCK = 32

# distinct stream domains so member seeds never collide with data seeds
_DOMAIN_MEMBER = 0x4D435F4D454D4252  # "MC_MEMBR"


class LfsrError(ValueError):
    pass


class RngScheme(enum.Enum):
    FP32 = "fp32"
    FXP8 = "fxp8"
    LFSR_NOREUSE = "lfsr-noreuse"
    LFSR_MAXREUSE = "lfsr-maxreuse"

    @property
    def is_byte(self) -> bool:
        return self is not RngScheme.FP32

    @classmethod
    def parse(cls, name) -> "RngScheme":
        if isinstance(name, cls):
            return name
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown rng scheme {name!r}; choose from "
                             f"{[s.value for s in cls]}") from None


# ----------------------------------------------------------------------------
# SplitMix64
# ----------------------------------------------------------------------------

def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int):
    """Infinite SplitMix64 output sequence starting from ``seed``."""
    state = seed & MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        yield splitmix64_mix(state)


def member_seed(master_seed: int, member: int) -> int:
    """Seed for Monte-Carlo member ``member`` (0-based)."""
    return splitmix64_mix((master_seed ^ _DOMAIN_MEMBER) + 0x9E3779B97F4A7C15 * (member + 1))


# ----------------------------------------------------------------------------
# LFSR primitives
# ----------------------------------------------------------------------------

def lfsr_step(word: int, taps: int = TAPS32, width: int = 32) -> int:
    """One Galois shift of a single register."""
    if word == 0:
        raise LfsrError("LFSR state 0 is the absorbing state")
    if word >> width:
        raise LfsrError(f"state does not fit in {width} bits")
    lsb = word & 1
    word >>= 1
    if lsb:
        word ^= taps
    return word


def lfsr_step8(word: int) -> int:
    return lfsr_step(word, TAPS8, 8)


def _step_array(words: np.ndarray) -> np.ndarray:
    lsb = words & np.uint32(1)
    return (words >> np.uint32(1)) ^ (np.uint32(TAPS32) * lsb)


def _apply(tables: np.ndarray, words: np.ndarray) -> np.ndarray:
    w = np.asarray(words, dtype=np.uint32)
    return (tables[0][w & 0xFF] ^ tables[1][(w >> 8) & 0xFF]
            ^ tables[2][(w >> 16) & 0xFF] ^ tables[3][w >> 24])


@functools.lru_cache(maxsize=None)
def _leap_tables(shifts: int) -> np.ndarray:
    """Byte tables of the linear map ``word -> word after `shifts` Galois shifts``."""
    if shifts <= 64:
        cols = np.array([1 << i for i in range(32)], dtype=np.uint32)
        for _ in range(shifts):
            cols = _step_array(cols)
    else:
        half = _leap_tables(shifts // 2)
        cols = _apply(half, _apply(half, [1 << i for i in range(32)]))
        if shifts % 2:
            cols = _step_array(cols)
    tables = np.zeros((4, 256), dtype=np.uint32)
    idx = np.arange(256)
    for k in range(4):
        for j in range(8):
            tables[k][(idx >> j) & 1 == 1] ^= cols[8 * k + j]
    tables.setflags(write=False)
    return tables


class LfsrBank:
    """``k`` independent 32-bit LFSRs advanced in lock step.

    One clock is ``shifts`` single Galois shifts of every register.
    Single-owner mutable state: give every MC member its own bank.
    """

    def __init__(self, states, master_seed: int | None = None, shifts: int = SHIFTS_PER_CLOCK):
        s = np.asarray(states, dtype=np.uint32).copy()
        if s.ndim != 1 or s.size == 0:
            raise LfsrError("bank needs at least one register")
        if np.any(s == 0):
            raise LfsrError("bank contains a zero register")
        if shifts < 1:
            raise LfsrError("a clock needs at least one shift")
        self.states = s
        self.master_seed = master_seed
        self.shifts = int(shifts)
        self.steps = 0

    @property
    def k(self) -> int:
        return int(self.states.size)

    def copy(self) -> "LfsrBank":
        b = LfsrBank(self.states, self.master_seed, self.shifts)
        b.steps = self.steps
        return b

    def step(self) -> np.ndarray:
        self.states = _apply(_leap_tables(self.shifts), self.states)
        self.steps += 1
        return self.states

    def step_many(self, n: int) -> np.ndarray:
        """Advance ``n`` clocks; return the ``(n, k)`` register history after each clock."""
        if n <= 0:
            return np.empty((0, self.k), dtype=np.uint32)
        hist = _apply(_leap_tables(self.shifts), self.states)[None]
        done = 1
        while done < n:
            # the next `done` clocks are the ones already computed, leapt by `done` clocks
            take = min(done, n - done)
            hist = np.concatenate([hist, _apply(_leap_tables(self.shifts * done), hist[:take])])
            done += take
        self.states = hist[-1].copy()
        self.steps += n
        return hist


def bank_init(master_seed: int, k: int = BANK_SIZE, shifts: int = SHIFTS_PER_CLOCK) -> LfsrBank:
    """Seed ``k`` distinct nonzero registers from a SplitMix64 expansion.

    Each 64-bit SplitMix output contributes its upper 32 bits; zero or
    duplicate candidates are skipped.
    """
    if k < 1:
        raise LfsrError("bank size must be >= 1")
    seen: list[int] = []
    for z in splitmix64(master_seed):
        cand = z >> 32
        if cand != 0 and cand not in seen:
            seen.append(cand)
            if len(seen) == k:
                break
    return LfsrBank(seen, master_seed, shifts)


def bank_draw64(bank: LfsrBank) -> np.ndarray:
    """Clock a 16-register bank once and emit its 64 bytes (LSB first per register)."""
    if bank.k != BANK_SIZE:
        raise LfsrError(f"bank_draw64 needs a {BANK_SIZE}-register bank, got {bank.k}")
    words = bank.step()
    return words.astype("<u4").view(np.uint8).copy()


def bank_draw64_many(bank: LfsrBank, n_blocks: int) -> np.ndarray:
    """``n_blocks`` consecutive :func:`bank_draw64` outputs as an ``(n_blocks, 64)`` array."""
    if bank.k != BANK_SIZE:
        raise LfsrError(f"bank_draw64 needs a {BANK_SIZE}-register bank, got {bank.k}")
    hist = bank.step_many(n_blocks)
    return hist.astype("<u4").view(np.uint8).reshape(n_blocks, BLOCK)


# ----------------------------------------------------------------------------
# Streams
# ----------------------------------------------------------------------------

class RandomStream:
    """Sequential stream of random values for one scheme and seed.

    ``draw(a) + draw(b)`` always equals ``draw(a + b)``: values left over
    from a partially consumed clock are buffered.
    """

    def __init__(self, scheme, seed: int):
        self.scheme = RngScheme.parse(scheme)
        self.seed = int(seed) & MASK64
        self._buf = np.empty(0, dtype=np.float64 if self.scheme is RngScheme.FP32 else np.uint8)
        if self.scheme is RngScheme.LFSR_MAXREUSE:
            self.bank = bank_init(self.seed, BANK_SIZE)
        elif self.scheme is RngScheme.LFSR_NOREUSE:
            self.bank = bank_init(self.seed, BLOCK)
        else:
            self.bitgen = np.random.Philox(key=self.seed)

    def _produce(self, n: int) -> np.ndarray:
        if self.scheme is RngScheme.LFSR_MAXREUSE:
            return bank_draw64_many(self.bank, -(-n // BLOCK)).reshape(-1)
        if self.scheme is RngScheme.LFSR_NOREUSE:
            hist = self.bank.step_many(-(-n // BLOCK))
            return (hist & np.uint32(0xFF)).astype(np.uint8).reshape(-1)
        raw = self.bitgen.random_raw(n).astype(np.uint64)
        if self.scheme is RngScheme.FXP8:
            return (raw & np.uint64(0xFF)).astype(np.uint8)
        return (raw >> np.uint64(40)).astype(np.float64) * 2.0**-24

    def draw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        if self._buf.size < n:
            self._buf = np.concatenate([self._buf, self._produce(n - self._buf.size)])
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def draw_blocks(self, n_blocks: int) -> np.ndarray:
        return self.draw(n_blocks * BLOCK).reshape(n_blocks, BLOCK)


def draw(scheme, n: int, state: RandomStream | int) -> np.ndarray:
    """Draw ``n`` values; ``state`` is a stream or a seed for a fresh one."""
    if not isinstance(state, RandomStream):
        state = RandomStream(scheme, state)
    elif state.scheme is not RngScheme.parse(scheme):
        raise ValueError("stream scheme does not match")
    return state.draw(n)
