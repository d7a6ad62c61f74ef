"""Multicode mapping, preamble construction and payload assembly."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class MulticodeAlphabet:
    theta: np.ndarray  # K x M_d

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def M_d(self) -> int:
        return self.theta.shape[1]

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.M_d))


def _pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def build_alphabet(K: int, M_d: int) -> MulticodeAlphabet:
    """First ``M_d`` DFT columns of size ``K``, each with energy ``K``."""
    if M_d > K:
        raise ValueError("M_d must not exceed K")
    if not (_pow2(K) and _pow2(M_d)):
        raise ValueError("K and M_d must be powers of 2")
    k = np.arange(K)[:, None]
    i = np.arange(M_d)[None, :]
    return MulticodeAlphabet(np.exp(-2j * np.pi * k * i / K))


def build_preamble(Z: int, P: int = 4) -> np.ndarray:
    """``P`` periods of a length-``Z`` CAZAC sequence.

    Odd ``Z`` uses the root-1 Zadoff-Chu sequence; even ``Z`` uses the
    quadratic-phase sequence ``exp(j pi l^2 / Z)``. Both have ideal periodic
    autocorrelation.
    """
    if Z < 1 or P < 1:
        raise ValueError("Z and P must be positive")
    return np.tile(training_sequence(Z, Z), P)


def training_sequence(Z: int, n: int, start: int = 0) -> np.ndarray:
    l = np.arange(start, start + n) % Z
    if Z % 2:
        return np.exp(-1j * np.pi * l * (l + 1) / Z)
    return np.exp(1j * np.pi * l**2 / Z)


def periodic_autocorrelation(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    return np.array([np.vdot(z, np.roll(z, -k)) for k in range(len(z))])


@dataclass(frozen=True)
class PacketFrame:
    """A packet: preamble symbols followed by the ``K x N`` payload matrix."""

    preamble: np.ndarray
    payload: np.ndarray
    N_int: int
    bits: np.ndarray
    indices: np.ndarray
    Z: int

    @property
    def K(self) -> int:
        return self.payload.shape[0]

    @property
    def n_payload(self) -> int:
        return self.payload.shape[1]

    @property
    def pilot_columns(self) -> np.ndarray:
        return np.arange(0, self.n_payload, self.N_int)

    @property
    def data_columns(self) -> np.ndarray:
        n = np.arange(self.n_payload)
        return n[n % self.N_int != 0]

    @property
    def pilot_values(self) -> np.ndarray:
        return self.payload[0, self.pilot_columns]

    def symbol_matrix(self) -> np.ndarray:
        """All ``K`` chip streams, preamble columns first."""
        pre = np.tile(self.preamble, (self.K, 1))
        return np.concatenate([pre, self.payload], axis=1)

    def scaled(self, a: complex) -> "PacketFrame":
        return PacketFrame(a * self.preamble, a * self.payload, self.N_int, self.bits, self.indices, self.Z)

    @property
    def n_symbols(self) -> int:
        return len(self.preamble) + self.n_payload


def payload_layout(n_data: int, N_int: int) -> tuple[int, int]:
    """(total columns, pilot count) for ``n_data`` data columns.

    A pilot precedes every group of ``N_int - 1`` data columns; the payload
    ends on the last data column.
    """
    if N_int < 2:
        raise ValueError("N_int must be >= 2")
    if n_data == 0:
        return 0, 0
    n_pilots = -(-n_data // (N_int - 1))
    return n_data + n_pilots, n_pilots


def bits_to_indices(bits, M_d: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    b = int(np.log2(M_d))
    if bits.size % b:
        raise ValueError(f"bit count {bits.size} not divisible by {b}")
    groups = bits.reshape(-1, b)
    weights = 1 << np.arange(b - 1, -1, -1)
    return (groups * weights).sum(axis=1).astype(int)


def encode(bits, alphabet: MulticodeAlphabet, Z: int = 16, P: int = 4, N_int: int = 4,
           pilot_values: Optional[np.ndarray] = None) -> PacketFrame:
    """Map bits to multicode columns and interleave pilots.

    Bit groups are read big-endian. Column ``n`` of the payload is a pilot
    iff ``n % N_int == 0``. Pilot values default to the training sequence
    continued past the preamble.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    idx = bits_to_indices(bits, alphabet.M_d)
    n_cols, n_pilots = payload_layout(len(idx), N_int)
    if pilot_values is None:
        pilot_values = training_sequence(Z, n_pilots, start=0)
    elif len(pilot_values) < n_pilots:
        raise ValueError("not enough pilot values")
    S = np.zeros((alphabet.K, n_cols), complex)
    cols = np.arange(n_cols)
    pil = cols[cols % N_int == 0]
    dat = cols[cols % N_int != 0]
    S[:, pil] = np.asarray(pilot_values)[:n_pilots][None, :]
    S[:, dat] = alphabet.theta[:, idx]
    return PacketFrame(build_preamble(Z, P), S, N_int, bits, idx, Z)


def decode_symbols(indices, M_d: int) -> np.ndarray:
    """Inverse of the big-endian bit-group mapping."""
    idx = np.asarray(indices, dtype=int)
    if np.any(idx < 0) or np.any(idx >= M_d):
        raise ValueError("symbol index out of range")
    b = int(np.log2(M_d))
    shifts = np.arange(b - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()


# --- bit sidecar ------------------------------------------------------------

def write_bit_sidecar(path, bits, config_hash: str) -> None:
    """Little-endian ``u32 nbits``, 16-byte config hash, packed bits (LSB first)."""
    bits = np.asarray(bits, dtype=np.uint8)
    h = bytes.fromhex(config_hash.ljust(32, "0")[:32])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", bits.size))
        fh.write(h)
        fh.write(np.packbits(bits, bitorder="little").tobytes())


def read_bit_sidecar(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        h = fh.read(16).hex()
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n], h


def config_hash(*parts) -> str:
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:32]
