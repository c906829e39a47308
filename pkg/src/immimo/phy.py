"""Index-modulation physical layer: TAC codebook, frames, channels, metrics.

A frame holds one transmit antenna combination (TAC) for T slots; only the
N_u active antennas carry symbols, so the transmit matrix X is row-sparse
with the same support in every column.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from immimo.linalg import Rng, complex_gaussian, cholesky_factor
from immimo.modulation import QamConstellation


@dataclass(frozen=True)
class TacTable:
    """Legal TAC codebook: exactly N_L = 2^b1 of the C(N_t, N_u) combinations.

    TACs are 1-based sorted antenna index tuples; the tuple position in
    `tacs` is the codeword index (msb-first over the b1 spatial bits).
    """

    n_t: int
    n_u: int
    tacs: tuple[tuple[int, ...], ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tacs)})

    @property
    def n_l(self) -> int:
        return len(self.tacs)

    @property
    def b1(self) -> int:
        return self.n_l.bit_length() - 1

    def index_of(self, tac: tuple[int, ...]) -> int:
        """Codeword index of a legal TAC; KeyError if not in the table."""
        return self._index[tuple(tac)]

    def __contains__(self, tac) -> bool:
        return tuple(tac) in self._index

    def aap(self, index: int) -> np.ndarray:
        """Antenna activation pattern of codeword `index` as a 0/1 vector (n_t,)."""
        g = np.zeros(self.n_t, dtype=np.float64)
        g[[a - 1 for a in self.tacs[index]]] = 1.0
        return g


def build_tac_table(n_t: int, n_u: int, tacs=None) -> TacTable:
    """Construct the legal TAC table.

    Without `tacs`, takes the first N_L combinations in lexicographic order.
    With `tacs`, uses that explicit list (it must contain exactly N_L valid,
    distinct, sorted combinations).
    """
    if not (1 <= n_u <= n_t):
        raise ValueError(f"need 1 <= n_u <= n_t, got n_u={n_u}, n_t={n_t}")
    total = math.comb(n_t, n_u)
    n_l = 1 << (total.bit_length() - 1)  # 2^floor(log2 C)
    if tacs is None:
        chosen = list(itertools.islice(
            itertools.combinations(range(1, n_t + 1), n_u), n_l))
    else:
        chosen = [tuple(t) for t in tacs]
        if len(chosen) != n_l:
            raise ValueError(f"explicit table must have {n_l} entries, got {len(chosen)}")
        if len(set(chosen)) != len(chosen):
            raise ValueError("explicit table has duplicate TACs")
        for t in chosen:
            if len(t) != n_u or list(t) != sorted(t) or t[0] < 1 or t[-1] > n_t:
                raise ValueError(f"invalid TAC {t}")
    return TacTable(n_t=n_t, n_u=n_u, tacs=tuple(chosen))


# Codebook from the classic 4-antenna / 2-active construction where the two
# bit positions directly steer the two active indices.
TAC_PRESET_4X2 = ((1, 3), (1, 4), (2, 4), (2, 3))


@dataclass(frozen=True)
class Frame:
    """One transmit frame: payload bits, chosen TAC, symbols and X matrix."""

    bits: np.ndarray          # (b,) 0/1
    tac_index: int
    s: np.ndarray             # (n_u, t) symbols, link order = ascending antenna
    x: np.ndarray             # (n_t, t) row-sparse transmit matrix
    t: int


def frame_bit_count(table: TacTable, constellation: QamConstellation, t: int) -> int:
    """Payload bits per frame: spatial bits once + fresh symbols every slot."""
    return table.b1 + table.n_u * constellation.bits_per_symbol * t


def assemble_frame(bits, table: TacTable, constellation: QamConstellation, t: int) -> Frame:
    """Map payload bits to a frame.

    Layout: bits[0:b1] select the TAC (msb-first), then slot-major groups of
    N_u * d bits modulate the active links in ascending antenna order.
    """
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    want = frame_bit_count(table, constellation, t)
    if bits.size != want:
        raise ValueError(f"expected {want} bits, got {bits.size}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0/1")
    b1 = table.b1
    tac_index = 0
    for b in bits[:b1]:
        tac_index = (tac_index << 1) | int(b)
    sym_bits = bits[b1:].reshape(t, table.n_u * constellation.bits_per_symbol)
    s = constellation.modulate(sym_bits).T  # (n_u, t)
    x = np.zeros((table.n_t, t), dtype=np.complex128)
    x[[a - 1 for a in table.tacs[tac_index]], :] = s
    return Frame(bits=bits, tac_index=tac_index, s=s, x=x, t=t)


def demap_frame(tac_index: int, s_hat, table: TacTable,
                constellation: QamConstellation) -> np.ndarray:
    """Inverse of assemble_frame given a detected TAC and symbol estimates."""
    s_hat = np.asarray(s_hat, dtype=np.complex128)
    n_u, t = s_hat.shape
    if n_u != table.n_u:
        raise ValueError("symbol row count != n_u")
    b1 = table.b1
    head = [(tac_index >> (b1 - 1 - k)) & 1 for k in range(b1)]
    sym_bits = constellation.demodulate(s_hat.T)  # (t, n_u*d)
    return np.concatenate([np.array(head, dtype=np.int64), sym_bits.reshape(-1)])


@dataclass(frozen=True)
class ChannelRealization:
    """Per-frame channel, true and receiver-side estimate."""

    h: np.ndarray        # (n_r, n_t) true channel
    h_est: np.ndarray    # (n_r, n_t) estimate handed to detectors
    rho: float = 0.0
    csi_error_var: float = 0.0


def make_correlated(h: np.ndarray, rho: float, rho_rx: float | None = None) -> np.ndarray:
    """Apply Kronecker spatial correlation: H_c = L_r H L_t^H.

    R entries are rho^|i-j| on each side (rho_rx defaults to rho); L are
    Cholesky factors, which satisfy the required L L^H = R.
    """
    h = np.asarray(h, dtype=np.complex128)
    n_r, n_t = h.shape
    if rho_rx is None:
        rho_rx = rho
    if not (0 <= rho < 1 and 0 <= rho_rx < 1):
        raise ValueError("correlation coefficients must be in [0, 1)")
    if rho == 0 and rho_rx == 0:
        return h.copy()

    def expfact(n, r):
        idx = np.arange(n)
        return cholesky_factor((r ** np.abs(idx[:, None] - idx[None, :])).astype(np.complex128))

    return expfact(n_r, rho_rx) @ h @ expfact(n_t, rho).conj().T


def corrupt_csi(h: np.ndarray, error_var: float, rng: Rng) -> np.ndarray:
    """Receiver CSI: h plus i.i.d. CN(0, error_var) estimation error."""
    h = np.asarray(h, dtype=np.complex128)
    if error_var == 0:
        return h.copy()
    return h + complex_gaussian(rng, h.shape[0], h.shape[1], error_var)


def csi_error_variance(n_t: int, sigma_z2: float, n_p: int, e_p: float) -> float:
    """Pilot-based LS estimation error variance N_t * sigma_z^2 / (N_p * E_p)."""
    if n_p <= 0 or e_p <= 0:
        raise ValueError("n_p and e_p must be positive")
    return n_t * sigma_z2 / (n_p * e_p)


def draw_channel(rng: Rng, n_r: int, n_t: int, rho: float = 0.0,
                 csi_error_var: float = 0.0) -> ChannelRealization:
    """Draw H with i.i.d. CN(0, 1/N_r) entries, then correlation / CSI error."""
    h = complex_gaussian(rng, n_r, n_t, 1.0 / n_r)
    if rho:
        h = make_correlated(h, rho)
    h_est = corrupt_csi(h, csi_error_var, rng)
    return ChannelRealization(h=h, h_est=h_est, rho=rho, csi_error_var=csi_error_var)


def noise_variance(snr_db: float, n_r: int, n_u: int) -> float:
    """Per-entry complex noise variance for a target receive SNR in dB.

    With unit-energy symbols and E|h|^2 = 1/N_r, the received signal energy
    per slot is N_u, the noise energy is N_r * sigma^2, so
    sigma^2 = N_u / (N_r * 10^(SNR/10)).
    """
    if math.isinf(snr_db):
        return 0.0
    return n_u / (n_r * 10.0 ** (snr_db / 10.0))


def apply_channel(frame: Frame, chan: ChannelRealization, snr_db: float,
                  rng: Rng) -> np.ndarray:
    """Receive matrix Y = H X + N at the requested SNR (inf => noiseless)."""
    y = chan.h @ frame.x
    n_r = chan.h.shape[0]
    var = noise_variance(snr_db, n_r, frame.s.shape[0])
    if var > 0:
        y = y + complex_gaussian(rng, n_r, frame.t, var)
    return y


def ber(bits_true, bits_hat) -> float:
    """Bit error rate between equal-length 0/1 arrays."""
    a = np.asarray(bits_true).reshape(-1)
    b = np.asarray(bits_hat).reshape(-1)
    if a.size != b.size:
        raise ValueError("bit arrays differ in length")
    if a.size == 0:
        raise ValueError("empty bit arrays")
    return float(np.mean(a != b))


def aap_accuracy(tacs_true, tacs_hat) -> float:
    """Fraction of frames whose detected antenna set matches exactly."""
    if len(tacs_true) != len(tacs_hat):
        raise ValueError("sequences differ in length")
    if not tacs_true:
        raise ValueError("empty sequences")
    hits = sum(set(a) == set(b) for a, b in zip(tacs_true, tacs_hat))
    return hits / len(tacs_true)
