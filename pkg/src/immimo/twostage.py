"""Two-stage neural frame detector and its training pipelines.

Stage 1 (AAPD) maps the raw receive matrix Y to per-antenna activation
probabilities without any CSI. Stage 2 takes the legalized TAC, zero-forces
the symbols with the receiver's channel estimate, and passes them through a
residual enhancement net (SE) before nearest-symbol demapping.

Training is step-by-step: AAPD first, then its frozen predictions generate
the ZF dataset that trains SE. Both stages keep the best-validation
checkpoint and stop early once the validation loss target is met.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from immimo.cvnn import (
    Adam,
    ComplexBatchNorm,
    ComplexConv2d,
    ComplexDense,
    ComplexReLU,
    Flatten,
    MergeReIm,
    Model,
    RealBatchNorm,
    RealConv2d,
    RealDense,
    RealHeadDense,
    RealReLU,
    RealSigmoid,
    Residual,
    SplitReIm,
    bce,
    bce_backward,
    mse,
    mse_backward,
)
from immimo.detectors import zf_estimate
from immimo.linalg import Rng
from immimo.modulation import QamConstellation
from immimo.phy import TacTable, demap_frame


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 100
    max_epochs: int = 200
    gamma1: float = 0.05          # AAPD validation BCE target
    gamma2: float | None = None   # SE validation MSE target; None -> 1.05x ZF floor
    per_snr: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch < 2:
            raise ValueError("batch must be >= 2")
        if self.gamma1 <= 0:
            raise ValueError("gamma1 must be > 0")
        if self.gamma2 is not None and self.gamma2 <= 0:
            raise ValueError("gamma2 must be > 0")


@dataclass
class AapdModel:
    net: Model
    variant: str
    n_r: int
    t: int
    n_t: int

    def probabilities(self, y: np.ndarray) -> np.ndarray:
        """Batch (B, n_r, t) or single (n_r, t) -> probabilities (B, n_t) / (n_t,)."""
        single = y.ndim == 2
        yb = y[None] if single else y
        p = self.net.forward(yb[:, None, :, :].astype(np.complex128), train=False)
        return p[0] if single else p


@dataclass
class SeModel:
    net: Model
    variant: str
    n_u: int
    t: int

    def enhance(self, s_zf: np.ndarray) -> np.ndarray:
        single = s_zf.ndim == 2
        sb = s_zf[None] if single else s_zf
        out = self.net.forward(sb[:, None, :, :].astype(np.complex128), train=False)
        out = out[:, 0, :, :]
        return out[0] if single else out


def build_aapd(n_r: int, t: int, n_t: int, variant: str = "complex",
               conv_channels: tuple[int, int] = (32, 64),
               dense_units: tuple[int, int] = (256, 128),
               seed: int = 0) -> AapdModel:
    """Activation-pattern detector: two conv blocks, two dense blocks, real
    sigmoid readout of length n_t.

    Widths are given in complex units; the real variant doubles them so both
    variants spend the same number of real value slots per layer.
    """
    if min(n_r, t, n_t) < 1:
        raise ValueError("dims must be >= 1")
    if variant not in ("complex", "real"):
        raise ValueError(f"variant must be 'complex' or 'real', got {variant!r}")
    c1, c2 = conv_channels
    d1, d2 = dense_units
    rng = Rng(seed).derive(101)
    if variant == "complex":
        layers = [
            ComplexConv2d(1, c1, 3, "same", rng=rng.derive(0)),
            ComplexBatchNorm(c1),
            ComplexReLU(),
            ComplexConv2d(c1, c2, 3, "same", rng=rng.derive(1)),
            ComplexBatchNorm(c2),
            ComplexReLU(),
            Flatten(),
            ComplexDense(c2 * n_r * t, d1, rng=rng.derive(2)),
            ComplexReLU(),
            ComplexDense(d1, d2, rng=rng.derive(3)),
            ComplexReLU(),
            RealHeadDense(2 * d2, n_t, rng=rng.derive(4)),
            RealSigmoid(),
        ]
    else:
        layers = [
            SplitReIm(),
            RealConv2d(2, 2 * c1, 3, "same", rng=rng.derive(0)),
            RealBatchNorm(2 * c1),
            RealReLU(),
            RealConv2d(2 * c1, 2 * c2, 3, "same", rng=rng.derive(1)),
            RealBatchNorm(2 * c2),
            RealReLU(),
            Flatten(),
            RealDense(2 * c2 * n_r * t, 2 * d1, rng=rng.derive(2)),
            RealReLU(),
            RealDense(2 * d1, 2 * d2, rng=rng.derive(3)),
            RealReLU(),
            RealHeadDense(2 * d2, n_t, rng=rng.derive(4)),
            RealSigmoid(),
        ]
    meta = {"role": "aapd", "variant": variant, "n_r": n_r, "t": t, "n_t": n_t,
            "conv_channels": list(conv_channels), "dense_units": list(dense_units)}
    return AapdModel(net=Model(layers, meta=meta), variant=variant,
                     n_r=n_r, t=t, n_t=n_t)


def build_se(n_u: int, t: int, variant: str = "complex",
             channels: tuple[int, int] = (16, 16), seed: int = 0) -> SeModel:
    """Signal-enhancement net: residual conv stack on the (n_u, t) estimate."""
    if min(n_u, t) < 1:
        raise ValueError("dims must be >= 1")
    if variant not in ("complex", "real"):
        raise ValueError(f"variant must be 'complex' or 'real', got {variant!r}")
    c1, c2 = channels
    rng = Rng(seed).derive(202)
    if variant == "complex":
        branch = [
            ComplexConv2d(1, c1, 3, "same", rng=rng.derive(0)),
            ComplexReLU(),
            ComplexConv2d(c1, c2, 3, "same", rng=rng.derive(1)),
            ComplexReLU(),
            ComplexConv2d(c2, 1, 3, "same", rng=rng.derive(2)),
        ]
        layers = [Residual(branch)]
    else:
        branch = [
            RealConv2d(2, 2 * c1, 3, "same", rng=rng.derive(0)),
            RealReLU(),
            RealConv2d(2 * c1, 2 * c2, 3, "same", rng=rng.derive(1)),
            RealReLU(),
            RealConv2d(2 * c2, 2, 3, "same", rng=rng.derive(2)),
        ]
        layers = [SplitReIm(), Residual(branch), MergeReIm()]
    meta = {"role": "se", "variant": variant, "n_u": n_u, "t": t,
            "channels": list(channels)}
    return SeModel(net=Model(layers, meta=meta), variant=variant, n_u=n_u, t=t)


def predict_tac(aapd: AapdModel, y: np.ndarray, table: TacTable):
    """Probabilities and legalized TAC index for one receive matrix."""
    p = aapd.probabilities(y)
    return p, tac_from_probabilities(p, table)


def tac_from_probabilities(p: np.ndarray, table: TacTable) -> int:
    """Top-N_u antennas; if that set is illegal, the legal TAC with the
    largest probability sum (ties toward the earliest table entry)."""
    order = np.argsort(-p, kind="stable")
    cand = tuple(sorted(int(a) + 1 for a in order[: table.n_u]))
    if cand in table:
        return table.index_of(cand)
    sums = [p[[a - 1 for a in tac]].sum() for tac in table.tacs]
    return int(np.argmax(sums))


def tacs_from_probabilities(p: np.ndarray, table: TacTable) -> np.ndarray:
    """Vectorized tac_from_probabilities over a (B, n_t) batch."""
    return np.array([tac_from_probabilities(row, table) for row in p])


def _as_input(y_batch: np.ndarray) -> np.ndarray:
    return y_batch[:, None, :, :].astype(np.complex128)


def _epoch_batches(n: int, batch: int, rng: Rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch):
        yield perm[start:start + batch]


def _forward_in_chunks(net: Model, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    outs = [net.forward(x[i:i + chunk], train=False) for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


def _restore_quantized(net: Model, best_state: list | None) -> None:
    if best_state is not None:
        net.load_state_arrays(best_state)
    # land exactly on the values a checkpoint reader will see
    net.quantize_state()


def train_aapd(aapd: AapdModel, train: tuple, val: tuple, cfg: TrainConfig,
               table: TacTable | None = None) -> list[dict]:
    """Train the AAPD net on (Y, g) pairs by Adam mini-batches.

    Stops when validation BCE < cfg.gamma1 or at the epoch cap; the model is
    left holding the best-validation parameters (after f32 quantization, so
    in-memory inference matches a saved checkpoint exactly). Returns one log
    record per epoch.
    """
    y_tr, g_tr = train
    y_va, g_va = val
    if len(y_tr) == 0:
        raise ValueError("empty training set")
    x_tr = _as_input(np.asarray(y_tr))
    x_va = _as_input(np.asarray(y_va))
    g_tr = np.asarray(g_tr, dtype=np.float64)
    g_va = np.asarray(g_va, dtype=np.float64)
    opt = Adam(aapd.net, lr=cfg.lr)
    rng = Rng(cfg.seed).derive(11)
    history = []
    best = (np.inf, None, -1)
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        tr_loss = 0.0
        nb = 0
        for sel in _epoch_batches(len(x_tr), cfg.batch, rng.derive(epoch)):
            xb, gb = x_tr[sel], g_tr[sel]
            p = aapd.net.forward(xb, train=True)
            tr_loss += bce(p, gb)
            nb += 1
            aapd.net.backward(bce_backward(p, gb))
            opt.step()
        p_va = _forward_in_chunks(aapd.net, x_va)
        va_loss = bce(p_va, g_va)
        rec = {"stage": "aapd", "epoch": epoch, "train_loss": tr_loss / max(nb, 1),
               "val_loss": va_loss, "seconds": time.monotonic() - t0}
        if table is not None:
            est = tacs_from_probabilities(p_va, table)
            truth = np.array([tac_from_probabilities(row, table) for row in g_va])
            rec["val_tac_accuracy"] = float(np.mean(est == truth))
        history.append(rec)
        if va_loss < best[0]:
            best = (va_loss, aapd.net.state_arrays(), epoch)
        if va_loss < cfg.gamma1:
            break
    _restore_quantized(aapd.net, best[1])
    history.append({"stage": "aapd", "event": "done", "best_epoch": best[2],
                    "best_val_loss": best[0],
                    "converged": bool(best[0] < cfg.gamma1)})
    return history


def build_zf_dataset(aapd: AapdModel, y: np.ndarray, h_est: np.ndarray,
                     table: TacTable) -> tuple[np.ndarray, np.ndarray]:
    """ZF symbol estimates from the frozen AAPD's TAC decisions.

    Returns (s_zf, tac_indices); s_zf rows follow ascending antenna order
    within each predicted TAC.
    """
    p = _forward_in_chunks(aapd.net, _as_input(np.asarray(y)))
    tacs = tacs_from_probabilities(p, table)
    s_zf = np.empty((len(y), table.n_u, y.shape[-1]), dtype=np.complex128)
    for i, ti in enumerate(tacs):
        s_zf[i] = zf_estimate(y[i], h_est[i], table.tacs[ti])
    return s_zf, tacs


def train_se(se: SeModel, train: tuple, val: tuple, cfg: TrainConfig) -> list[dict]:
    """Train the SE net on (s_zf, s_true) pairs.

    The stop target is min(gamma2, ZF floor): with gamma2 defaulting to
    1.05x the validation MSE of the raw ZF input, the floor term keeps the
    net training until it is at least as good as doing nothing.
    """
    z_tr, s_tr = train
    z_va, s_va = val
    if len(z_tr) == 0:
        raise ValueError("empty training set")
    x_tr = _as_input(np.asarray(z_tr))
    x_va = _as_input(np.asarray(z_va))
    s_tr = np.asarray(s_tr, dtype=np.complex128)
    s_va = np.asarray(s_va, dtype=np.complex128)
    floor = mse(z_va, s_va)
    target = min(cfg.gamma2 if cfg.gamma2 is not None else 1.05 * floor, floor)
    opt = Adam(se.net, lr=cfg.lr)
    rng = Rng(cfg.seed).derive(22)
    history = []
    best = (np.inf, None, -1)
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        tr_loss = 0.0
        nb = 0
        for sel in _epoch_batches(len(x_tr), cfg.batch, rng.derive(epoch)):
            xb = x_tr[sel]
            out = se.net.forward(xb, train=True)
            tgt = s_tr[sel][:, None, :, :]
            tr_loss += mse(out, tgt)
            nb += 1
            se.net.backward(mse_backward(out, tgt))
            opt.step()
        out_va = _forward_in_chunks(se.net, x_va)
        va_loss = mse(out_va, s_va[:, None, :, :])
        history.append({"stage": "se", "epoch": epoch, "train_loss": tr_loss / max(nb, 1),
                        "val_loss": va_loss, "zf_floor": floor,
                        "seconds": time.monotonic() - t0})
        if va_loss < best[0]:
            best = (va_loss, se.net.state_arrays(), epoch)
        if va_loss <= target:
            break
    _restore_quantized(se.net, best[1])
    history.append({"stage": "se", "event": "done", "best_epoch": best[2],
                    "best_val_loss": best[0], "zf_floor": floor,
                    "converged": bool(best[0] <= target)})
    return history


def train_full(train: dict, val: dict, cfg: TrainConfig, table: TacTable,
               variant: str = "complex",
               conv_channels: tuple[int, int] = (32, 64),
               dense_units: tuple[int, int] = (256, 128),
               se_channels: tuple[int, int] = (16, 16)):
    """Step-by-step training of both stages.

    `train`/`val` are dicts with keys y (B, n_r, t), g (B, n_t), s (B, n_u, t),
    h_est (B, n_r, n_t). Stage 1 trains AAPD on (y, g); stage 2 builds the ZF
    dataset with the frozen AAPD and trains SE on (s_zf, s).
    Returns (aapd, se, history).
    """
    y_tr = np.asarray(train["y"])
    n_r, t = y_tr.shape[1], y_tr.shape[2]
    aapd = build_aapd(n_r, t, table.n_t, variant=variant,
                      conv_channels=conv_channels, dense_units=dense_units,
                      seed=cfg.seed)
    history = [{"stage": "aapd", "event": "start", "time": time.time()}]
    history += train_aapd(aapd, (train["y"], train["g"]), (val["y"], val["g"]),
                          cfg, table=table)
    history.append({"stage": "aapd", "event": "frozen", "time": time.time()})
    z_tr, _ = build_zf_dataset(aapd, np.asarray(train["y"]),
                               np.asarray(train["h_est"]), table)
    z_va, _ = build_zf_dataset(aapd, np.asarray(val["y"]),
                               np.asarray(val["h_est"]), table)
    se = build_se(table.n_u, t, variant=variant, channels=se_channels, seed=cfg.seed)
    history.append({"stage": "se", "event": "start", "time": time.time()})
    history += train_se(se, (z_tr, train["s"]), (z_va, val["s"]), cfg)
    history.append({"stage": "se", "event": "done_all", "time": time.time()})
    return aapd, se, history


def detect_frame(y: np.ndarray, h_est: np.ndarray, aapd: AapdModel, se: SeModel,
                 table: TacTable, constellation: QamConstellation,
                 tac_index: int | None = None) -> np.ndarray:
    """Full two-stage detection of one frame back to payload bits.

    `tac_index` overrides stage 1 when given (oracle-TAC diagnostics).
    """
    if tac_index is None:
        _, tac_index = predict_tac(aapd, y, table)
    s_zf = zf_estimate(y, h_est, table.tacs[tac_index])
    s_hat = se.enhance(s_zf) if se is not None else s_zf
    return demap_frame(tac_index, s_hat, table, constellation)


def detect_frames(y: np.ndarray, h_est: np.ndarray, aapd: AapdModel, se: SeModel,
                  table: TacTable, constellation: QamConstellation,
                  chunk: int = 256):
    """Batched two-stage detection.

    Same per-frame computation as detect_frame with the net forwards batched.
    Returns (bits (B, b), tac_indices (B,)).
    """
    y = np.asarray(y)
    p = _forward_in_chunks(aapd.net, _as_input(y), chunk=chunk)
    tacs = tacs_from_probabilities(p, table)
    s_zf = np.empty((len(y), table.n_u, y.shape[-1]), dtype=np.complex128)
    for i, ti in enumerate(tacs):
        s_zf[i] = zf_estimate(y[i], h_est[i], table.tacs[ti])
    if se is not None:
        s_hat = _forward_in_chunks(se.net, s_zf[:, None, :, :], chunk=chunk)[:, 0]
    else:
        s_hat = s_zf
    bits = np.stack([demap_frame(int(tacs[i]), s_hat[i], table, constellation)
                     for i in range(len(y))])
    return bits, tacs
