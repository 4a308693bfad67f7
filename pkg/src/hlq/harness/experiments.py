"""Experiment drivers: the sensitivity ablation grid, gradient fidelity
checks against finite differences, and the quantization-error study."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..backprop import BackwardStrategy, PathSpec, naive_quant_backward, hq_grad_input, vanilla_backward
from ..errors import ParameterError
from ..hadamard import HadamardPlan, block_ht, lowest_sequency_bases
from ..quantize import RngState, dequant, quant_pseudo_stochastic
from ..tensor import Tensor
from .model import Model, ModelSpec
from .train import TrainConfig, train

# The sensitivity grid: independent choices on the two gradient paths.
# Five quantization rows plus the two selective low-rank rows.
ABLATION_ROWS = (
    ("fp", "fp"),
    ("fp", "int4"),
    ("fp", "int4+ht"),
    ("int4", "fp"),
    ("int4+ht", "fp"),
    ("hla", "fp"),
    ("fp", "hla"),
)

_PATHS = {
    "fp": PathSpec("fp"),
    "int4": PathSpec("quant", 4),
    "int8": PathSpec("quant", 8),
    "int4+ht": PathSpec("ht_quant", 4),
    "int8+ht": PathSpec("ht_quant", 8),
    "hla": PathSpec("lowrank"),
    "hla+int8": PathSpec("lowrank_quant", 8),
}


def path_strategy(gx: str, gw: str, rank: int = 8, block: int = 16,
                  pad_small_axes: bool = False) -> BackwardStrategy:
    """Composite strategy with independently chosen gradient paths."""
    if gx not in _PATHS or gx == "hla+int8":
        raise ParameterError(f"unknown grad_input path {gx!r}")
    if gw not in _PATHS:
        raise ParameterError(f"unknown grad_weight path {gw!r}")
    plan = HadamardPlan(block_size=block,
                        basis_indices=lowest_sequency_bases(block, rank))
    return BackwardStrategy(f"gx={gx}/gw={gw}", _PATHS[gx], _PATHS[gw],
                            plan=plan, pad_small_axes=pad_small_axes)


def ablation(spec: ModelSpec, cfg: TrainConfig, train_data, val_data,
             seeds=(0, 1, 2, 3, 4), rows=ABLATION_ROWS) -> dict:
    """Train every (grad_input, grad_weight) row across seeds and report
    final accuracies with mean and spread."""
    table = []
    for gx, gw in rows:
        strategy = path_strategy(gx, gw, rank=cfg.rank, block=cfg.block,
                                 pad_small_axes=cfg.pad_small_axes)
        accs = []
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed)
            hist = train(spec, run_cfg, train_data, val_data, strategy=strategy)
            accs.append(hist.final.val_acc)
        table.append({
            "grad_input": gx,
            "grad_weight": gw,
            "accuracies": accs,
            "mean": float(np.mean(accs)),
            "std": float(np.std(accs)),
        })
    return {"rows": table, "seeds": list(seeds), "epochs": cfg.epochs}


def _flat_param_grads(model: Model) -> np.ndarray:
    return np.concatenate([g.ravel().astype(np.float64) for g in model.gradients()])


def _grads_for(model: Model, x, y, strategies, rng=None) -> np.ndarray:
    logits = model.forward(x, strategies=strategies, train=True)
    _, g = model.loss_and_grad(logits, y)
    model.backward(g, strategies=strategies, rng=rng)
    return _flat_param_grads(model)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom else 0.0


def finite_difference_check(spec: ModelSpec, x, y, seed: int = 0,
                            h: float = 1e-3) -> float:
    """Central-difference check of the full vanilla backward.

    Returns max |analytic - fd| / max|analytic| over all parameters. The
    model must be small (< 1e4 parameters) and built from smooth activations.
    """
    model = Model(spec, init_seed=seed)
    if model.num_parameters() >= 10_000:
        raise ParameterError("finite differences need a model below 1e4 parameters")
    analytic = _grads_for(model, x, y, strategies={})
    params = model.parameters()
    fd = np.zeros_like(analytic)
    pos = 0

    def loss_now():
        logits = model.forward(x, train=False)
        loss, _ = model.loss_and_grad(logits, y)
        return loss

    for p in params:
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_now()
            flat[j] = orig - h
            lm = loss_now()
            flat[j] = orig
            fd[pos] = (lp - lm) / (2 * h)
            pos += 1
    denom = max(np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - fd)) / denom)


def grad_check(spec: ModelSpec, x, y, strategies: dict | None = None,
               seed: int = 0, n_bias_seeds: int = 50, fd: bool = True) -> dict:
    """Gradient fidelity report: finite-difference error of the vanilla path,
    cosine similarity of each strategy's update direction against vanilla,
    and the seed-averaged bias of stochastic rounding against each
    strategy's own float pipeline."""
    if strategies is None:
        strategies = {
            "int4": BackwardStrategy.naive_quant(4),
            "hq": BackwardStrategy.hq(),
            "hlq": BackwardStrategy.hlq(),
        }
    report = {}
    if fd:
        report["fd_max_rel_err"] = finite_difference_check(spec, x, y, seed=seed)

    model = Model(spec, init_seed=seed)
    reference = _grads_for(model, x, y, strategies={})
    gemm = model.gemm_indices()
    cosines = {}
    biases = {}
    for name, s in strategies.items():
        per_layer = {i: s for i in gemm}
        got = _grads_for(model, x, y, strategies=per_layer)
        cosines[name] = cosine(got, reference)
        float_ref = _grads_for(
            model, x, y, strategies={i: s.float_pipeline() for i in gemm})
        acc = np.zeros_like(reference)
        for k in range(n_bias_seeds):
            rng = RngState(seed).split(0xB1A5, k)
            acc += _grads_for(model, x, y, strategies=per_layer, rng=rng)
        mean = acc / n_bias_seeds
        biases[name] = float(np.linalg.norm(mean - float_ref) / max(np.linalg.norm(float_ref), 1e-12))
    report["cosine_vs_vanilla"] = cosines
    report["seed_averaged_bias"] = biases
    return report


def quant_error_study(seed: int = 0, trials: int = 100, rows: int = 16,
                      cols: int = 256, bits: int = 4, sigma: float = 1.4,
                      product_dims=(4, 16, 16, 16), block: int = 16) -> dict:
    """Paired-trial study of direct vs transformed quantization error on
    heavy-tailed (log-normal magnitude, random sign) tensors, for raw
    quantization and for the full input-gradient product. Emits histogram
    data of both domains for external plotting."""
    rng = np.random.default_rng(np.random.Philox(key=np.array([seed, 0xE44], dtype=np.uint64)))
    plan = HadamardPlan(block_size=block, axis=1,
                        basis_indices=tuple(range(block)))

    raw_wins = 0
    raw_mses = []
    for _ in range(trials):
        mag = rng.lognormal(0.0, sigma, size=(rows, cols))
        sign = rng.choice([-1.0, 1.0], size=(rows, cols))
        x = (mag * sign).astype(np.float32)
        t = Tensor(x)
        th = block_ht(t, plan)
        mse_raw = float(np.mean((dequant(quant_pseudo_stochastic(t, bits)).data - x) ** 2))
        mse_ht = float(np.mean((dequant(quant_pseudo_stochastic(th, bits)).data - th.data) ** 2))
        raw_wins += mse_ht < mse_raw
        raw_mses.append((mse_raw, mse_ht))

    B, L, I, O = product_dims
    prod_wins = 0
    prod_mses = []
    root = RngState(seed)
    for t_idx in range(trials):
        gy = Tensor((rng.lognormal(0.0, sigma, size=(B, L, O))
                     * rng.choice([-1.0, 1.0], size=(B, L, O))).astype(np.float32))
        x = Tensor(rng.standard_normal((B, L, I)).astype(np.float32))
        w = Tensor(rng.standard_normal((O, I)).astype(np.float32))
        ref = vanilla_backward(x, w, gy).grad_input.data
        hq = hq_grad_input(gy, w, bits, rng=root.split(t_idx, 0), block=block).data
        nv = naive_quant_backward(x, w, gy, bits, rng=root.split(t_idx, 1)).grad_input.data
        mse_hq = float(np.mean((hq - ref) ** 2))
        mse_nv = float(np.mean((nv - ref) ** 2))
        prod_wins += mse_hq < mse_nv
        prod_mses.append((mse_nv, mse_hq))

    # Histogram of one representative tensor in both domains.
    mag = rng.lognormal(0.0, sigma, size=(rows, cols))
    sign = rng.choice([-1.0, 1.0], size=(rows, cols))
    x = (mag * sign).astype(np.float32)
    xh = block_ht(Tensor(x), plan).data
    lim = float(max(np.abs(x).max(), np.abs(xh).max()))
    edges = np.linspace(-lim, lim, 65)
    hist_raw, _ = np.histogram(x, bins=edges)
    hist_ht, _ = np.histogram(xh, bins=edges)

    return {
        "bits": bits,
        "trials": trials,
        "raw_tensor": {
            "ht_win_fraction": raw_wins / trials,
            "mse_pairs": raw_mses,
        },
        "grad_input_product": {
            "ht_win_fraction": prod_wins / trials,
            "mse_pairs": prod_mses,
        },
        "histogram": {
            "bin_edges": [float(e) for e in edges],
            "value_domain": [int(c) for c in hist_raw],
            "transform_domain": [int(c) for c in hist_ht],
        },
    }
