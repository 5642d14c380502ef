"""End-to-end synthesis run: model-free DK, model-based reference, artifacts."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmark import exact_mu_bar, initial_controller, minimal_gamma, model_based_dk
from .dk import DminConfig, KminConfig, SynthesisTrace, dk_iterate
from .exceptions import GammaInfeasibleError, SynthesisAborted
from .game import RarlConfig
from .lti import PartitionedPlant
from .report import write_trace_svg
from .sim import LinearSimulator

logger = logging.getLogger(__name__)

ARTIFACTS = ("trace.csv", "trace.json", "mu_trace.svg", "summary.json")


@dataclass(frozen=True)
class SynthesisConfig:
    n_rounds: int = 5
    seed: int = 0
    kmin: KminConfig = field(default_factory=KminConfig)
    dmin: DminConfig = field(default_factory=DminConfig)
    rarl: RarlConfig = field(default_factory=RarlConfig)
    threads: int = 1
    reference: bool = True

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("number of rounds must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


def _write_artifacts(out: Path, trace: SynthesisTrace, summary: dict, references: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    trace.to_json(out / "trace.json")
    write_trace_svg(trace, out / "mu_trace.svg", references)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)


def run_synthesis(G: PartitionedPlant, cfg: SynthesisConfig, out_dir=None, K_init=None):
    """Run model-free DK on `G` and, if `out_dir` is given, write the artifacts.

    The model is used only on the harness side: for the initial controller
    (unless given), the exact upper bounds reported in the trace and the
    model-based reference.  Returns ``(summary, trace)``; an aborted run
    writes the partial trace and re-raises :class:`SynthesisAborted`.
    """
    K_init = initial_controller(G) if K_init is None else np.asarray(K_init, dtype=float)
    d0 = np.zeros(G.mv)
    summary = {
        "n_rounds": cfg.n_rounds,
        "seed": cfg.seed,
        "K_init": K_init.tolist(),
        "mu_bar_init": exact_mu_bar(G, K_init, d0),
    }
    references = {}
    if cfg.reference and cfg.n_rounds > 0:
        try:
            gamma_nom, _ = minimal_gamma(G, d0)
            ref = model_based_dk(G, cfg.n_rounds, cfg.dmin)
            references = {"model-based H-inf (D = I)": gamma_nom, "model-based DK": ref.mu_bar[-1]}
            summary.update(
                gamma_nominal_model_based=gamma_nom,
                mu_bar_model_based=ref.mu_bar[-1],
                mu_bar_model_based_rounds=ref.mu_bar,
                d_model_based=ref.d.tolist(),
            )
        except GammaInfeasibleError as exc:
            logger.warning("model-based reference failed: %s", exc)

    sim = LinearSimulator(G, seed=cfg.seed)
    t0 = time.perf_counter()
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        K, D, trace = dk_iterate(
            K_init, cfg.n_rounds, sim, cfg.kmin, cfg.dmin, cfg.rarl, seed=cfg.seed,
            monitor=lambda K_, d_: exact_mu_bar(G, K_, d_), executor=executor,
        )
    except SynthesisAborted as exc:
        summary.update(aborted=True, message=str(exc), k_updates=exc.trace.k_updates if exc.trace else 0)
        if out_dir is not None:
            _write_artifacts(Path(out_dir), exc.trace or SynthesisTrace(), summary, references)
        raise
    finally:
        if executor is not None:
            executor.shutdown()
    elapsed = time.perf_counter() - t0
    if cfg.n_rounds > 0:
        mu_mf = exact_mu_bar(G, K, D.d)
        summary.update(
            K_final=K.tolist(),
            d_final=D.d.tolist(),
            mu_bar_model_free=mu_mf,
            k_updates=trace.k_updates,
            elapsed_s=elapsed,
        )
        if "mu_bar_model_based" in summary:
            summary["ratio"] = mu_mf / summary["mu_bar_model_based"]
    if out_dir is not None:
        _write_artifacts(Path(out_dir), trace, summary, references)
    return summary, trace


def default_out_dir(cli_value=None) -> Path:
    """``MFDK_OUT_DIR`` overrides the command-line value; fallback ``./mfdk_out``."""
    env = os.environ.get("MFDK_OUT_DIR")
    return Path(env or cli_value or "mfdk_out")
